"""Character vocabulary, fixed-length encoding and CSV corpus loading."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

# 66 printable symbols; ids 1..66 follow this order
PRINTABLE = "abcdefghijklmnopqrstuvwxyz0123456789-,;.!?:'\"/|_@#$%^&*~+=<>()[]{}"
UNKNOWN_GLYPH = "�"


class DataError(ValueError):
    """A corpus file could not be parsed."""


class Vocabulary:
    """pad, the printable symbols, space, unknown; 69 tokens in total."""

    def __init__(self, printable: str = PRINTABLE):
        if len(set(printable)) != len(printable):
            raise ValueError("printable characters must be unique")
        if " " in printable:
            raise ValueError("space has its own token")
        self.tokens = ["<pad>", *printable, " ", "<unk>"]
        self.pad_id = 0
        self.space_id = len(printable) + 1
        self.unk_id = len(printable) + 2
        self._index = {c: i + 1 for i, c in enumerate(printable)}
        self._index[" "] = self.space_id
        # fast path for code points below 128
        self._ascii = np.full(128, self.unk_id, dtype=np.int64)
        for c, i in self._index.items():
            if ord(c) < 128:
                self._ascii[ord(c)] = i

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, ch: str) -> bool:
        return ch in self._index

    def id(self, ch: str) -> int:
        return self._index.get(ch, self.unk_id)

    def encode(self, text: Union[str, bytes], s: int) -> np.ndarray:
        if s < 1:
            raise ValueError(f"target length must be >= 1, got {s}")
        if isinstance(text, (bytes, bytearray)):
            # invalid UTF-8 bytes become lone surrogates, one per byte, hence unknown
            text = bytes(text).decode("utf-8", errors="surrogateescape")
        text = text.lower()[:s]
        ids = np.full(s, self.pad_id, dtype=np.int64)
        if text:
            cps = np.frombuffer(text.encode("utf-32-le", errors="surrogatepass"), dtype="<u4")
            ascii_ = cps < 128
            ids[: len(cps)] = np.where(ascii_, self._ascii[np.where(ascii_, cps, 0)], self.unk_id)
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i == self.pad_id:
                continue
            if i == self.unk_id:
                out.append(UNKNOWN_GLYPH)
            elif 0 < i < self.unk_id:
                out.append(self.tokens[i])
            else:
                raise IndexError(f"id {i} is not in the vocabulary")
        return "".join(out)


VOCAB = Vocabulary()


def encode(text: Union[str, bytes], s: int, vocab: Vocabulary = VOCAB) -> np.ndarray:
    """Lower-case, map characters to ids, truncate to ``s`` and right-pad with 0."""
    return vocab.encode(text, s)


def decode(ids: Sequence[int], vocab: Vocabulary = VOCAB) -> str:
    return vocab.decode(ids)


@dataclass(frozen=True)
class Sample:
    label: int
    text: str


@dataclass
class Dataset:
    samples: list
    n_classes: int
    name: str = ""

    def __post_init__(self):
        if not self.samples:
            raise DataError(f"dataset {self.name!r} is empty")
        for i, smp in enumerate(self.samples):
            if not 0 <= smp.label < self.n_classes:
                raise DataError(f"sample {i}: label {smp.label} outside [0, {self.n_classes})")
        self._cache: dict = {}

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([smp.label for smp in self.samples], dtype=np.int64)

    def encoded(self, s: int, vocab: Vocabulary = VOCAB) -> np.ndarray:
        """(n, s) id matrix, computed once per length."""
        key = (s, id(vocab))
        if key not in self._cache:
            mat = np.empty((len(self.samples), s), dtype=np.int64)
            for i, smp in enumerate(self.samples):
                mat[i] = vocab.encode(smp.text, s)
            self._cache[key] = mat
        return self._cache[key]


def _parse_rows(reader, n_classes: int) -> list:
    samples = []
    row_no = 0
    while True:
        row_no += 1
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise DataError(f"row {row_no}: malformed quoting ({exc})") from None
        if not row:
            row_no -= 1
            continue
        if len(row) < 2:
            raise DataError(f"row {row_no}: expected a label and at least one text field")
        try:
            label = int(row[0].strip())
        except ValueError:
            raise DataError(f"row {row_no}: class index {row[0]!r} is not an integer") from None
        if n_classes is not None and not 1 <= label <= n_classes:
            raise DataError(f"row {row_no}: class index {label} outside [1, {n_classes}]")
        if label < 1:
            raise DataError(f"row {row_no}: class index {label} must be >= 1")
        samples.append(Sample(label - 1, " ".join(row[1:])))
    return samples


def load_csv(path: Union[str, Path], n_classes: int | None, name: str | None = None) -> Dataset:
    """Read a headerless ``"class","title","body"...`` file.

    The first field is a 1-based class index; the remaining fields are joined
    with single spaces. Pass ``n_classes=None`` to take the largest index seen.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8", errors="surrogateescape") as fh:
        samples = _parse_rows(csv.reader(fh, strict=True), n_classes)
    if not samples:
        raise DataError(f"{path}: no rows")
    if n_classes is None:
        n_classes = max(2, max(smp.label for smp in samples) + 1)
    return Dataset(samples, n_classes, name or path.stem)


def write_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_ALL, lineterminator="\n")
        for smp in dataset.samples:
            w.writerow([smp.label + 1, smp.text])


def batches(
    dataset: Dataset,
    m: int,
    seed: int = 0,
    shuffle: bool = True,
    s: int = 1014,
    epoch: int = 0,
    vocab: Vocabulary = VOCAB,
) -> Iterator[tuple]:
    """Yield ``(ids[m, s], labels[m])``; the last batch may be smaller.

    The shuffle order depends only on ``(seed, epoch)``.
    """
    if m < 1:
        raise ValueError("batch size must be >= 1")
    if len(dataset) == 0:
        raise DataError("cannot batch an empty dataset")
    ids = dataset.encoded(s, vocab)
    labels = dataset.labels
    order = np.random.default_rng([seed, epoch]).permutation(len(dataset)) if shuffle else np.arange(len(dataset))
    for start in range(0, len(order), m):
        sel = order[start:start + m]
        yield ids[sel], labels[sel]
