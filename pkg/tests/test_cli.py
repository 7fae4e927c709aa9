import re

import numpy as np
import pytest

from vdcnn import cli, ops
from vdcnn.text import VOCAB


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "--n", "160", "--length", "64", "--seed", "0"]) == 0
    return out


def train_config(tmp_path, corpus, extra=""):
    return write_config(tmp_path, f"""
depth=9
width_multiplier=1/16
seq_len=64
fc_hidden=32
batch_size=32
max_epochs=2
train_data={corpus / 'train.csv'}
test_data={corpus / 'test.csv'}
output_dir={tmp_path / 'out'}
{extra}
""")


# -- encode ---------------------------------------------------------------------


def test_encode_padding(capsys):
    assert run(capsys, "encode", "--text", "", "--s", "4")[1] == "0 0 0 0\n"


def test_encode_lowercases(capsys):
    ids = [VOCAB.id(c) for c in "hi!"] + [0, 0]
    assert run(capsys, "encode", "--text", "Hi!", "--s", "5")[1].split() == [str(i) for i in ids]


def test_encode_emoji_is_unknown(capsys):
    assert run(capsys, "encode", "--text", "a\U0001F600", "--s", "3")[1].split() == ["1", "68", "0"]


# -- inspect --------------------------------------------------------------------


def test_inspect_depth_blocks(tmp_path, capsys):
    code, out, _ = run(capsys, "inspect", "--config", write_config(tmp_path, "depth_blocks=2,2,2,2\n"))
    assert code == 0
    assert out.splitlines()[-1] == "depth=17"


def test_inspect_depth_29_and_echoes_defaults(tmp_path, capsys):
    code, out, _ = run(capsys, "inspect", "--config", write_config(tmp_path, "depth=29\n"))
    assert code == 0 and out.splitlines()[-1] == "depth=29"
    for line in ("# lr=0.01", "# momentum=0.9", "# batch_size=128", "# seq_len=1014", "# depth_blocks=5,5,2,2"):
        assert line in out.splitlines()


def test_inspect_pool_boundaries_at_1024(tmp_path, capsys):
    _, out, _ = run(capsys, "inspect", "--config", write_config(tmp_path, "depth=9\nseq_len=1024\n"))
    pools = [line.split()[1] for line in out.splitlines() if line.startswith("pool")]
    assert pools == ["64x512", "128x256", "256x128"]


def _conv_weight_counts(out):
    rows = {}
    for line in out.splitlines():
        parts = line.split()
        if len(parts) == 3 and not line.startswith("#"):
            rows[parts[0]] = int(parts[2])
    return rows


def test_inspect_width_quarter_scales_conv_params(tmp_path, capsys):
    _, full, _ = run(capsys, "inspect", "--config", write_config(tmp_path, "depth=9\n", "a"))
    _, quarter, _ = run(capsys, "inspect", "--config", write_config(tmp_path, "depth=9\nwidth_multiplier=1/4\n", "b"))
    a, b = _conv_weight_counts(full), _conv_weight_counts(quarter)
    blocks = [k for k in a if k.startswith("level")]
    assert len(blocks) == 4
    for level, name in enumerate(blocks):
        width = 64 << level
        # block rows hold two bias-free convs plus two batch norms (gamma, beta)
        assert (b[name] - width) * 16 == a[name] - 4 * width
    # the first conv reads the unscaled 16-wide embedding: weights scale by 1/4 only
    assert (b["conv0"] - 16) * 4 == a["conv0"] - 64


def test_inspect_invalid_spec(tmp_path, capsys):
    code, _, err = run(capsys, "inspect", "--config", write_config(tmp_path, "seq_len=20\n"))
    assert code == 2 and "minimal legal length" in err


@pytest.mark.parametrize("text", ["bogus=1\n", "depth=9\ndepth_blocks=1,1,1,1\n", "depth=10\n",
                                  "lr=abc\n", "seed=1\nseed=2\n", "precision=16\n", "no equals sign\n"])
def test_config_errors_exit_2(tmp_path, capsys, text):
    assert run(capsys, "inspect", "--config", write_config(tmp_path, text))[0] == 2


def test_missing_config_exits_2(tmp_path, capsys):
    assert run(capsys, "train", "--config", str(tmp_path / "nope"))[0] == 2


# -- train / eval -----------------------------------------------------------------


def test_train_then_eval(tmp_path, capsys, corpus):
    code, out, _ = run(capsys, "train", "--config", train_config(tmp_path, corpus))
    assert code == 0
    run_dir = tmp_path / "out"
    metrics = (run_dir / "metrics.csv").read_text().splitlines()
    assert metrics[0] == cli.METRICS_HEADER and len(metrics) == 3
    assert out.splitlines()[0] == cli.METRICS_HEADER + ",seconds"
    assert "max_epochs=2" in (run_dir / "config.txt").read_text()

    code, out, _ = run(capsys, "eval", "--checkpoint", str(run_dir / "best.ckpt"), "--data", str(corpus / "test.csv"))
    assert code == 0
    assert re.fullmatch(r"error_pct=\d+\.\d\d\n", out)
    best = min(float(line.split(",")[3]) for line in metrics[1:])
    assert float(out.split("=")[1]) == pytest.approx(best, abs=0.005)


def test_train_missing_dataset_exits_3(tmp_path, capsys, corpus):
    cfg = train_config(tmp_path, corpus)
    text = open(cfg).read().replace("train.csv", "missing.csv")
    assert run(capsys, "train", "--config", write_config(tmp_path, text, "m.cfg"))[0] == 3


def test_train_divergence_exits_4(tmp_path, capsys, corpus):
    cfg = train_config(tmp_path, corpus, "lr=1e12\nmomentum=0\n")
    with np.errstate(all="ignore"):
        assert run(capsys, "train", "--config", cfg)[0] == 4


def test_seed_env_override(tmp_path, capsys, corpus, monkeypatch):
    monkeypatch.setenv("VDCNN_SEED", "42")
    assert run(capsys, "train", "--config", train_config(tmp_path, corpus))[0] == 0
    assert "seed=42" in (tmp_path / "out" / "config.txt").read_text().splitlines()


def test_eval_corrupt_checkpoint_exits_2(tmp_path, capsys, corpus):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"VDCN\x01\x00")
    assert run(capsys, "eval", "--checkpoint", str(bad), "--data", str(corpus / "test.csv"))[0] == 2
    bad.write_bytes(b"garbage")
    assert run(capsys, "eval", "--checkpoint", str(bad), "--data", str(corpus / "test.csv"))[0] == 2


def test_eval_class_mismatch_exits_2(tmp_path, capsys, corpus):
    run(capsys, "train", "--config", train_config(tmp_path, corpus))
    data = tmp_path / "five.csv"
    data.write_text('"5","abc"\n"1","def"\n')
    assert run(capsys, "eval", "--checkpoint", str(tmp_path / "out" / "best.ckpt"), "--data", str(data))[0] == 2


def test_eval_missing_data_exits_3(tmp_path, capsys, corpus):
    run(capsys, "train", "--config", train_config(tmp_path, corpus))
    assert run(capsys, "eval", "--checkpoint", str(tmp_path / "out" / "best.ckpt"),
               "--data", str(tmp_path / "none.csv"))[0] == 3


# -- gradcheck ----------------------------------------------------------------------


def test_gradcheck_fault_injection_names_temporal_conv(capsys, monkeypatch):
    real = ops._conv_backward

    def wrong(*args):
        dx, dW, db = real(*args)
        return dx * 1.01, dW, db

    monkeypatch.setattr(ops, "_conv_backward", wrong)
    code, out, _ = run(capsys, "gradcheck")
    assert code == 1
    failed = out.splitlines()[-1]
    assert failed.startswith("failed:") and "temporal_conv" in failed.split()


@pytest.mark.slow
def test_gradcheck_f32_threshold(capsys):
    code, out, _ = run(capsys, "gradcheck", "--f32")
    assert code == 0
    assert "threshold=0.001 precision=32" in out
    assert all(line.endswith(" ok") for line in out.splitlines()[:-2])  # every operator gated
    assert out.splitlines()[-2].startswith("full_model")
