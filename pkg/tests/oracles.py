"""Brute-force reference implementations written with plain loops.

They share no code with the package and exist only to cross-check it.
"""

import math


def conv1d(x, kernels, bias, stride, pad):
    """x[C_in][s], kernels[C_out][C_in][w] -> out[C_out][s_out], zero padding."""
    c_in, s = len(x), len(x[0])
    w = len(kernels[0][0])
    s_out = (s + 2 * pad - w) // stride + 1
    out = []
    for o in range(len(kernels)):
        row = []
        for t in range(s_out):
            acc = 0.0 if bias is None else float(bias[o])
            for c in range(c_in):
                for k in range(w):
                    j = t * stride + k - pad
                    if 0 <= j < s:
                        acc += kernels[o][c][k] * x[c][j]
            row.append(acc)
        out.append(row)
    return out


def maxpool_positions(row, kernel=3, stride=2, pad=1):
    """Index of the selected (first maximal) element of each window."""
    s = len(row)
    picks = []
    t = 0
    while t * stride - pad + kernel <= s + pad:
        best = None
        for k in range(kernel):
            j = t * stride + k - pad
            if 0 <= j < s and (best is None or row[j] > row[best]):
                best = j
        picks.append(best)
        t += 1
    return picks


def kmax_positions(row, k):
    """Positions of the k largest values, earliest first among ties, in original order."""
    chosen = []
    for _ in range(k):
        best = None
        for j, v in enumerate(row):
            if j in chosen:
                continue
            if best is None or v > row[best]:
                best = j
        chosen.append(best)
    return sorted(chosen)


def softmax_ce(logits, label):
    mx = max(logits)
    return mx + math.log(sum(math.exp(v - mx) for v in logits)) - logits[label]
