"""Independent slow reference implementations used as test oracles."""
import math
import statistics

import numpy as np


def literal_score_mask(raw, lam, tau):
    """Per-pixel reimplementation: pad symmetrically, smooth with [1,2,1]^2/16,
    then ``|v| + lam * cos(smoothed, v) >= tau`` (zero vectors never fire)."""
    h, w, _ = raw.shape

    def sym(i, n):
        return -i - 1 if i < 0 else (2 * n - 1 - i if i >= n else i)

    pad = [[raw[sym(i, h)][sym(j, w)] for j in range(-1, w + 1)] for i in range(-1, h + 1)]
    wts = [1, 2, 1]
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            sx = sy = 0.0
            for a in range(3):
                for b in range(3):
                    v = pad[i + a][j + b]
                    sx += wts[a] * wts[b] * v[0] / 16
                    sy += wts[a] * wts[b] * v[1] / 16
            rx, ry = raw[i, j]
            nr = math.hypot(rx, ry)
            ns = math.hypot(sx, sy)
            if nr == 0:
                continue
            cos = (sx * rx + sy * ry) / (ns * nr) if (nr >= 1e-8 and ns >= 1e-8) else 0.0
            out[i, j] = nr + lam * cos >= tau
    return out


def literal_hampel(xs, half=2, n_sigmas=3.0, eps=1e-9):
    """Point-by-point Hampel identifier over truncated windows in plain Python."""
    out = []
    for i, v in enumerate(xs):
        win = xs[max(0, i - half):i + half + 1]
        med = statistics.median(win)
        mad = statistics.median([abs(w - med) for w in win])
        dev = abs(v - med)
        out.append(med if dev > n_sigmas * 1.4826 * mad and dev > eps else v)
    return out


def count_confusion(preds, labels):
    """Confusion counts by walking the pairs once."""
    c = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
    for p, y in zip(preds, labels):
        c[("t" if p == y else "f") + ("p" if p else "n")] += 1
    return c
