"""Independent reference implementations used by the unit and acceptance tests.

These deliberately re-derive results through the most naive route available
(per-pixel loops, pairwise counting, explicit matrix inverses) so they share
no code with the fast paths they check.
"""

import numpy as np

from superad.model import AdaConvConfig, adaconv_select, window_indices


def brute_force_adaconv(f: np.ndarray, mhat: np.ndarray, cfg: AdaConvConfig, kernel: np.ndarray):
    """Per-pixel window enumeration + selection + weighted accumulation."""
    h, w = mhat.shape
    c = f.shape[1]
    kflat = kernel.reshape(-1)
    out = np.zeros((h * w, c))
    for x in range(h):
        for y in range(w):
            window = window_indices(x, y, cfg.n, h, w)
            chosen = adaconv_select(mhat, window, cfg.k)
            for b in range(c):
                acc = 0.0
                for t, (i, j) in enumerate(chosen):
                    acc += f[i * w + j, b] * kflat[t]
                out[x * w + y, b] = acc
    return out


def mann_whitney(anomaly_scores: np.ndarray, background_scores: np.ndarray) -> float:
    """Fraction of (anomaly, background) pairs ordered correctly, ties half."""
    a = np.asarray(anomaly_scores, dtype=np.float64)[:, None]
    b = np.asarray(background_scores, dtype=np.float64)[None, :]
    wins = (a > b).sum() + 0.5 * (a == b).sum()
    return float(wins) / (a.size * b.size)
