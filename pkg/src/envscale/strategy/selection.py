"""Sliding-window perplexity and score-weighted k-center greedy selection."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np


def sliding_window_ppl(token_nlls: Sequence[float], window: int = 512) -> float:
    """Largest ``exp(mean NLL)`` over all contiguous windows; short sequences form a single window."""
    x = np.asarray(token_nlls, dtype=float)
    if x.size == 0:
        raise ValueError("empty sequence")
    if window < 1:
        raise ValueError("window must be >= 1")
    w = min(window, x.size)
    # prefix sums locate the best windows cheaply; the few candidates near the
    # maximum are then summed exactly so the result does not depend on rounding
    c = np.concatenate(([0.0], np.cumsum(x)))
    sums = c[w:] - c[:-w]
    tol = 1e-9 * (1.0 + float(np.abs(x).sum()))
    cands = np.flatnonzero(sums >= sums.max() - tol)
    best = max(math.fsum(x[i : i + w].tolist()) for i in cands)
    return math.exp(best / w)


def kcg_select(points, ppl_scores: Sequence[float], k: int) -> list[int]:
    """Greedy selection maximizing ``score * distance to the nearest selected point``.

    The first pick is the highest score. Ties go to the lowest index.
    """
    X = np.asarray(points, dtype=float)
    s = np.asarray(ppl_scores, dtype=float)
    n = len(X)
    if X.ndim != 2 or len(s) != n:
        raise ValueError("points must be (n, d) with one score each")
    if not 0 <= k <= n:
        raise ValueError("k must be in [0, n]")
    if n and s.min() <= 0:
        raise ValueError("scores must be positive")
    if k == 0:
        return []
    first = int(np.argmax(s))
    chosen = [first]
    dist = np.linalg.norm(X - X[first], axis=1)
    for _ in range(k - 1):
        gain = s * dist
        gain[chosen] = -np.inf
        nxt = int(np.argmax(gain))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(X - X[nxt], axis=1))
    return chosen
