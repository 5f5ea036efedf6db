"""Randomized rounding of relaxed solutions.

Each item samples one owner, or none, using its relaxed row as a
probability vector.  The uniform for item ``i`` is the ``i``-th output of a
Philox4x64 stream keyed by ``(seed, repeat)``; being counter based, any item
range can be regenerated on its own, so the result depends only on
``(X row, seed, item_id)`` and not on how the items are partitioned.
"""
from __future__ import annotations

import csv
import logging

import numpy as np

from .errors import RowSumExceedsTolerance
from .metrics import constraint_mapds
from .oracle import assignment_matrix

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-6
NONE = -1
_WORDS_PER_BLOCK = 4


def item_uniforms(seed, lo, hi, stream=0):
    """Uniforms in [0, 1) for items ``lo..hi-1`` of stream ``(seed, stream)``."""
    bg = np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)])
    bg.advance(lo // _WORDS_PER_BLOCK)
    skip = lo % _WORDS_PER_BLOCK
    raw = bg.random_raw(hi - lo + skip)[skip:]
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _prepare(X, tol):
    X = np.maximum(np.asarray(X, dtype=float), 0.0)
    sums = X.sum(axis=1)
    bad = np.flatnonzero(sums > 1.0 + tol)
    if bad.size:
        raise RowSumExceedsTolerance(
            f"{bad.size} rows sum above 1+{tol:g} (first item {bad[0]}, sum {sums[bad[0]]:.9g})"
        )
    over = sums > 1.0
    X[over] /= sums[over, None]
    return X


def _sample(P, u):
    """Owner with cumulative probability just above ``u``; -1 past the row total."""
    cum = np.cumsum(P, axis=1)
    owner = np.sum(cum <= u[:, None], axis=1)
    return np.where(owner >= P.shape[1], NONE, owner)


def round_solution(X, seed, repeats=1, spec=None, tol=ROW_SUM_TOL, lo=0):
    """Sample a binary assignment from the relaxed solution ``X``.

    Parameters
    ----------
    X : ndarray, shape (I, J)
        Relaxed solution; rows are treated as owner probabilities.
    seed : int
    repeats : int
        Number of independent samples.  With more than one, the sample
        with the lowest total constraint MAPD is kept (needs ``spec``).
    lo : int
        Global id of the first row, for rounding a block of items.

    Returns
    -------
    ndarray of int, shape (I,)
        Owner index per item, ``-1`` for none.
    """
    P = _prepare(X, tol)
    if repeats < 1:
        raise ValueError("repeats must be positive")
    if repeats > 1 and spec is None:
        raise ValueError("choosing among repeats needs the problem spec")
    hi = lo + P.shape[0]
    best, best_score = None, np.inf
    for r in range(repeats):
        owner = _sample(P, item_uniforms(seed, lo, hi, stream=r))
        if repeats == 1:
            return owner
        ineq, eq = constraint_mapds(spec, assignment_matrix(owner, P.shape[1]))
        score = ineq + eq
        log.debug("repeat %d: ineq MAPD %.3g, eq MAPD %.3g", r, ineq, eq)
        if score < best_score:
            best, best_score = owner, score
    return best


def write_assignment(path, owner):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "owner"])
        w.writerows(enumerate(int(o) for o in owner))


def read_assignment(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    owner = np.full(len(rows), NONE, dtype=int)
    for r in rows:
        owner[int(r["item_id"])] = int(r["owner"])
    return owner
