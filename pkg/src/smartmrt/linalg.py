"""Weighted least squares by column-pivoted QR with explicit rank checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg as sla

from .errors import NumericalError, RankDeficientError

__all__ = ["WlsSolution", "wls", "cluster_sum"]


@dataclass(frozen=True)
class WlsSolution:
    coef: np.ndarray
    rank: int
    cond: float          # condition number of the weighted normal matrix
    tol: float


def wls(X: np.ndarray, y: np.ndarray, w: np.ndarray,
        names: Sequence[str] | None = None) -> WlsSolution:
    """Minimize ``sum w * (y - X b)**2``.

    The weighted design ``sqrt(w) X`` is factored by QR with column pivoting.
    A column is declared dependent when its diagonal entry of ``R`` falls
    below ``eps * max(n, k) * sigma_max``.

    Parameters
    ----------
    X : ndarray, shape (n, k)
    y : ndarray, shape (n,)
    w : ndarray, shape (n,)
        Nonnegative row weights.
    names : sequence of str, optional
        Column labels used in rank-deficiency messages.

    Raises
    ------
    RankDeficientError
        With ``null_terms`` listing the columns that load on the null space.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, k = X.shape
    if k == 0:
        return WlsSolution(np.zeros(0), 0, 1.0, 0.0)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise NumericalError("weights must be finite and nonnegative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NumericalError("design or response contains non-finite values")
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    if n < k:
        raise RankDeficientError(f"{n} rows for {k} columns", names or [])
    Q, R, piv = sla.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    smax = np.linalg.norm(R, 2)
    tol = np.finfo(float).eps * max(n, k) * smax
    rank = int(np.sum(diag > tol))
    if rank < k or smax == 0:
        _, _, vt = np.linalg.svd(R)
        null = vt[min(rank, k - 1):]
        loads = np.zeros(k)
        loads[piv] = np.abs(null).max(axis=0)
        labels = list(names) if names is not None else [f"x{j}" for j in range(k)]
        involved = [labels[j] for j in np.flatnonzero(loads > 1e-8)]
        raise RankDeficientError(
            f"weighted design has rank {rank} < {k}; null space involves: "
            f"{', '.join(involved)}",
            involved)
    coef = np.empty(k)
    coef[piv] = sla.solve_triangular(R, Q.T @ yw)
    sv = np.linalg.svd(R, compute_uv=False)
    cond = float((sv[0] / sv[-1]) ** 2)
    return WlsSolution(coef, rank, cond, float(tol))


def cluster_sum(values: np.ndarray, pid: np.ndarray, n: int) -> np.ndarray:
    """Sum row contributions within each person.

    ``pid`` must be sorted, as it is for all row containers in this package.
    """
    values = np.asarray(values, dtype=float)
    out = np.zeros((n,) + values.shape[1:])
    if len(pid) == 0:
        return out
    starts = np.r_[0, np.flatnonzero(np.diff(pid)) + 1]
    out[pid[starts]] = np.add.reduceat(values, starts, axis=0)
    return out
