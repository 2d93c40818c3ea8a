"""SMART and MRT weights, regime-specific centering and the auxiliary mean."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignSpec, DtrRegime, Trajectory, consistency_matrix, z2_probability
from .errors import PositivityError, ValidationError

__all__ = [
    "WeightBundle",
    "smart_weight",
    "smart_weights",
    "mrt_weight",
    "compute_mu",
    "compute_psi",
    "centering_residual",
]


def smart_weights(z1, r, z2, regimes, design: DesignSpec) -> np.ndarray:
    """SMART weights for every person and regime.

    Returns
    -------
    ndarray, shape (n, n_regimes)
        ``1{consistent} / (P(Z1) P(Z2 | R, Z1))``; zero where inconsistent.
    """
    z1 = np.asarray(z1)
    p1 = np.where(z1 == 1, design.p_z1, 1.0 - design.p_z1)
    p2 = z2_probability(design, z1, r, z2)
    denom = p1 * p2
    consistent = consistency_matrix(z1, r, z2, design, regimes)
    if np.any(consistent & (denom[:, None] <= 0)):
        raise PositivityError("zero probability for an observed SMART assignment")
    with np.errstate(divide="ignore"):
        inv = np.where(denom > 0, 1.0 / np.where(denom > 0, denom, 1.0), 0.0)
    return consistent * inv[:, None]


def smart_weight(traj: Trajectory, regime: DtrRegime, design: DesignSpec) -> float:
    """SMART weight of one person for one regime (0 when inconsistent).

    Examples
    --------
    A consistent non-responder with both randomizations at 1/2 gets 4; a
    responder gets 2.
    """
    return float(smart_weights([traj.z1], [traj.r], [traj.z2], [regime], design)[0, 0])


def mrt_weight(a, p, rho: float, eligible=None):
    """MRT weight and centered treatment indicator.

    Parameters
    ----------
    a, p : array_like
        Observed assignment (NaN allowed when ineligible) and P(A=1 | H).
    rho : float
        Pseudo-centering probability.
    eligible : array_like of bool, optional
        Defaults to "all eligible".

    Returns
    -------
    w_m : ndarray
        ``rho^a (1-rho)^(1-a) / p(a)`` on eligible rows and 1 elsewhere.
    a_centered : ndarray
        ``a - rho`` on eligible rows and 0 elsewhere (``a`` coded as rho).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    a, p = np.broadcast_arrays(a, p)
    elig = np.ones(a.shape, bool) if eligible is None else np.broadcast_to(
        np.asarray(eligible).astype(bool), a.shape)
    pe = p[elig]
    if np.any(np.isnan(pe)):
        raise ValidationError("p_t missing on an eligible row")
    if np.any(~((pe > 0) & (pe < 1))):
        raise PositivityError("randomization probability outside (0, 1) on an eligible row")
    ae = a[elig]
    if np.any(~np.isin(ae, (0.0, 1.0))):
        raise ValidationError("treatment must be 0 or 1 on eligible rows")
    w = np.ones(a.shape)
    w[elig] = np.where(ae == 1, rho / pe, (1.0 - rho) / (1.0 - pe))
    ac = np.zeros(a.shape)
    ac[elig] = ae - rho
    return w, ac


def compute_mu(group, g, w_s, n_groups: int | None = None) -> np.ndarray:
    """Weighted mean of ``g`` within each centering group.

    Parameters
    ----------
    group : ndarray of int, shape (n_rows,)
        Centering group per replicated row (a regime, or regime by time).
    g : ndarray, shape (n_rows, r)
    w_s : ndarray, shape (n_rows,)
    n_groups : int, optional

    Raises
    ------
    ValidationError
        A group has zero total weight.
    """
    group = np.asarray(group)
    g = np.asarray(g, dtype=float).reshape(len(group), -1)
    n_groups = int(group.max()) + 1 if n_groups is None else n_groups
    tot = np.bincount(group, weights=w_s, minlength=n_groups)
    if np.any(tot <= 0):
        raise ValidationError(
            f"degenerate design: centering group(s) {np.flatnonzero(tot <= 0).tolist()} "
            "have zero total weight")
    num = np.zeros((n_groups, g.shape[1]))
    np.add.at(num, group, w_s[:, None] * g)
    return num / tot[:, None]


def compute_psi(s, w_s, rho: float) -> np.ndarray:
    """Weighted grand mean of the auxiliary moderators."""
    s = np.asarray(s, dtype=float).reshape(len(w_s), -1)
    wt = w_s * rho * (1.0 - rho)
    tot = wt.sum()
    if tot <= 0:
        raise ValidationError("zero total weight for the auxiliary mean")
    return (wt[:, None] * s).sum(axis=0) / tot


def centering_residual(group, g, mu, weight) -> np.ndarray:
    """Per-group ``sum weight * (g - mu[group])``; should vanish."""
    group = np.asarray(group)
    g = np.asarray(g, dtype=float).reshape(len(group), -1)
    out = np.zeros_like(mu)
    np.add.at(out, group, weight[:, None] * (g - mu[group]))
    return out


@dataclass(frozen=True)
class WeightBundle:
    """Weights and centering constants attached to a set of replicated rows."""

    w_s: np.ndarray
    w_m: np.ndarray
    a_centered: np.ndarray
    mu: np.ndarray
    psi: np.ndarray
    group: np.ndarray
