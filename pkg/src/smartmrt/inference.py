"""Cluster-robust sandwich covariance and contrasts.

Individuals are the independent units: each person's row contributions to
an estimating function are summed before taking outer products.  All
covariances are built from per-person influence values ``IF_i`` so that
``cov = sum_i IF_i IF_i' / n**2``; this is algebraically the same as
``B^{-1} M B^{-T} / n`` with ``B`` the Jacobian and ``M`` the meat.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .design import DtrRegime, enumerate_regimes
from .errors import ContrastError, NumericalError
from .linalg import cluster_sum
from .model import FeatureContext, evaluate_block

__all__ = [
    "SandwichParts",
    "Contrast",
    "step1_influence",
    "gamma_influence",
    "sandwich_step1",
    "sandwich_gamma",
    "wls_influence",
    "contrast_vector",
    "make_contrast",
    "Z95",
]

Z95 = 1.959964


@dataclass(frozen=True, eq=False)
class SandwichParts:
    """Building blocks of the two-step sandwich.

    ``bread1`` and ``meat1`` are the per-person averaged Jacobian and
    score outer product of the full stacked Step-1 system (centering
    equations first when ``bread="stacked"``).  ``omega`` is ``-bread1``.
    ``bread2`` is ``mean_i sum w_s m m'`` and ``q_mat`` the derivative of the
    Step-2 score with respect to the Step-1 parameters.
    """

    bread1: np.ndarray
    meat1: np.ndarray
    omega: np.ndarray
    bread2: np.ndarray | None = None
    meat2: np.ndarray | None = None
    q_mat: np.ndarray | None = None
    mode: str = "stacked"


def _inv(mat: np.ndarray, what: str) -> np.ndarray:
    try:
        cond = np.linalg.cond(mat)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(f"singular {what}") from exc
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericalError(f"singular {what} (condition number {cond:.3g})")
    return np.linalg.inv(mat)


def _group_sums(values: np.ndarray, key: np.ndarray, size: int) -> np.ndarray:
    out = np.empty((size, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(key, weights=values[:, j], minlength=size)
    return out


def step1_influence(rows, fit, bread: str = "stacked"):
    """Per-person influence values of the Step-1 parameters.

    Parameters
    ----------
    rows : ReplicatedRows
    fit : Step1Fit
    bread : {"stacked", "plain", "reduced"}

    Returns
    -------
    infl : ndarray, shape (n, k)
        Influence of ``theta = [alpha0, beta, alpha1, eta]``.
    parts : SandwichParts
    """
    n = rows.n
    X, w, e = fit.X, fit.weight, fit.resid
    k = X.shape[1]
    u_theta = cluster_sum((w * e)[:, None] * X, rows.pid, n)
    j_tt = -(X.T @ (w[:, None] * X)) / n
    if bread == "reduced":
        b = fit.blocks
        bh = np.r_[np.arange(b["beta"].start, b["beta"].stop),
                   np.arange(b["eta"].start, b["eta"].stop)]
        infl = -u_theta @ _inv(j_tt, "Step-1 bread").T
        sub = j_tt[np.ix_(bh, bh)]
        infl[:, bh] = -u_theta[:, bh] @ _inv(sub, "reduced Step-1 bread").T
        meat = u_theta.T @ u_theta / n
        return infl, SandwichParts(j_tt, meat, -j_tt, mode=bread)
    if bread == "plain":
        infl = -u_theta @ _inv(j_tt, "Step-1 bread").T
        meat = u_theta.T @ u_theta / n
        return infl, SandwichParts(j_tt, meat, -j_tt, mode=bread)
    if bread != "stacked":
        raise ValueError(f"unknown bread {bread!r}")

    blocks = fit.blocks
    a0 = fit.alpha0
    a1 = fit.alpha1
    r = len(a0)
    l = len(a1)
    G = fit.n_groups
    corr = np.zeros((n, k))
    parts_u = []
    jac_rows = []
    if r:
        gc = rows.g - fit.mu[fit.group]
        key = rows.pid * G + fit.group
        u_mu = _group_sums(rows.w_s[:, None] * gc, key, n * G).reshape(n, G * r)
        wtot = np.bincount(fit.group, weights=rows.w_s, minlength=G) / n
        if_mu = (u_mu.reshape(n, G, r) / wtot[None, :, None])
        # d U_theta / d mu_g = -E_alpha0 * sum_g(w e) + (sum_g w x) alpha0'
        s_we = np.bincount(fit.group, weights=w * e, minlength=G) / n
        s_wx = _group_sums((w[:, None] * X), fit.group, G) / n
        corr[:, blocks["alpha0"]] -= np.einsum("g,ngr->nr", s_we, if_mu)
        corr += (if_mu @ a0) @ s_wx
        parts_u.append(u_mu)
        jmu = np.zeros((k, G * r))
        for g in range(G):
            jmu[blocks["alpha0"], g * r:(g + 1) * r] -= s_we[g] * np.eye(r)
            jmu[:, g * r:(g + 1) * r] += np.outer(s_wx[g], a0)
        jac_rows.append(("mu", -np.repeat(wtot, r), jmu))
    if l:
        rr = rows.spec.rho * (1.0 - rows.spec.rho)
        sc = rows.s - fit.psi
        u_psi = cluster_sum((rows.w_s * rr)[:, None] * sc, rows.pid, n)
        wtot_s = rows.w_s.sum() * rr / n
        if_psi = u_psi / wtot_s
        ac = rows.a_centered
        s_wae = np.sum(w * ac * e) / n
        s_wax = (w * ac) @ X / n
        corr[:, blocks["alpha1"]] -= s_wae * if_psi
        corr += np.outer(if_psi @ a1, s_wax)
        parts_u.append(u_psi)
        jpsi = np.zeros((k, l))
        jpsi[blocks["alpha1"], :] -= s_wae * np.eye(l)
        jpsi += np.outer(s_wax, a1)
        jac_rows.append(("psi", -np.full(l, wtot_s), jpsi))
    infl = -(u_theta + corr) @ _inv(j_tt, "Step-1 bread").T

    # assemble the full stacked Jacobian and meat for reporting
    u_all = np.hstack(parts_u + [u_theta]) if parts_u else u_theta
    dim = u_all.shape[1]
    jac = np.zeros((dim, dim))
    pos = 0
    for _, diag, jblock in jac_rows:
        size = len(diag)
        jac[pos:pos + size, pos:pos + size] = np.diag(diag)
        jac[dim - k:, pos:pos + size] = jblock
        pos += size
    jac[dim - k:, dim - k:] = j_tt
    meat = u_all.T @ u_all / n
    return infl, SandwichParts(jac, meat, -jac, mode=bread)


def gamma_influence(rows, fit, yhat, gamma, infl_theta, parts: SandwichParts,
                    propagate: bool = True):
    """Per-person influence of ``gamma`` including Step-1 propagation."""
    n = rows.n
    m = rows.m
    ws = rows.w_s
    u2 = cluster_sum((ws * (yhat - m @ gamma))[:, None] * m, rows.pid, n)
    b2 = m.T @ (ws[:, None] * m) / n
    k = infl_theta.shape[1]
    dyhat = np.zeros((len(rows), k))
    dyhat[:, fit.blocks["beta"]] = rows.a_centered[:, None] * rows.f
    dyhat[:, fit.blocks["eta"]] = m
    q = m.T @ (ws[:, None] * dyhat) / n
    score = u2 + infl_theta @ q.T if propagate else u2
    infl = score @ _inv(b2, "Step-2 bread").T
    meat2 = score.T @ score / n
    out = SandwichParts(parts.bread1, parts.meat1, parts.omega, b2, meat2, q, parts.mode)
    return infl, out


def sandwich_step1(rows, fit, bread: str = "stacked") -> np.ndarray:
    """Covariance of ``(beta, eta)`` from the Step-1 sandwich."""
    infl, _ = step1_influence(rows, fit, bread)
    b = fit.blocks
    bh = np.r_[np.arange(b["beta"].start, b["beta"].stop), np.arange(b["eta"].start, b["eta"].stop)]
    sub = infl[:, bh]
    return sub.T @ sub / rows.n ** 2


def sandwich_gamma(rows, fit, yhat, gamma, bread: str = "stacked",
                   propagate: bool = True) -> np.ndarray:
    """Covariance of ``gamma`` with the Step-1 propagation term."""
    infl_theta, parts = step1_influence(rows, fit, bread)
    infl, _ = gamma_influence(rows, fit, yhat, gamma, infl_theta, parts, propagate)
    return infl.T @ infl / rows.n ** 2


def wls_influence(X, w, e, pid, n) -> np.ndarray:
    """Influence values of an ordinary clustered weighted least-squares fit."""
    u = cluster_sum((w * e)[:, None] * X, pid, n)
    bread = X.T @ (w[:, None] * X) / n
    return u @ _inv(bread, "bread").T


@dataclass(frozen=True)
class Contrast:
    """Linear contrast with Wald interval."""

    label: str
    kind: str
    coeff: np.ndarray
    estimate: float
    se: float
    ci95: tuple
    target: str = "beta_eta"

    def as_dict(self) -> dict:
        return {"label": self.label, "kind": self.kind, "estimate": self.estimate,
                "se": self.se, "ci_lo": self.ci95[0], "ci_hi": self.ci95[1]}


def _features_at(spec, regime: DtrRegime, t: int, t_star: int, time_scale, x0: Mapping | None):
    x0 = dict(x0 or {})
    ctx = FeatureContext(
        t=np.array([t]), d1=np.array([regime.d1]), d2=np.array([regime.d2]), t_star=t_star,
        time_scale=time_scale, x0=np.array([[x0[k] for k in x0]]) if x0 else None,
        x0_names=tuple(x0))
    return evaluate_block(spec.f, ctx)[0], evaluate_block(spec.m, ctx)[0]


def _as_regime(obj) -> DtrRegime:
    if isinstance(obj, DtrRegime):
        return obj
    d1, d2 = obj
    return DtrRegime(int(d1), int(d2))


def contrast_vector(kind: str, regimes: Sequence, a_fixed, t: int, spec, design,
                    time_scale=None, x0: Mapping | None = None):
    """Coefficient vector of a contrast.

    Parameters
    ----------
    kind : {"ID", "IA", "AD", "AA"}
        ``ID``: regime difference at fixed treatment ``a_fixed``.
        ``IA``: treatment effect under a fixed regime.
        ``AD``: regime difference averaging over the treatment.
        ``AA``: treatment effect averaging over regimes.
    regimes : sequence
        ``(d, d_ref)`` for ID and AD, ``(d,)`` for IA, ignored for AA.
    a_fixed : {0, 1} or None
        Required for ID.
    t : int
        Decision point at which the features are evaluated.

    Returns
    -------
    coeff : ndarray
        Over ``[beta, eta]`` for ID, IA, AA and over ``gamma`` for AD.
    target : {"beta_eta", "gamma"}
    """
    kind = kind.upper()
    p, q = len(spec.f), len(spec.m)
    stage2 = t >= design.t_star
    args = (t, design.t_star, time_scale, x0)
    if kind == "AA":
        regs = enumerate_regimes(design)
        fbar = sum(_features_at(spec, g, *args)[0] for g in regs) / len(regs)
        return np.r_[fbar, np.zeros(q)], "beta_eta"
    if kind == "IA":
        if stage2 and not design.mrt_in_stage2:
            raise ContrastError("the design has no fast-timescale randomization in stage 2")
        f, _ = _features_at(spec, _as_regime(regimes[0]), *args)
        return np.r_[f, np.zeros(q)], "beta_eta"
    if kind not in ("ID", "AD"):
        raise ContrastError(f"unknown contrast kind {kind!r}")
    if len(regimes) != 2:
        raise ContrastError(f"{kind} contrast needs two regimes")
    d, dref = _as_regime(regimes[0]), _as_regime(regimes[1])
    if not stage2 and d.d1 == dref.d1 and d.d2 != dref.d2:
        raise ContrastError(
            f"regimes {d.label} and {dref.label} differ only in d2, which is undefined "
            f"before stage 2 (t={t} < t_star={design.t_star})")
    f1, m1 = _features_at(spec, d, *args)
    f0, m0 = _features_at(spec, dref, *args)
    if kind == "AD":
        return m1 - m0, "gamma"
    if a_fixed is None or a_fixed not in (0, 1):
        raise ContrastError(f"a_fixed must be 0 or 1 for an ID contrast, got {a_fixed!r}")
    if stage2 and not design.mrt_in_stage2 and a_fixed is not None:
        raise ContrastError("the design has no fast-timescale randomization in stage 2")
    return np.r_[(a_fixed - spec.rho) * (f1 - f0), m1 - m0], "beta_eta"


def make_contrast(kind: str, regimes: Sequence = (), a_fixed=None, t: int | None = None,
                  fit=None, label: str | None = None, x0: Mapping | None = None) -> Contrast:
    """Estimate a contrast from a :class:`~smartmrt.estimator.FitResult`.

    The interval is ``estimate +/- 1.959964 * se``.

    Raises
    ------
    ContrastError
        ``a_fixed`` outside {0, 1}, or a d2-only contrast before stage 2.
    """
    if fit is None or t is None:
        raise ContrastError("make_contrast needs a fit and a decision point t")
    if a_fixed is not None and a_fixed not in (0, 1):
        raise ContrastError(f"a_fixed must be 0 or 1, got {a_fixed!r}")
    coeff, target = contrast_vector(kind, regimes, a_fixed, t, fit.spec, fit.design,
                                    fit.time_scale, x0)
    if target == "gamma":
        est = float(coeff @ fit.gamma)
        var = float(coeff @ fit.vcov_gamma @ coeff)
    else:
        est = float(coeff @ np.r_[fit.beta, fit.eta])
        var = float(coeff @ fit.vcov_step1 @ coeff)
    se = float(np.sqrt(max(var, 0.0)))
    if label is None:
        regs = " vs ".join(_as_regime(g).label for g in regimes) if kind.upper() != "AA" else "all"
        label = f"{kind.upper()} {regs} t={t}" + (f" a={a_fixed}" if a_fixed is not None else "")
    return Contrast(label, kind.upper(), coeff, est, se, (est - Z95 * se, est + Z95 * se), target)
