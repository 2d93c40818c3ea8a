"""Two-step weighted and centered estimator for hybrid SMART-MRT data.

Step 1 fits, on replicated rows with weight ``w_s * w_m``,

    y ~ (g - mu[regime]) a0 + (a - rho) f b + (a - rho)(s - psi) a1 + m eta

and Step 2 projects the Step-1 prediction
``yhat = (a - rho) f b + m eta`` onto ``m`` with weight ``w_s`` to obtain
``gamma``, the regime-level mean averaging over the fast-timescale
treatment.  Both steps are linear, so each is a single weighted
least-squares solve.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .design import DesignSpec, TrialData
from .errors import ValidationError
from .linalg import cluster_sum, wls
from .model import ModelSpec, TimeScale
from .rows import ReplicatedRows, replicate
from .weights import WeightBundle, compute_mu, compute_psi

__all__ = [
    "Step1Fit",
    "FitResult",
    "centering_groups",
    "stacked_design",
    "fit_step1",
    "predict_yhat",
    "fit_step2",
    "fit_hybrid",
    "fit_rows",
    "step1_score",
    "step2_score",
    "CENTERING_MODES",
]

CENTERING_MODES = ("pooled", "stage", "time")


def centering_groups(rows: ReplicatedRows, mode: str = "pooled"):
    """Centering group of each replicated row.

    ``pooled``: one group per regime.  ``stage``: regime by stage.
    ``time``: regime by decision point.

    Returns
    -------
    group : ndarray of int
    n_groups : int
    """
    n_reg = len(rows.regimes)
    reg = rows.regime_index
    if mode == "pooled":
        return reg.copy(), n_reg
    if mode == "stage":
        return reg * 2 + (rows.t >= rows.t_star).astype(int), n_reg * 2
    if mode == "time":
        times, tidx = np.unique(rows.t, return_inverse=True)
        return reg * len(times) + tidx, n_reg * len(times)
    raise ValidationError(f"unknown centering mode {mode!r}; choose from {CENTERING_MODES}")


def stacked_design(rows: ReplicatedRows, mu: np.ndarray, psi: np.ndarray,
                   group: np.ndarray) -> np.ndarray:
    """Step-1 regressors ``[g - mu, (a-rho) f, (a-rho)(s-psi), m]``."""
    ac = rows.a_centered[:, None]
    gc = rows.g - mu[group] if rows.g.shape[1] else rows.g
    sc = rows.s - psi if rows.s.shape[1] else rows.s
    return np.hstack([gc, ac * rows.f, ac * sc, rows.m])


def _param_names(spec: ModelSpec) -> list[str]:
    return ([f"alpha0[{n}]" for n in spec.names("g")] + [f"beta[{n}]" for n in spec.names("f")]
            + [f"alpha1[{n}]" for n in spec.names("s")] + [f"eta[{n}]" for n in spec.names("m")])


@dataclass(frozen=True, eq=False)
class Step1Fit:
    """Step-1 solution with everything the sandwich needs."""

    theta: np.ndarray
    names: tuple
    blocks: dict            # name -> slice into theta
    mu: np.ndarray
    psi: np.ndarray
    group: np.ndarray
    n_groups: int
    X: np.ndarray
    weight: np.ndarray
    resid: np.ndarray
    cond: float
    centering: str

    def block(self, name: str) -> np.ndarray:
        return self.theta[self.blocks[name]]

    @property
    def alpha0(self):
        return self.block("alpha0")

    @property
    def beta(self):
        return self.block("beta")

    @property
    def alpha1(self):
        return self.block("alpha1")

    @property
    def eta(self):
        return self.block("eta")

    def bundle(self, rows: ReplicatedRows) -> WeightBundle:
        return WeightBundle(rows.w_s, rows.w_m, rows.a_centered, self.mu, self.psi, self.group)


def _blocks(spec: ModelSpec) -> dict:
    r, p, l, q = (len(spec.g), len(spec.f), len(spec.s), len(spec.m))
    return {"alpha0": slice(0, r), "beta": slice(r, r + p),
            "alpha1": slice(r + p, r + p + l), "eta": slice(r + p + l, r + p + l + q)}


def fit_step1(rows: ReplicatedRows, centering: str = "stage") -> Step1Fit:
    """Solve the Step-1 estimating equation.

    Parameters
    ----------
    rows : ReplicatedRows
    centering : {"pooled", "stage", "time"}
        Grouping used for the regime-specific mean of ``g``.  ``pooled``
        leaves stage-specific mean shifts of ``g`` inside the centered
        controls, which can leak into stage-specific terms of ``m``.

    Returns
    -------
    Step1Fit
    """
    spec = rows.spec
    group, n_groups = centering_groups(rows, centering)
    mu = compute_mu(group, rows.g, rows.w_s, n_groups) if rows.g.shape[1] else np.zeros((n_groups, 0))
    psi = compute_psi(rows.s, rows.w_s, spec.rho) if rows.s.shape[1] else np.zeros(0)
    X = stacked_design(rows, mu, psi, group)
    w = rows.w_s * rows.w_m
    names = tuple(_param_names(spec))
    sol = wls(X, rows.y, w, names)
    resid = rows.y - X @ sol.coef
    return Step1Fit(sol.coef, names, _blocks(spec), mu, psi, group, n_groups, X, w, resid,
                    sol.cond, centering)


def predict_yhat(fit: Step1Fit, rows: ReplicatedRows) -> np.ndarray:
    """Step-1 prediction ``(a - rho) f'beta + m'eta`` (0 effect when ineligible)."""
    return rows.a_centered * (rows.f @ fit.beta) + rows.m @ fit.eta


def fit_step2(rows: ReplicatedRows, yhat: np.ndarray):
    """``w_s``-weighted least squares of ``yhat`` on ``m``.

    Returns
    -------
    gamma : ndarray
    cond : float
        Condition number of the Step-2 normal matrix.
    """
    names = [f"gamma[{n}]" for n in rows.spec.names("m")]
    sol = wls(rows.m, yhat, rows.w_s, names)
    return sol.coef, sol.cond


def step1_score(rows: ReplicatedRows, fit: Step1Fit, theta=None) -> np.ndarray:
    """Per-person Step-1 estimating function evaluated at ``theta``.

    Recomputed from the raw rows (independently of the solver path).
    """
    theta = fit.theta if theta is None else theta
    X = stacked_design(rows, fit.mu, fit.psi, fit.group)
    e = rows.y - X @ theta
    return cluster_sum((rows.w_s * rows.w_m * e)[:, None] * X, rows.pid, rows.n)


def step2_score(rows: ReplicatedRows, yhat: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    e = yhat - rows.m @ gamma
    return cluster_sum((rows.w_s * e)[:, None] * rows.m, rows.pid, rows.n)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimates, joint sandwich covariance and metadata of a hybrid fit.

    ``vcov_full`` is ordered ``[alpha0, beta, alpha1, eta, gamma]`` as in
    ``names``.  ``vcov_step1`` is the ``(beta, eta)`` block.
    """

    alpha0: np.ndarray
    alpha1: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    vcov_step1: np.ndarray
    vcov_gamma: np.ndarray
    vcov_full: np.ndarray
    names: tuple
    n: int
    condition_numbers: dict
    spec: ModelSpec
    design: DesignSpec
    time_scale: TimeScale | None
    r_mean: float
    mu: np.ndarray
    psi: np.ndarray
    options: dict = field(default_factory=dict)
    parts: object = None
    spec_echo: dict = field(default_factory=dict)

    def se(self, block: str) -> np.ndarray:
        idx = [k for k, nm in enumerate(self.names) if nm.startswith(block + "[")]
        return np.sqrt(np.diag(self.vcov_full)[idx])

    def coef_table(self) -> list[dict]:
        est = np.concatenate([self.alpha0, self.beta, self.alpha1, self.eta, self.gamma])
        se = np.sqrt(np.clip(np.diag(self.vcov_full), 0, None))
        z = 1.959964
        return [{"parameter": nm, "estimate": float(b), "se": float(s),
                 "ci_lo": float(b - z * s), "ci_hi": float(b + z * s)}
                for nm, b, s in zip(self.names, est, se)]


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def fit_rows(rows: ReplicatedRows, design: DesignSpec, *, centering: str = "stage",
             bread: str = "stacked", propagate: bool = True, step2_response: str = "yhat",
             small_sample: bool = False) -> FitResult:
    """Fit both steps and the sandwich on prebuilt replicated rows.

    Parameters
    ----------
    rows : ReplicatedRows
    design : DesignSpec
    centering : {"pooled", "stage", "time"}
    bread : {"stacked", "plain", "reduced"}
        ``stacked`` includes the estimating equations of the centering
        constants; ``plain`` treats them as fixed; ``reduced`` keeps only the
        ``(beta, eta)`` block of the Step-1 Jacobian.
    propagate : bool
        Add the Step-1 propagation term to the Step-2 score.
    step2_response : {"yhat", "y"}
        ``y`` regresses the raw outcome in Step 2 (diagnostic only).
    small_sample : bool
        Multiply covariances by ``n / (n - k)``.
    """
    from .inference import gamma_influence, step1_influence

    if step2_response not in ("yhat", "y"):
        raise ValidationError("step2_response must be 'yhat' or 'y'")
    fit1 = fit_step1(rows, centering)
    yhat = predict_yhat(fit1, rows) if step2_response == "yhat" else rows.y
    gamma, cond2 = fit_step2(rows, yhat)
    if_theta, parts = step1_influence(rows, fit1, bread=bread)
    if_gamma, parts = gamma_influence(rows, fit1, yhat, gamma, if_theta, parts,
                                      propagate=propagate and step2_response == "yhat")
    n = rows.n
    infl = np.hstack([if_theta, if_gamma])
    vcov = infl.T @ infl / n ** 2
    if small_sample:
        k = infl.shape[1]
        if n <= k:
            raise ValidationError("small-sample factor needs more persons than parameters")
        vcov = vcov * n / (n - k)
    vcov = 0.5 * (vcov + vcov.T)
    spec = rows.spec
    b = fit1.blocks
    bh = np.r_[np.arange(b["beta"].start, b["beta"].stop), np.arange(b["eta"].start, b["eta"].stop)]
    kt = len(fit1.theta)
    names = fit1.names + tuple(f"gamma[{n_}]" for n_ in spec.names("m"))
    return FitResult(
        alpha0=fit1.alpha0, alpha1=fit1.alpha1, beta=fit1.beta, eta=fit1.eta, gamma=gamma,
        vcov_step1=vcov[np.ix_(bh, bh)], vcov_gamma=vcov[kt:, kt:], vcov_full=vcov,
        names=names, n=n, condition_numbers={"step1": fit1.cond, "step2": cond2},
        spec=spec, design=design, time_scale=rows.time_scale, r_mean=rows.r_mean,
        mu=fit1.mu, psi=fit1.psi,
        options={"centering": centering, "bread": bread, "propagate": propagate,
                 "step2_response": step2_response, "small_sample": small_sample},
        parts=parts,
        spec_echo={"model": spec.digest(), "design": _digest(design.to_dict()),
                   "time_scale": None if rows.time_scale is None else
                   {"mean": rows.time_scale.mean, "sd": rows.time_scale.sd}},
    )


def fit_hybrid(data: TrialData, design: DesignSpec, spec: ModelSpec,
               time_scale: TimeScale | None = None, **options) -> FitResult:
    """Replicate, fit both steps and compute the joint sandwich covariance.

    Keyword options are passed to :func:`fit_rows`.
    """
    rows = replicate(data, design, spec, time_scale)
    return fit_rows(rows, design, **options)
