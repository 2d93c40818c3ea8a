"""Reference estimators: WCLS (MRT-only) and WR (SMART-only).

Both use the same weighted least-squares solver and per-person sandwich as
the hybrid estimator, so differences between methods are methodological.

* WCLS ignores the embedded SMART: one row per person-time, the observed
  ``(z1, z2)`` plugged into ``f``, MRT weight only, controls ``g`` left
  uncentered.
* WR ignores the micro-randomization: replicated rows, SMART weight only,
  raw outcome regressed on ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import DesignSpec, TrialData
from .errors import ContrastError
from .inference import Z95, Contrast, contrast_vector, wls_influence
from .linalg import wls
from .model import ModelSpec, TimeScale
from .rows import observed_rows, replicate

__all__ = ["BaselineFit", "fit_wcls", "fit_wr", "baseline_contrast"]


@dataclass(frozen=True, eq=False)
class BaselineFit:
    """Point estimates and cluster sandwich covariance of a baseline.

    ``coeffs`` is ordered as ``names``.  For WCLS the layout is
    ``[alpha(g), beta(f), eta(m)]``; for WR it is ``gamma(m)``.
    """

    method: str
    coeffs: np.ndarray
    vcov: np.ndarray
    names: tuple
    n: int
    spec: ModelSpec
    design: DesignSpec
    time_scale: TimeScale | None = None
    spec_echo: dict = field(default_factory=dict)

    def block(self, name: str) -> np.ndarray:
        idx = [k for k, nm in enumerate(self.names) if nm.startswith(name + "[")]
        return self.coeffs[idx]

    def block_index(self, name: str) -> np.ndarray:
        return np.array([k for k, nm in enumerate(self.names) if nm.startswith(name + "[")], int)

    @property
    def beta(self):
        return self.block("beta")

    @property
    def gamma(self):
        return self.block("gamma")


def _as_data(data) -> TrialData:
    return data if isinstance(data, TrialData) else TrialData.from_trajectories(data)


def fit_wcls(data, design: DesignSpec, spec: ModelSpec,
             time_scale: TimeScale | None = None, controls: str = "g") -> BaselineFit:
    """Weighted centered least squares with the observed SMART assignments.

    Parameters
    ----------
    data : TrialData or list of Trajectory
    design : DesignSpec
    spec : ModelSpec
        ``f`` gives the moderated treatment effect.
    controls : {"g", "m+g"}
        ``g`` uses only the (uncentered) control variables; ``m+g`` also
        adds the main-effect terms ``m`` evaluated at the observed
        assignments.

    Returns
    -------
    BaselineFit
        With names ``alpha[...]``, ``beta[...]`` and, for ``m+g``, ``eta[...]``.
    """
    if controls not in ("g", "m+g"):
        raise ValueError(f"unknown controls {controls!r}")
    rows = observed_rows(_as_data(data), design, spec, time_scale)
    use_m = controls == "m+g"
    X = np.hstack([rows.g, rows.a_centered[:, None] * rows.f] + ([rows.m] if use_m else []))
    names = ([f"alpha[{t}]" for t in spec.names("g")] + [f"beta[{t}]" for t in spec.names("f")]
             + ([f"eta[{t}]" for t in spec.names("m")] if use_m else []))
    sol = wls(X, rows.y, rows.w_m, names)
    e = rows.y - X @ sol.coef
    infl = wls_influence(X, rows.w_m, e, rows.pid, rows.n)
    vcov = infl.T @ infl / rows.n ** 2
    return BaselineFit("WCLS", sol.coef, 0.5 * (vcov + vcov.T), tuple(names), rows.n, spec,
                       design, rows.time_scale, {"model": spec.digest()})


def fit_wr(data, design: DesignSpec, spec: ModelSpec,
           time_scale: TimeScale | None = None) -> BaselineFit:
    """Weighted-and-replicated regression of the raw outcome on ``m``.

    Returns
    -------
    BaselineFit
        With names ``gamma[...]``.
    """
    rows = replicate(_as_data(data), design, spec, time_scale)
    names = [f"gamma[{t}]" for t in spec.names("m")]
    sol = wls(rows.m, rows.y, rows.w_s, names)
    e = rows.y - rows.m @ sol.coef
    infl = wls_influence(rows.m, rows.w_s, e, rows.pid, rows.n)
    vcov = infl.T @ infl / rows.n ** 2
    return BaselineFit("WR", sol.coef, 0.5 * (vcov + vcov.T), tuple(names), rows.n, spec,
                       design, rows.time_scale, {"model": spec.digest()})


def baseline_contrast(fit: BaselineFit, kind: str, regimes=(), a_fixed=None, t: int = 0,
                      label: str | None = None) -> Contrast:
    """Evaluate a contrast on a baseline fit.

    WCLS supports the treatment-effect families (IA, AA, ID); WR supports
    only AD, since it has no treatment term.
    """
    kind = kind.upper()
    coeff, target = contrast_vector(kind, regimes, a_fixed, t, fit.spec, fit.design,
                                    fit.time_scale)
    if fit.method == "WR":
        if target != "gamma":
            raise ContrastError("WR estimates only regime contrasts averaged over treatment")
        idx = fit.block_index("gamma")
    else:
        if target != "beta_eta":
            raise ContrastError("WCLS has no treatment-averaged regime mean")
        idx = np.r_[fit.block_index("beta"), fit.block_index("eta")]
        if len(idx) < len(coeff):
            if np.any(coeff[len(idx):] != 0):
                raise ContrastError("this WCLS fit has no main-effect terms for an ID contrast")
            coeff = coeff[:len(idx)]
    est = float(coeff @ fit.coeffs[idx])
    se = float(np.sqrt(max(coeff @ fit.vcov[np.ix_(idx, idx)] @ coeff, 0.0)))
    label = label or f"{fit.method} {kind} t={t}"
    return Contrast(label, kind, coeff, est, se, (est - Z95 * se, est + Z95 * se), target)
