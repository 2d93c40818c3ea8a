"""Materialize replicated (person, time, consistent regime) rows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .design import DesignSpec, DtrRegime, TrialData, consistency_matrix, enumerate_regimes
from .errors import ValidationError
from .model import FeatureContext, ModelSpec, TimeScale, evaluate_block, validate
from .weights import mrt_weight, smart_weights

__all__ = ["ReplicatedRow", "ReplicatedRows", "replicate", "observed_rows"]


class ReplicatedRow(NamedTuple):
    person_id: str
    t: int
    regime: DtrRegime
    w_s: float
    w_m: float
    a_centered: float
    f: np.ndarray
    m: np.ndarray
    g: np.ndarray
    s: np.ndarray
    y: float


@dataclass(frozen=True, eq=False)
class ReplicatedRows:
    """Columnar replicated design, sorted by (person, t, regime).

    ``g`` and ``s`` are stored uncentered; centering happens in the
    estimator so that the centering constants can enter the sandwich.
    """

    ids: tuple
    pid: np.ndarray
    t: np.ndarray
    regime_index: np.ndarray
    regimes: tuple
    d1: np.ndarray
    d2: np.ndarray
    w_s: np.ndarray
    w_m: np.ndarray
    a_centered: np.ndarray
    eligible: np.ndarray
    f: np.ndarray
    m: np.ndarray
    g: np.ndarray
    s: np.ndarray
    y: np.ndarray
    spec: ModelSpec
    t_star: int
    time_scale: TimeScale | None = None
    r_mean: float = 0.0

    @property
    def n(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.t)

    def row(self, k: int) -> ReplicatedRow:
        return ReplicatedRow(
            self.ids[self.pid[k]], int(self.t[k]), self.regimes[self.regime_index[k]],
            float(self.w_s[k]), float(self.w_m[k]), float(self.a_centered[k]),
            self.f[k], self.m[k], self.g[k], self.s[k], float(self.y[k]))

    def __iter__(self):
        return (self.row(k) for k in range(len(self)))

    def stage2(self) -> np.ndarray:
        return (self.t >= self.t_star).astype(float)

    def with_weights(self, w_s=None, w_m=None) -> "ReplicatedRows":
        """Copy with replaced weight columns (used by invariance checks)."""
        kw = dict(self.__dict__)
        if w_s is not None:
            kw["w_s"] = np.asarray(w_s, dtype=float)
        if w_m is not None:
            kw["w_m"] = np.asarray(w_m, dtype=float)
        return ReplicatedRows(**kw)


def _context(data: TrialData, sel, d1, d2, t_star, time_scale, r_mean) -> FeatureContext:
    return FeatureContext(
        t=data.t[sel], d1=d1, d2=d2, t_star=t_star, time_scale=time_scale,
        x=data.x[sel], x_names=data.x_names, x0=data.x0[sel], x0_names=data.x0_names,
        r=data.r[sel], r_mean=r_mean, i=data.i[sel])


def _uses_tc(spec: ModelSpec) -> bool:
    return any(a.kind == "TC" for b in ("f", "m", "g", "s") for t in getattr(spec, b)
               for a in t.factors)


def replicate(data: TrialData, design: DesignSpec, spec: ModelSpec,
              time_scale: TimeScale | None = None) -> ReplicatedRows:
    """Expand person-time rows over the regimes each person is consistent with.

    Parameters
    ----------
    data : TrialData
    design : DesignSpec
    spec : ModelSpec
    time_scale : TimeScale, optional
        Standardization for TC; computed from ``data.t`` when omitted.

    Returns
    -------
    ReplicatedRows
        Under variant II a responder contributes two rows per decision
        point and a non-responder one.
    """
    validate(spec).raise_if_invalid()
    data.validate(design)
    if not np.any(data.i == 1):
        raise ValidationError("no eligible decision point in the data")
    regimes = tuple(enumerate_regimes(design))
    z1, r, z2 = data.person_level()
    ws_person = smart_weights(z1, r, z2, regimes, design)
    keep = consistency_matrix(z1, r, z2, design, regimes)[data.pid]
    row_idx, reg_idx = np.nonzero(keep)
    order = np.lexsort((reg_idx, data.t[row_idx], data.pid[row_idx]))
    row_idx, reg_idx = row_idx[order], reg_idx[order]

    if time_scale is None and _uses_tc(spec):
        time_scale = TimeScale.from_times(data.t)
    r_mean = float(np.mean(r))
    d1 = np.array([g.d1 for g in regimes])[reg_idx]
    d2 = np.array([g.d2 for g in regimes])[reg_idx]
    ctx = _context(data, row_idx, d1, d2, design.t_star, time_scale, r_mean)
    w_m, ac = mrt_weight(data.a, data.p, spec.rho, data.i == 1)
    pid = data.pid[row_idx]
    return ReplicatedRows(
        ids=data.ids, pid=pid, t=data.t[row_idx], regime_index=reg_idx, regimes=regimes,
        d1=d1, d2=d2, w_s=ws_person[pid, reg_idx], w_m=w_m[row_idx], a_centered=ac[row_idx],
        eligible=data.i[row_idx] == 1,
        f=evaluate_block(spec.f, ctx), m=evaluate_block(spec.m, ctx),
        g=evaluate_block(spec.g, ctx), s=evaluate_block(spec.s, ctx),
        y=data.y[row_idx], spec=spec, t_star=design.t_star,
        time_scale=time_scale, r_mean=r_mean)


def observed_rows(data: TrialData, design: DesignSpec, spec: ModelSpec,
                  time_scale: TimeScale | None = None) -> ReplicatedRows:
    """One row per person-time with observed ``(z1, z2)`` in place of the regime.

    This is the working design of the WCLS baseline.  ``w_s`` is set to 1 and
    ``regime_index`` to -1.
    """
    validate(spec).raise_if_invalid()
    data.validate(design)
    if time_scale is None and _uses_tc(spec):
        time_scale = TimeScale.from_times(data.t)
    z1, r, _ = data.person_level()
    r_mean = float(np.mean(r))
    sel = np.arange(data.n_rows)
    ctx = _context(data, sel, data.z1.astype(float), data.z2.astype(float),
                   design.t_star, time_scale, r_mean)
    w_m, ac = mrt_weight(data.a, data.p, spec.rho, data.i == 1)
    n_rows = data.n_rows
    return ReplicatedRows(
        ids=data.ids, pid=data.pid.copy(), t=data.t.copy(),
        regime_index=np.full(n_rows, -1), regimes=tuple(enumerate_regimes(design)),
        d1=data.z1.astype(float), d2=data.z2.astype(float), w_s=np.ones(n_rows),
        w_m=w_m, a_centered=ac, eligible=data.i == 1,
        f=evaluate_block(spec.f, ctx), m=evaluate_block(spec.m, ctx),
        g=evaluate_block(spec.g, ctx), s=evaluate_block(spec.s, ctx),
        y=data.y.copy(), spec=spec, t_star=design.t_star,
        time_scale=time_scale, r_mean=r_mean)
