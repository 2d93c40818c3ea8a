"""Hybrid SMART-MRT data model: designs, regimes, trajectories.

The estimator works on a columnar long-format container (:class:`TrialData`)
with one row per person and decision point.  :class:`Trajectory` is the
per-person record used at API boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import PositivityError, ValidationError

__all__ = [
    "DesignSpec",
    "DtrRegime",
    "Trajectory",
    "TrialData",
    "enumerate_regimes",
    "consistent_regimes",
    "consistency_matrix",
    "z2_probability",
    "stage2_indicator",
]

_VARIANTS = ("I", "II", "III")


def _freeze_law(law) -> Mapping[int, Mapping[int, float]]:
    return MappingProxyType(
        {int(r): MappingProxyType({int(z): float(p) for z, p in row.items()})
         for r, row in law.items()}
    )


def _default_z2_law(variant: str):
    if variant == "I":
        return {0: {-1: 0.5, 1: 0.5}, 1: {-1: 0.5, 1: 0.5}}
    return {0: {-1: 0.5, 1: 0.5}, 1: {0: 1.0}}


@dataclass(frozen=True)
class DtrRegime:
    """Embedded dynamic treatment regime ``(d1, d2)`` with entries in {-1, 1}."""

    d1: int
    d2: int

    def __post_init__(self):
        if self.d1 not in (-1, 1) or self.d2 not in (-1, 1):
            raise ValidationError(f"regime entries must be -1 or 1, got ({self.d1}, {self.d2})")

    @property
    def label(self) -> str:
        return f"({self.d1},{self.d2})"

    def __iter__(self):
        return iter((self.d1, self.d2))


@dataclass(frozen=True)
class DesignSpec:
    """Randomization structure of a two-stage hybrid SMART-MRT.

    Parameters
    ----------
    smart_variant : {"I", "II", "III"}
        ``I``: everybody is re-randomized at stage 2.  ``II``: only
        non-responders are re-randomized (responders carry ``z2 = 0``).
        ``III``: only non-responders to ``z1 = 1`` are re-randomized;
        non-responders to ``z1 = -1`` receive a single fixed option coded
        ``z2 = 1``.
    t_star : int
        First decision point of stage 2.  Stage membership is ``t >= t_star``.
    t_max : int
        Number of decision points.
    p_z1 : float
        P(Z1 = 1).
    p_z2_given_r : mapping
        ``{r: {z2: prob}}``.  For variant III the ``r = 0`` row applies to
        the re-randomized branch only.
    rho : float
        Pseudo-centering probability used in the marginal model.
    mrt_prob : float, mapping or None
        Design value of P(A_t = 1 | H_t).  Either a constant or a table keyed
        by ``(z1, stage, z2)`` with ``stage`` in {1, 2}.  Analysis always uses
        the per-row probabilities stored with the data; this field is used by
        the simulator and by positivity checks.
    mrt_in_stage2 : bool
        Whether the fast-timescale randomization continues into stage 2.
    """

    smart_variant: str = "II"
    t_star: int = 14
    t_max: int = 50
    p_z1: float = 0.5
    p_z2_given_r: Mapping[int, Mapping[int, float]] | None = None
    rho: float = 0.5
    mrt_prob: float | Mapping | None = 0.5
    mrt_in_stage2: bool = True

    def __post_init__(self):
        variant = str(self.smart_variant).upper()
        object.__setattr__(self, "smart_variant", variant)
        law = self.p_z2_given_r if self.p_z2_given_r is not None else _default_z2_law(variant)
        object.__setattr__(self, "p_z2_given_r", _freeze_law(law))
        if isinstance(self.mrt_prob, Mapping):
            table = {tuple(int(v) for v in k): float(p) for k, p in self.mrt_prob.items()}
            object.__setattr__(self, "mrt_prob", MappingProxyType(table))
        self.validate()

    def validate(self) -> None:
        if self.smart_variant not in _VARIANTS:
            raise ValidationError(f"unknown SMART variant {self.smart_variant!r}")
        if not 0.0 < self.p_z1 < 1.0:
            raise PositivityError(f"p_z1 must lie in (0, 1), got {self.p_z1}")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {self.rho}")
        if not 1 <= self.t_star <= self.t_max:
            raise ValidationError(f"need 1 <= t_star <= t_max, got {self.t_star}, {self.t_max}")
        law = self.p_z2_given_r
        if set(law) != {0, 1}:
            raise ValidationError("p_z2_given_r must have rows for r=0 and r=1")
        for r, row in law.items():
            if any(z not in (-1, 0, 1) for z in row):
                raise ValidationError(f"Z2 support must be within {{-1,0,1}}, row r={r}")
            if any(p < 0 for p in row.values()) or abs(sum(row.values()) - 1.0) > 1e-12:
                raise ValidationError(f"p_z2_given_r row r={r} is not a probability law")
        if self.smart_variant in ("II", "III"):
            if law[1].get(0, 0.0) != 1.0:
                raise ValidationError("restricted design requires P(Z2=0 | R=1) = 1")
            if law[0].get(0, 0.0) != 0.0:
                raise ValidationError("restricted design requires P(Z2=0 | R=0) = 0")
        if self.smart_variant == "I" and (law[0].get(0, 0.0) or law[1].get(0, 0.0)):
            raise ValidationError("variant I re-randomizes everybody; Z2=0 is not allowed")
        for value in self._mrt_values():
            if not 0.0 < value < 1.0:
                raise PositivityError(f"MRT randomization probability {value} outside (0, 1)")

    def _mrt_values(self):
        if self.mrt_prob is None:
            return []
        if isinstance(self.mrt_prob, Mapping):
            return list(self.mrt_prob.values())
        return [float(self.mrt_prob)]

    def stage2(self, t) -> np.ndarray:
        """Stage-2 indicator ``1{t >= t_star}``."""
        return stage2_indicator(t, self.t_star)

    def to_dict(self) -> dict:
        out = {
            "smart_variant": self.smart_variant,
            "t_star": self.t_star,
            "t_max": self.t_max,
            "p_z1": self.p_z1,
            "p_z2_given_r": {str(r): {str(z): p for z, p in row.items()}
                             for r, row in self.p_z2_given_r.items()},
            "rho": self.rho,
            "mrt_in_stage2": self.mrt_in_stage2,
        }
        if isinstance(self.mrt_prob, Mapping):
            out["mrt_prob"] = {",".join(map(str, k)): v for k, v in self.mrt_prob.items()}
        else:
            out["mrt_prob"] = self.mrt_prob
        return out

    @classmethod
    def from_dict(cls, cfg: Mapping) -> "DesignSpec":
        cfg = dict(cfg)
        law = cfg.get("p_z2_given_r")
        if law is not None:
            cfg["p_z2_given_r"] = {int(r): {int(z): float(p) for z, p in row.items()}
                                   for r, row in law.items()}
        mrt = cfg.get("mrt_prob")
        if isinstance(mrt, Mapping):
            cfg["mrt_prob"] = {tuple(int(v) for v in str(k).split(",")): float(p)
                               for k, p in mrt.items()}
        known = {f for f in cls.__dataclass_fields__}
        extra = set(cfg) - known
        if extra:
            raise ValidationError(f"unknown design fields: {sorted(extra)}")
        return cls(**cfg)


def stage2_indicator(t, t_star: int) -> np.ndarray:
    return (np.asarray(t) >= t_star).astype(float)


def enumerate_regimes(design: DesignSpec) -> list[DtrRegime]:
    """Embedded regimes in deterministic order (d1 descending, d2 descending).

    Variants I and II embed all four sign pairs.  Variant III embeds three:
    the ``z1 = -1`` branch has a single second-stage option coded ``d2 = 1``.
    """
    pairs = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    if design.smart_variant == "III":
        pairs = pairs[:3]
    return [DtrRegime(d1, d2) for d1, d2 in pairs]


def z2_probability(design: DesignSpec, z1, r, z2) -> np.ndarray:
    """P(Z2 = z2 | R = r, Z1 = z1) under the design (vectorized)."""
    z1 = np.asarray(z1)
    r = np.asarray(r)
    z2 = np.asarray(z2)
    out = np.zeros(np.broadcast(z1, r, z2).shape)
    for rr, row in design.p_z2_given_r.items():
        for zz, p in row.items():
            out = np.where((r == rr) & (z2 == zz), p, out)
    if design.smart_variant == "III":
        fixed = (r == 0) & (z1 == -1)
        out = np.where(fixed, np.where(z2 == 1, 1.0, 0.0), out)
    return out


def consistency_matrix(z1, r, z2, design: DesignSpec,
                       regimes: Sequence[DtrRegime] | None = None) -> np.ndarray:
    """Boolean ``(n, n_regimes)`` matrix: is person consistent with regime?"""
    regimes = enumerate_regimes(design) if regimes is None else regimes
    z1 = np.asarray(z1)[:, None]
    r = np.asarray(r)[:, None]
    z2 = np.asarray(z2)[:, None]
    d1 = np.array([g.d1 for g in regimes])[None, :]
    d2 = np.array([g.d2 for g in regimes])[None, :]
    same_first = z1 == d1
    if design.smart_variant == "I":
        second = z2 == d2
    elif design.smart_variant == "II":
        second = (r == 1) | (z2 == d2)
    else:
        second = (r == 1) | (z2 == d2)
    return same_first & second


def _check_person(z1, r, z2, design: DesignSpec, who: str) -> None:
    if z1 not in (-1, 1):
        raise ValidationError(f"z1 must be -1 or 1 for {who}, got {z1}")
    if r not in (0, 1):
        raise ValidationError(f"r must be 0 or 1 for {who}, got {r}")
    if float(z2_probability(design, z1, r, z2)) <= 0.0:
        raise ValidationError(
            f"inconsistent record for {who}: (z1={z1}, r={r}, z2={z2}) has zero "
            f"probability under SMART variant {design.smart_variant}")


def consistent_regimes(traj: "Trajectory", design: DesignSpec) -> list[DtrRegime]:
    """Regimes an observed trajectory is consistent with.

    Raises
    ------
    ValidationError
        If ``(z1, r, z2)`` is impossible under the design.
    """
    _check_person(traj.z1, traj.r, traj.z2, design, f"id={traj.id}")
    regimes = enumerate_regimes(design)
    mask = consistency_matrix([traj.z1], [traj.r], [traj.z2], design, regimes)[0]
    return [g for g, keep in zip(regimes, mask) if keep]


def _readonly(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One individual's observed record.

    ``a`` uses NaN as the "not randomized" sentinel; it is NaN exactly where
    ``i == 0``.  ``p`` may be NaN on ineligible rows.
    """

    id: str
    z1: int
    r: int
    z2: int
    t: np.ndarray
    i: np.ndarray
    a: np.ndarray
    p: np.ndarray
    y: np.ndarray
    x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    x_names: tuple = ()
    x0: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        for name in ("z1", "r", "z2"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "t", _readonly(self.t, int))
        for name in ("i", "a", "p", "y"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.zeros((len(self.t), 0))
        object.__setattr__(self, "x", _readonly(x.reshape(len(self.t), -1)))
        object.__setattr__(self, "x_names", tuple(self.x_names))
        object.__setattr__(self, "x0", MappingProxyType(dict(self.x0)))
        if self.x.shape[1] != len(self.x_names):
            raise ValidationError(f"id={self.id}: state columns do not match x_names")
        n_t = len(self.t)
        for name in ("i", "a", "p", "y"):
            if len(getattr(self, name)) != n_t:
                raise ValidationError(f"id={self.id}: field {name} has wrong length")
        sentinel = np.isnan(self.a)
        if np.any(sentinel != (self.i == 0)):
            bad = int(self.t[np.argmax(sentinel != (self.i == 0))])
            raise ValidationError(
                f"id={self.id},t={bad}: a must be empty exactly when i=0")

    @property
    def n_times(self) -> int:
        return len(self.t)

    def equals(self, other: "Trajectory") -> bool:
        """Bitwise equality of all fields (NaN sentinels compare equal)."""
        if (self.id, self.z1, self.r, self.z2, self.x_names) != (
                other.id, other.z1, other.r, other.z2, other.x_names):
            return False
        if dict(self.x0) != dict(other.x0):
            return False
        for name in ("t", "i", "a", "p", "y", "x"):
            if not np.array_equal(getattr(self, name), getattr(other, name), equal_nan=True):
                return False
        return True


@dataclass(frozen=True, eq=False)
class TrialData:
    """Columnar long-format trial data, one row per (person, decision point).

    Rows are sorted by person then time.  ``pid`` indexes into ``ids``.
    Person-level fields (``z1``, ``r``, ``z2``, ``x0``) are repeated on rows.
    """

    ids: tuple
    pid: np.ndarray
    t: np.ndarray
    z1: np.ndarray
    r: np.ndarray
    z2: np.ndarray
    i: np.ndarray
    a: np.ndarray
    p: np.ndarray
    y: np.ndarray
    x: np.ndarray
    x_names: tuple = ()
    x0: np.ndarray | None = None
    x0_names: tuple = ()
    warnings: tuple = ()

    def __post_init__(self):
        n_rows = len(self.t)
        object.__setattr__(self, "ids", tuple(str(v) for v in self.ids))
        object.__setattr__(self, "pid", _readonly(self.pid, np.int64))
        object.__setattr__(self, "t", _readonly(self.t, np.int64))
        for name in ("z1", "r", "z2"):
            object.__setattr__(self, name, _readonly(getattr(self, name), np.int64))
        for name in ("i", "a", "p", "y"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        x = np.asarray(self.x, dtype=float).reshape(n_rows, -1)
        object.__setattr__(self, "x", _readonly(x))
        x0 = np.zeros((n_rows, 0)) if self.x0 is None else np.asarray(self.x0, float)
        object.__setattr__(self, "x0", _readonly(x0.reshape(n_rows, -1)))
        object.__setattr__(self, "x_names", tuple(self.x_names))
        object.__setattr__(self, "x0_names", tuple(self.x0_names))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if self.x.shape[1] != len(self.x_names) or self.x0.shape[1] != len(self.x0_names):
            raise ValidationError("covariate columns do not match their names")
        if len(self.pid) and np.any(np.diff(self.pid) < 0):
            raise ValidationError("rows must be sorted by person")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def n_rows(self) -> int:
        return len(self.t)

    def person_level(self):
        """Per-person ``(z1, r, z2)`` arrays (first row of each person)."""
        first = np.r_[0, np.flatnonzero(np.diff(self.pid)) + 1]
        return self.z1[first], self.r[first], self.z2[first]

    def validate(self, design: DesignSpec) -> None:
        """Check person-level consistency, eligibility coding and positivity."""
        for name in ("z1", "r", "z2"):
            col = getattr(self, name)
            first = np.r_[0, np.flatnonzero(np.diff(self.pid)) + 1]
            if np.any(col != col[first][self.pid]):
                bad = self.ids[self.pid[np.argmax(col != col[first][self.pid])]]
                raise ValidationError(f"id={bad}: {name} varies within person")
        z1, r, z2 = self.person_level()
        ok = z2_probability(design, z1, r, z2) > 0
        bad_z1 = ~np.isin(z1, (-1, 1))
        bad_r = ~np.isin(r, (0, 1))
        bad = ~ok | bad_z1 | bad_r
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ValidationError(
                f"inconsistent record at id={self.ids[k]}: (z1={z1[k]}, r={r[k]}, "
                f"z2={z2[k]}) impossible under SMART variant {design.smart_variant}")
        elig = self.i == 1
        if np.any(~np.isin(self.i, (0, 1))):
            k = int(np.argmax(~np.isin(self.i, (0, 1))))
            raise ValidationError(f"eligibility must be 0/1 at id={self.ids[self.pid[k]]},t={self.t[k]}")
        sentinel = np.isnan(self.a)
        if np.any(sentinel != ~elig):
            k = int(np.argmax(sentinel != ~elig))
            raise ValidationError(
                f"a must be empty exactly when i=0 (id={self.ids[self.pid[k]]},t={self.t[k]})")
        if np.any(~np.isin(self.a[elig], (0.0, 1.0))):
            k = int(np.flatnonzero(elig)[np.argmax(~np.isin(self.a[elig], (0.0, 1.0)))])
            raise ValidationError(f"a must be 0 or 1 at id={self.ids[self.pid[k]]},t={self.t[k]}")
        p = self.p[elig]
        bad_p = ~((p > 0.0) & (p < 1.0))
        if np.any(bad_p):
            k = int(np.flatnonzero(elig)[np.argmax(bad_p)])
            raise PositivityError(
                f"positivity violated at id={self.ids[self.pid[k]]},t={self.t[k]}")

    @classmethod
    def from_trajectories(cls, trajs: Iterable[Trajectory], warnings=()) -> "TrialData":
        trajs = list(trajs)
        if not trajs:
            raise ValidationError("no trajectories supplied")
        x_names = trajs[0].x_names
        x0_names = tuple(trajs[0].x0.keys())
        for tr in trajs:
            if tr.x_names != x_names or tuple(tr.x0.keys()) != x0_names:
                raise ValidationError(f"id={tr.id}: covariate names differ across persons")
        lens = np.array([tr.n_times for tr in trajs])
        rep = lambda vals: np.repeat(np.asarray(vals), lens)  # noqa: E731
        x0 = np.array([[tr.x0[k] for k in x0_names] for tr in trajs], dtype=float)
        return cls(
            ids=tuple(tr.id for tr in trajs),
            pid=rep(np.arange(len(trajs))),
            t=np.concatenate([tr.t for tr in trajs]),
            z1=rep([tr.z1 for tr in trajs]),
            r=rep([tr.r for tr in trajs]),
            z2=rep([tr.z2 for tr in trajs]),
            i=np.concatenate([tr.i for tr in trajs]),
            a=np.concatenate([tr.a for tr in trajs]),
            p=np.concatenate([tr.p for tr in trajs]),
            y=np.concatenate([tr.y for tr in trajs]),
            x=np.concatenate([tr.x for tr in trajs]),
            x_names=x_names,
            x0=np.repeat(x0.reshape(len(trajs), -1), lens, axis=0),
            x0_names=x0_names,
            warnings=warnings,
        )

    def trajectories(self) -> list[Trajectory]:
        out = []
        bounds = np.r_[0, np.flatnonzero(np.diff(self.pid)) + 1, self.n_rows]
        for k in range(len(bounds) - 1):
            sl = slice(bounds[k], bounds[k + 1])
            out.append(Trajectory(
                id=self.ids[self.pid[bounds[k]]],
                z1=self.z1[bounds[k]], r=self.r[bounds[k]], z2=self.z2[bounds[k]],
                t=self.t[sl], i=self.i[sl], a=self.a[sl], p=self.p[sl], y=self.y[sl],
                x=self.x[sl], x_names=self.x_names,
                x0={name: float(self.x0[bounds[k], j]) for j, name in enumerate(self.x0_names)},
            ))
        return out
