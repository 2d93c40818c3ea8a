"""Ground-truth marginal effects for the simulation scenarios.

Three independent routes are provided:

* :func:`true_effect_analytic` evaluates closed forms that mix over
  responder status with ``P(R = r | Z1)``.
* :func:`true_effect_mc` intervenes on the simulator (forced regime and
  forced treatment) and averages paired potential outcomes.
* :func:`ipw_vs_iterated` compares an inverse-probability weighted mean of
  observed outcomes against an iterated conditional-mean functional on the
  same observational datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .design import DtrRegime
from .errors import ValidationError
from .sim import (RESPONSE_RATE_I, SimConfig, mrt_probability, rep_rng,
                  responder_logit_offset, simulate)

__all__ = [
    "KINDS",
    "TruthCell",
    "TruthTable",
    "eval_time",
    "responder_probability",
    "marginal_mean",
    "true_effect_analytic",
    "true_effect_mc",
    "true_effects_mc",
    "ipw_vs_iterated",
    "truth_table",
]

KINDS = ("ID", "IA", "AD", "AA")
REGIMES = tuple(DtrRegime(*p) for p in ((1, 1), (1, -1), (-1, 1), (-1, -1)))


def eval_time(config: SimConfig, stage: int) -> int:
    """Decision point used for a stage: two before or two after ``t_star``."""
    if stage not in (1, 2):
        raise ValidationError(f"stage must be 1 or 2, got {stage}")
    return config.t_star - 2 if stage == 1 else config.t_star + 2


def responder_probability(config: SimConfig, z1: int) -> float:
    """``P(R = 1 | Z1 = z1)``.

    Scenario II is computed exactly by enumerating the initial state (two
    points) and the last stage-1 treatment (two points).
    """
    if config.scenario == "I":
        return RESPONSE_RATE_I[int(z1)]
    q1 = expit(0.1)                       # P(X_1 = 2), previous treatment coded 0
    p_last = mrt_probability("II", z1, 0, False)
    total = 0.0
    for x1, px in ((2.0, q1), (-2.0, 1.0 - q1)):
        xt1 = x1 - (4.0 * q1 - 2.0)
        for a, pa in ((1, p_last), (0, 1.0 - p_last)):
            total += px * pa * expit(responder_logit_offset(z1) + xt1 + (a - p_last))
    return float(total)


def marginal_mean(config: SimConfig, regime, stage: int, a=None) -> float:
    """Mean outcome under a regime with treatment fixed at ``a``.

    ``a=None`` averages over the randomized treatment, which removes the
    treatment term because it is centered at the randomization probability.
    """
    b, g = config.beta_star, config.gamma_star
    d1, d2 = tuple(regime)
    if stage == 1:
        eff = b[0] + b[1] * d1
        main = g[0] + g[1] * d1
        p = mrt_probability(config.scenario, d1, 0, False)
        return main + (0.0 if a is None else (a - p) * eff)
    pr = responder_probability(config, d1)
    branches = [(1.0 - pr, d2), (pr, 0)]
    if config.smart_variant == "I":
        branches = [(1.0, d2)]
    out = 0.0
    for w, z2 in branches:
        eff = b[0] + b[1] * d1 + b[2] * z2 + b[3] * d1 * z2
        main = g[0] + g[1] * d1 + g[2] * z2 + g[3] * d1 * z2
        p = mrt_probability(config.scenario, d1, z2, True)
        out += w * (main + (0.0 if a is None else (a - p) * eff))
    return float(out)


def _check(kind, stage, regimes, a_fixed):
    kind = kind.upper()
    if kind not in KINDS:
        raise ValidationError(f"unknown contrast kind {kind!r}")
    if stage not in (1, 2):
        raise ValidationError(f"stage must be 1 or 2, got {stage}")
    if kind in ("ID", "AD") and len(regimes) != 2:
        raise ValidationError(f"{kind} needs two regimes")
    if kind == "IA" and len(regimes) < 1:
        raise ValidationError("IA needs a regime")
    if kind == "ID" and a_fixed not in (0, 1):
        raise ValidationError("ID needs a_fixed in {0, 1}")
    return kind


def true_effect_analytic(config: SimConfig, kind: str, stage: int, regimes=(),
                         a_fixed=None) -> float:
    """Closed-form true value of a contrast.

    Parameters
    ----------
    config : SimConfig
    kind : {"ID", "IA", "AD", "AA"}
    stage : {1, 2}
    regimes : sequence of (d1, d2)
        In stage 1 only ``d1`` matters.
    a_fixed : {0, 1}, optional
        Treatment level for ID.
    """
    kind = _check(kind, stage, regimes, a_fixed)
    if kind == "AA":
        regs = REGIMES if stage == 2 else (DtrRegime(1, 1), DtrRegime(-1, 1))
        return float(np.mean([marginal_mean(config, d, stage, 1) - marginal_mean(config, d, stage, 0)
                              for d in regs]))
    if kind == "IA":
        d = regimes[0]
        return marginal_mean(config, d, stage, 1) - marginal_mean(config, d, stage, 0)
    d, dref = regimes
    a = a_fixed if kind == "ID" else None
    return marginal_mean(config, d, stage, a) - marginal_mean(config, dref, stage, a)


def _chunk_sizes(n_mc: int, chunk: int):
    sizes = [chunk] * (n_mc // chunk)
    if n_mc % chunk:
        sizes.append(n_mc % chunk)
    return sizes


def _potential_outcome(config, regime, t, a, rng, n):
    force = None if a is None else (t, a)
    out = simulate(config, rng, n, regime=regime, force_a=force, t_stop=t)
    return out.y[:, t - 1]


def _arms(config, kind, stage, regimes, a_fixed):
    """Forced (regime, a, weight) arms whose weighted sum is the contrast."""
    if kind == "AA":
        regs = REGIMES if stage == 2 else (DtrRegime(1, 1), DtrRegime(-1, 1))
        return [(d, 1, 1.0 / len(regs)) for d in regs] + [(d, 0, -1.0 / len(regs)) for d in regs]
    if kind == "IA":
        return [(regimes[0], 1, 1.0), (regimes[0], 0, -1.0)]
    if kind == "ID":
        return [(regimes[0], a_fixed, 1.0), (regimes[1], a_fixed, -1.0)]
    return [(regimes[0], None, 1.0), (regimes[1], None, -1.0)]


def true_effects_mc(config: SimConfig, contrasts, n_mc: int = 200_000, seed: int = 0,
                    chunk: int = 50_000) -> list[tuple[float, float]]:
    """Monte-Carlo truth for many contrasts at once.

    Potential outcomes are simulated once per distinct (regime, treatment,
    decision point) arm and chunk and shared across contrasts.  Each chunk
    reuses one random stream for every arm (common random numbers), so
    paired differences have small variance.  Chunks use disjoint streams of
    the ``truth`` domain.

    Parameters
    ----------
    contrasts : sequence
        Objects with ``kind``, ``stage``, ``regimes`` and ``a_fixed``
        attributes, or ``(kind, stage, regimes, a_fixed)`` tuples.

    Returns
    -------
    list of (value, mc_se)
    """
    specs = []
    for c in contrasts:
        kind, stage, regimes, a_fixed = (c if isinstance(c, tuple)
                                         else (c.kind, c.stage, c.regimes, c.a_fixed))
        kind = _check(kind, stage, regimes, a_fixed)
        regimes = tuple(DtrRegime(*r) for r in regimes)
        t = eval_time(config, stage)
        specs.append([(d, a, w, t) for d, a, w in _arms(config, kind, stage, regimes, a_fixed)])
    diffs = [[] for _ in specs]
    for c_idx, size in enumerate(_chunk_sizes(n_mc, chunk)):
        cache = {}
        for k, arms in enumerate(specs):
            diff = np.zeros(size)
            for d, a, w, t in arms:
                key = (d, a, t)
                if key not in cache:
                    cache[key] = _potential_outcome(config, d, t, a, rep_rng(seed, c_idx, "truth"), size)
                diff += w * cache[key]
            diffs[k].append(diff)
    out = []
    for parts in diffs:
        diff = np.concatenate(parts)
        out.append((float(diff.mean()), float(diff.std(ddof=1) / np.sqrt(len(diff)))))
    return out


def true_effect_mc(config: SimConfig, kind: str, stage: int, regimes=(), a_fixed=None,
                   n_mc: int = 200_000, seed: int = 0, chunk: int = 50_000):
    """Monte-Carlo truth of one contrast by intervening on the simulator.

    Returns
    -------
    value : float
    mc_se : float
    """
    return true_effects_mc(config, [(kind, stage, regimes, a_fixed)], n_mc, seed, chunk)[0]


def ipw_vs_iterated(config: SimConfig, regime, stage: int, a: int, n: int = 20_000,
                    batches: int = 20, seed: int = 0, t: int | None = None) -> dict:
    """Compare two identification formulas on observational simulated data.

    The IPW functional weights each observed outcome by the inverse
    probability of following ``regime`` and of receiving ``a``.  The
    iterated functional averages cell means ``E[Y | A=a, Z, R]`` over the
    empirical response distribution given ``Z1``.  Both target
    ``E[Y_{t+1}(regime, a)]``.

    Returns
    -------
    dict
        ``ipw``, ``iterated``, ``diff`` (batch means) and ``diff_se``.
    """
    t = eval_time(config, stage) if t is None else t
    d1, d2 = tuple(regime)
    ipw_vals, it_vals = [], []
    for k in range(batches):
        out = simulate(config, rep_rng(seed, k, "ipw"), n)
        y, ak, pk = out.y[:, t - 1], out.a[:, t - 1], out.p[:, t - 1]
        z1, r, z2 = out.z1, out.r, out.z2
        pa = np.where(ak == 1, pk, 1.0 - pk)
        p_z1 = 0.5
        if stage == 1:
            consistent = z1 == d1
            w_s = consistent / p_z1
        else:
            rerand = (r == 0) if config.smart_variant == "II" else np.ones(n, bool)
            consistent = (z1 == d1) & np.where(rerand, z2 == d2, True)
            w_s = consistent / (p_z1 * np.where(rerand, 0.5, 1.0))
        w = w_s * (ak == a) / pa
        ipw_vals.append(float(np.mean(w * y)))
        sel = z1 == d1
        if stage == 1:
            cell = sel & (ak == a)
            it_vals.append(float(y[cell].mean()))
        else:
            pr1 = r[sel].mean()
            val = 0.0
            for rv, z2v, wr in ((0, d2, 1.0 - pr1), (1, 0 if config.smart_variant == "II" else d2, pr1)):
                cell = sel & (r == rv) & (z2 == z2v) & (ak == a)
                val += wr * y[cell].mean()
            it_vals.append(float(val))
    ipw_vals, it_vals = np.array(ipw_vals), np.array(it_vals)
    diff = ipw_vals - it_vals
    return {"ipw": float(ipw_vals.mean()), "iterated": float(it_vals.mean()),
            "diff": float(diff.mean()), "diff_se": float(diff.std(ddof=1) / np.sqrt(batches)),
            "ipw_se": float(ipw_vals.std(ddof=1) / np.sqrt(batches))}


@dataclass(frozen=True)
class TruthCell:
    stage: int
    kind: str
    regimes: tuple
    a_fixed: int | None
    value: float
    provenance: str = "analytic"
    mc_se: float | None = None

    @property
    def label(self) -> str:
        regs = " vs ".join(DtrRegime(*r).label for r in self.regimes) if self.regimes else "avg"
        a = "" if self.a_fixed is None else f" a={self.a_fixed}"
        return f"{self.kind} stage{self.stage} {regs}{a}"


@dataclass
class TruthTable:
    """Collection of true contrast values keyed by (stage, kind, regimes, a_fixed)."""

    cells: list = field(default_factory=list)

    def add(self, cell: TruthCell) -> None:
        self.cells.append(cell)

    def lookup(self, stage, kind, regimes, a_fixed=None, provenance="analytic") -> float:
        key = (stage, kind.upper(), tuple(tuple(r) for r in regimes), a_fixed, provenance)
        for c in self.cells:
            if (c.stage, c.kind, c.regimes, c.a_fixed, c.provenance) == key:
                return c.value
        raise KeyError(key)

    def to_frame(self):
        import pandas as pd

        return pd.DataFrame([{
            "stage": c.stage, "kind": c.kind, "label": c.label,
            "regimes": ";".join(f"{r[0]},{r[1]}" for r in c.regimes),
            "a_fixed": "" if c.a_fixed is None else c.a_fixed,
            "value": c.value, "provenance": c.provenance,
            "mc_se": "" if c.mc_se is None else c.mc_se} for c in self.cells])


def truth_table(config: SimConfig, contrasts, mc: bool = False, n_mc: int = 200_000,
                seed: int = 0) -> TruthTable:
    """Analytic (and optionally Monte-Carlo) truth for a list of contrast definitions.

    ``contrasts`` holds objects with ``stage``, ``kind``, ``regimes`` and
    ``a_fixed`` attributes, such as :class:`smartmrt.harness.ContrastDef`.
    """
    table = TruthTable()
    items = [(c.stage, c.kind.upper(), tuple(tuple(r) for r in c.regimes), c.a_fixed)
             for c in contrasts]
    mc_vals = true_effects_mc(config, [(k, s, r, a) for s, k, r, a in items], n_mc, seed) if mc else []
    for j, (stage, kind, regs, a_fixed) in enumerate(items):
        val = true_effect_analytic(config, kind, stage, regs, a_fixed)
        table.add(TruthCell(stage, kind, regs, a_fixed, val))
        if mc:
            v, se = mc_vals[j]
            table.add(TruthCell(stage, kind, regs, a_fixed, v, "mc", se))
    return table
