"""Long-format CSV ingestion and emission.

Schema: ``id,t,x0_*,z1,r,z2,x_*,i,a,p,y_next``.  ``a`` is empty exactly
when ``i = 0``.  Floats are written with shortest round-trip formatting so
that ``read_trial_csv(write_trial_csv(d))`` reproduces ``d`` bit for bit.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import pandas as pd

from .design import DesignSpec, Trajectory, TrialData
from .errors import PositivityError, ValidationError

__all__ = ["read_trial_csv", "write_trial_csv", "ingest_csv", "MANDATORY_COLUMNS"]

logger = logging.getLogger(__name__)

MANDATORY_COLUMNS = ("id", "t", "z1", "r", "z2", "i", "a", "p", "y_next")


def _line(idx) -> int:
    # header is line 1
    return int(idx) + 2


def read_trial_csv(path, design: DesignSpec | None = None) -> TrialData:
    """Read and validate a long-format trial CSV.

    Parameters
    ----------
    path : path-like
        CSV file with a header row.
    design : DesignSpec, optional
        When given, person-level consistency with the design is also checked.

    Returns
    -------
    TrialData
        Rows grouped by id (in order of first appearance) and sorted by t.
        Non-fatal findings are collected in ``TrialData.warnings``.

    Raises
    ------
    ValidationError
        Missing column, duplicate ``(id, t)``, non-monotone ``t``, bad
        eligibility sentinel.
    PositivityError
        ``p`` outside (0, 1) on an eligible row.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    try:
        df = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip",
                         keep_default_na=False, na_values=[""])
    except pd.errors.EmptyDataError as exc:
        raise ValidationError(f"{path}: empty file") from exc
    missing = [c for c in MANDATORY_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing mandatory column(s): {', '.join(missing)}")
    x0_cols = [c for c in df.columns if c.startswith("x0_")]
    x_cols = [c for c in df.columns if c.startswith("x_")]
    warnings: list[str] = []

    for col in ("t", "z1", "r", "z2", "i"):
        vals = pd.to_numeric(df[col], errors="coerce")
        bad = vals.isna() | (vals != np.round(vals))
        if bad.any():
            k = int(np.flatnonzero(bad.to_numpy())[0])
            raise ValidationError(f"line {_line(k)}: column {col} must hold integers")
        df[col] = vals.astype(np.int64)
    for col in ["a", "p", "y_next"] + x0_cols + x_cols:
        df[col] = pd.to_numeric(df[col], errors="coerce")

    dup = df.duplicated(subset=["id", "t"], keep="first")
    if dup.any():
        k = int(np.flatnonzero(dup.to_numpy())[0])
        raise ValidationError(
            f"line {_line(k)}: duplicate (id, t) = ({df['id'].iloc[k]}, {df['t'].iloc[k]})")
    step = df.groupby("id", sort=False)["t"].diff()
    bad = step <= 0
    if bad.any():
        k = int(np.flatnonzero(bad.to_numpy())[0])
        raise ValidationError(
            f"line {_line(k)}: non-monotone t within id={df['id'].iloc[k]}")

    elig = df["i"].to_numpy()
    if np.any(~np.isin(elig, (0, 1))):
        k = int(np.flatnonzero(~np.isin(elig, (0, 1)))[0])
        raise ValidationError(f"line {_line(k)}: i must be 0 or 1")
    a = df["a"].to_numpy(dtype=float)
    mismatch = np.isnan(a) != (elig == 0)
    if np.any(mismatch):
        k = int(np.flatnonzero(mismatch)[0])
        raise ValidationError(
            f"line {_line(k)}: a must be empty exactly when i=0 "
            f"(id={df['id'].iloc[k]},t={df['t'].iloc[k]})")
    p = df["p"].to_numpy(dtype=float)
    on = elig == 1
    bad_p = on & ~((p > 0.0) & (p < 1.0))
    if np.any(bad_p):
        k = int(np.flatnonzero(bad_p)[0])
        raise PositivityError(
            f"line {_line(k)}: positivity violated at id={df['id'].iloc[k]},t={df['t'].iloc[k]}")
    if np.any(~on & ~np.isnan(p)):
        warnings.append(f"{int(np.sum(~on & ~np.isnan(p)))} ineligible row(s) carry p; ignored")
    if df["y_next"].isna().any():
        k = int(np.flatnonzero(df["y_next"].isna().to_numpy())[0])
        raise ValidationError(f"line {_line(k)}: y_next is missing (no imputation is performed)")
    if df[x0_cols + x_cols].isna().any().any():
        raise ValidationError("covariate columns contain missing values")

    order = pd.unique(df["id"])
    rank = {v: j for j, v in enumerate(order)}
    df["_pid"] = df["id"].map(rank)
    df = df.sort_values(["_pid", "t"], kind="stable").reset_index(drop=True)
    counts = df.groupby("_pid").size()
    if counts.nunique() > 1:
        warnings.append("persons have different numbers of decision points")
    for w in warnings:
        logger.warning("%s: %s", path.name, w)

    data = TrialData(
        ids=tuple(order),
        pid=df["_pid"].to_numpy(),
        t=df["t"].to_numpy(),
        z1=df["z1"].to_numpy(),
        r=df["r"].to_numpy(),
        z2=df["z2"].to_numpy(),
        i=df["i"].to_numpy(dtype=float),
        a=df["a"].to_numpy(dtype=float),
        p=np.where(df["i"].to_numpy() == 1, df["p"].to_numpy(dtype=float), np.nan),
        y=df["y_next"].to_numpy(dtype=float),
        x=df[x_cols].to_numpy(dtype=float),
        x_names=tuple(c[2:] for c in x_cols),
        x0=df[x0_cols].to_numpy(dtype=float),
        x0_names=tuple(c[3:] for c in x0_cols),
        warnings=tuple(warnings),
    )
    if design is not None:
        data.validate(design)
    return data


def ingest_csv(path, design: DesignSpec | None = None) -> list[Trajectory]:
    """Read a trial CSV and return one :class:`Trajectory` per person."""
    return read_trial_csv(path, design).trajectories()


def write_trial_csv(data: TrialData | list, path) -> Path:
    """Write trial data in the long CSV schema (shortest round-trip floats)."""
    if not isinstance(data, TrialData):
        data = TrialData.from_trajectories(data)
    path = Path(path)
    cols: dict[str, object] = {"id": np.asarray(data.ids, dtype=object)[data.pid], "t": data.t}
    for j, name in enumerate(data.x0_names):
        cols[f"x0_{name}"] = data.x0[:, j]
    cols.update(z1=data.z1, r=data.r, z2=data.z2)
    for j, name in enumerate(data.x_names):
        cols[f"x_{name}"] = data.x[:, j]
    cols["i"] = data.i.astype(np.int64)
    cols["a"] = pd.array(np.where(np.isnan(data.a), 0, data.a).astype(np.int64), dtype="Int64")
    cols["a"][np.isnan(data.a)] = pd.NA
    cols["p"] = data.p
    cols["y_next"] = data.y
    frame = pd.DataFrame(cols)
    frame.to_csv(path, index=False, na_rep="", lineterminator="\n")
    return path
