"""Wide-format longitudinal panel with per-cell missingness flags.

One row per subject: baseline risk factor ``V``, confounders ``L1`` (binary)
and ``L2`` (continuous) and treatment ``A`` at occasions 0, 1, 2, and an
end-of-follow-up outcome ``Y``. Missing cells hold ``nan`` in the value
arrays and ``False`` in the matching ``obs_*`` array.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

K = 3
OCCASIONS = (0, 1, 2)
MISSING_TOKENS = ("", "NA")

COLUMNS = (
    ["id", "V"]
    + [f"L1_{k}" for k in OCCASIONS]
    + [f"L2_{k}" for k in OCCASIONS]
    + [f"A_{k}" for k in OCCASIONS]
    + ["Y"]
)


class Pattern(enum.IntEnum):
    BOTH_OBSERVED = 0
    L1_MISSING = 1
    L2_MISSING = 2
    BOTH_MISSING = 3


@dataclass(frozen=True)
class MissingnessPattern:
    k: int
    pattern: Pattern


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    ids: np.ndarray
    V: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    obs_L1: np.ndarray
    obs_L2: np.ndarray
    obs_A: np.ndarray
    obs_Y: np.ndarray
    # Differential mechanism only: missingness drawn during generation.
    planned_miss_L1: np.ndarray | None = None
    planned_miss_L2: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.V)
        for name in ("ids", "V", "Y", "obs_Y"):
            if np.shape(getattr(self, name)) != (n,):
                raise ValidationError(f"{name} must have length {n}")
        for name in ("L1", "L2", "A", "obs_L1", "obs_L2", "obs_A"):
            if np.shape(getattr(self, name)) != (n, K):
                raise ValidationError(f"{name} must have shape ({n}, {K})")
        set_ = object.__setattr__
        set_(self, "ids", _frozen(self.ids, str))
        for name in ("V", "L1", "L2", "A", "Y"):
            set_(self, name, _frozen(getattr(self, name), float))
        for name in ("obs_L1", "obs_L2", "obs_A", "obs_Y"):
            set_(self, name, _frozen(getattr(self, name), bool))
        for name in ("planned_miss_L1", "planned_miss_L2"):
            if getattr(self, name) is not None:
                set_(self, name, _frozen(getattr(self, name), bool))

    @property
    def n(self) -> int:
        return len(self.V)

    @classmethod
    def from_arrays(cls, V, L1, L2, A, Y, ids=None, obs_L1=None, obs_L2=None, obs_A=None, obs_Y=None, **extra):
        """Build a dataset; missing flags default to ``isfinite`` of the values."""
        V, L1, L2, A, Y = (np.asarray(x, dtype=float) for x in (V, L1, L2, A, Y))
        n = len(V)
        if ids is None:
            ids = np.arange(1, n + 1).astype(str)
        flags = {
            "obs_L1": np.isfinite(L1) if obs_L1 is None else obs_L1,
            "obs_L2": np.isfinite(L2) if obs_L2 is None else obs_L2,
            "obs_A": np.isfinite(A) if obs_A is None else obs_A,
            "obs_Y": np.isfinite(Y) if obs_Y is None else obs_Y,
        }
        return cls(ids=ids, V=V, L1=L1, L2=L2, A=A, Y=Y, **flags, **extra)

    def replace(self, **changes) -> "PanelDataset":
        return dataclasses.replace(self, **changes)

    def subset(self, idx) -> "PanelDataset":
        """Rows selected by a boolean mask or an index array (duplicates allowed)."""
        idx = np.asarray(idx)
        changes = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            changes[f.name] = None if val is None else val[idx]
        return PanelDataset(**changes)

    def fully_observed(self) -> bool:
        return bool(self.obs_L1.all() and self.obs_L2.all() and self.obs_A.all() and self.obs_Y.all())

    def same_values(self, other: "PanelDataset") -> bool:
        """Cell-by-cell equality of values (nan == nan) and flags."""
        pairs = [(getattr(self, f), getattr(other, f)) for f in ("V", "L1", "L2", "A", "Y")]
        flags = [(getattr(self, f), getattr(other, f)) for f in ("obs_L1", "obs_L2", "obs_A", "obs_Y")]
        return (
            self.n == other.n
            and np.array_equal(self.ids, other.ids)
            and all(np.array_equal(a, b, equal_nan=True) for a, b in pairs)
            and all(np.array_equal(a, b) for a, b in flags)
        )


def validate(data: PanelDataset, strict: bool = True) -> None:
    """Check value ranges and treatment absorption.

    ``strict`` (simulated data) additionally requires observed treatment,
    outcome and baseline confounders.
    """
    if not np.all(np.isfinite(data.V)):
        raise ValidationError("V must be fully observed")
    for name, obs in (("L1", data.obs_L1), ("L2", data.obs_L2), ("A", data.obs_A)):
        vals = getattr(data, name)
        if np.any(~np.isfinite(vals[obs])):
            raise ValidationError(f"{name} flagged observed but not finite")
    if np.any(~np.isfinite(data.Y[data.obs_Y])):
        raise ValidationError("Y flagged observed but not finite")
    for name, obs in (("L1", data.obs_L1), ("A", data.obs_A)):
        vals = getattr(data, name)[obs]
        if np.any((vals != 0) & (vals != 1)):
            bad = np.argwhere(obs & ~np.isin(getattr(data, name), (0.0, 1.0)))[0]
            raise ValidationError(f"{name}_{bad[1]} out of range for subject {data.ids[bad[0]]}: must be 0 or 1")
    for k in (1, 2):
        for j in range(k):
            both = data.obs_A[:, j] & data.obs_A[:, k]
            broken = both & (data.A[:, j] == 1) & (data.A[:, k] == 0)
            if broken.any():
                i = int(np.argmax(broken))
                raise ValidationError(
                    f"treatment not absorbing for subject {data.ids[i]}: A_{j}=1 but A_{k}=0"
                )
    if strict:
        if not data.obs_A.all() or not data.obs_Y.all():
            raise ValidationError("strict validation requires fully observed A and Y")
        if not (data.obs_L1[:, 0].all() and data.obs_L2[:, 0].all()):
            raise ValidationError("strict validation requires observed baseline confounders")


def _parse_cell(text: str, row: int, column: str):
    if text in MISSING_TOKENS:
        return np.nan, False
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", row=row, column=column) from None
    if not np.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", row=row, column=column)
    return value, True


def load_panel_csv(source, schema: dict | None = None, strict: bool = False) -> PanelDataset:
    """Read the wide CSV layout.

    ``source`` is a path, a text stream or a byte stream. ``schema`` maps
    canonical column names (``id``, ``V``, ``L1_0`` ...) to header names in
    the file. Empty cells and the literal ``NA`` are missing.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8-sig") as fh:
            return load_panel_csv(fh, schema=schema, strict=strict)
    if isinstance(source, io.BufferedIOBase) or "b" in getattr(source, "mode", ""):
        source = io.TextIOWrapper(source, encoding="utf-8-sig", newline="")
    schema = {c: (schema or {}).get(c, c) for c in COLUMNS}
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty file: header row missing") from None
    header = [h.strip() for h in header]
    missing = [schema[c] for c in COLUMNS if schema[c] not in header]
    if missing:
        raise SchemaError(f"missing required columns: {', '.join(missing)}")
    pos = {c: header.index(schema[c]) for c in COLUMNS}

    ids, V, Y, obsY = [], [], [], []
    mats = {name: [] for name in ("L1", "L2", "A")}
    flags = {name: [] for name in ("L1", "L2", "A")}
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=rowno)
        row = [c.strip() for c in row]
        ident = row[pos["id"]]
        if ident in MISSING_TOKENS:
            raise ParseError("missing subject id", row=rowno, column=schema["id"])
        ids.append(ident)
        v, ok = _parse_cell(row[pos["V"]], rowno, schema["V"])
        if not ok:
            raise ValidationError(f"V missing at row {rowno}; the baseline risk factor must be observed")
        V.append(v)
        for name in ("L1", "L2", "A"):
            vals, obs = [], []
            for k in OCCASIONS:
                col = f"{name}_{k}"
                x, ok = _parse_cell(row[pos[col]], rowno, schema[col])
                vals.append(x)
                obs.append(ok)
            mats[name].append(vals)
            flags[name].append(obs)
        y, ok = _parse_cell(row[pos["Y"]], rowno, schema["Y"])
        Y.append(y)
        obsY.append(ok)
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate subject ids")

    def mat(name):
        return np.array(mats[name], dtype=float).reshape(-1, K)

    def flag(name):
        return np.array(flags[name], dtype=bool).reshape(-1, K)

    data = PanelDataset(
        ids=np.array(ids, dtype=str),
        V=np.array(V, dtype=float),
        L1=mat("L1"),
        L2=mat("L2"),
        A=mat("A"),
        Y=np.array(Y, dtype=float),
        obs_L1=flag("L1"),
        obs_L2=flag("L2"),
        obs_A=flag("A"),
        obs_Y=np.array(obsY, dtype=bool),
    )
    validate(data, strict=strict)
    return data


def _fmt(x: float, observed: bool, binary: bool = False) -> str:
    if not observed:
        return "NA"
    if binary:
        return str(int(x))
    return repr(float(x))


def write_panel_csv(data: PanelDataset, dest) -> None:
    """Write the wide CSV layout; floats use ``repr`` so a reload is bit-exact."""
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_panel_csv(data, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(COLUMNS)
    for i in range(data.n):
        row = [data.ids[i], _fmt(data.V[i], True)]
        row += [_fmt(data.L1[i, k], data.obs_L1[i, k], binary=True) for k in OCCASIONS]
        row += [_fmt(data.L2[i, k], data.obs_L2[i, k]) for k in OCCASIONS]
        row += [_fmt(data.A[i, k], data.obs_A[i, k], binary=True) for k in OCCASIONS]
        row.append(_fmt(data.Y[i], data.obs_Y[i]))
        w.writerow(row)


def patterns(data: PanelDataset, k: int) -> np.ndarray:
    """Vector of :class:`Pattern` codes for every subject at occasion ``k``."""
    return (~data.obs_L1[:, k]).astype(int) + 2 * (~data.obs_L2[:, k]).astype(int)


def pattern_of(data: PanelDataset, subject: int, k: int) -> MissingnessPattern:
    if k not in (1, 2):
        raise ValueError("patterns are defined for occasions 1 and 2")
    return MissingnessPattern(k=k, pattern=Pattern(int(patterns(data, k)[subject])))


def complete_case_mask(data: PanelDataset) -> np.ndarray:
    return (
        data.obs_L1.all(axis=1) & data.obs_L2.all(axis=1) & data.obs_A.all(axis=1) & data.obs_Y
    )
