"""Run configuration read from a TOML document.

Every recognised key is listed in :data:`KEYS` with its default and a one
line description; the CLI prints this table in ``--help``.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .dgp import MECHANISMS, DGPCoefficients, calibrate_defaults
from .errors import ConfigError
from .harness import METHOD_ORDER, MethodOptions
from .missing import METHODS
from .missing.ipmw import TREATMENT_FITS

# (section, key): (default, description)
KEYS = {
    ("grid", "scenarios"): (list(MECHANISMS), "missingness mechanisms to simulate"),
    ("grid", "methods"): (list(METHODS), "missing-data methods to compare"),
    ("grid", "full_data"): (False, "also fit FULL, UNADJ and ADJ on the latent data"),
    ("grid", "n"): (2000, "subjects per simulated dataset"),
    ("grid", "replications"): (500, "replications per scenario"),
    ("grid", "seed"): (20190601, "master seed"),
    ("grid", "n_oracle"): (1_000_000, "subjects in the g-computation oracle"),
    ("grid", "threads"): (0, "worker processes; 0 uses all available cores"),
    ("grid", "target_missing_rate"): (0.40, "share of subjects with a missing confounder per occasion"),
    ("output", "dir"): ("results", "output directory"),
    ("output", "format"): ("csv", "summary format: csv or markdown"),
    ("output", "raw"): (True, "also write per-replication estimates (raw.csv)"),
    ("methods", "mi_imputations"): (10, "imputations M for MI"),
    ("methods", "mi_cycles"): (10, "chained-equation sweeps per imputation"),
    ("methods", "truncate"): ([], "percentile pair for weight truncation, e.g. [1, 99]; [] disables"),
    ("methods", "ipmw_stabilized"): (False, "stabilise the IPMW missingness weights"),
    ("methods", "ipmw_treatment_fit"): ("sequential", "IPMW treatment model: sequential or complete-case"),
    ("analyze", "bootstrap_B"): (500, "bootstrap resamples for analyze; 0 gives model-based intervals"),
    ("dgp", "recalibrate"): (False, "recompute calibrated intercepts after applying [dgp] overrides"),
}

DGP_FIELDS = {
    f.name: f for f in dataclasses.fields(DGPCoefficients) if f.name not in ("missingness", "target_missing_rate")
}


@dataclass(frozen=True)
class RunConfig:
    scenarios: tuple = tuple(MECHANISMS)
    methods: tuple = tuple(METHODS)
    full_data: bool = False
    n: int = 2000
    replications: int = 500
    seed: int = 20190601
    n_oracle: int = 1_000_000
    threads: int = 0
    target_missing_rate: float = 0.40
    out: Path = Path("results")
    format: str = "csv"
    raw: bool = True
    options: MethodOptions = MethodOptions()
    bootstrap_B: int = 500
    dgp: DGPCoefficients = field(default_factory=DGPCoefficients)
    source: str | None = None

    @property
    def all_methods(self) -> tuple:
        extra = ("FULL", "UNADJ", "ADJ") if self.full_data else ()
        return tuple(m for m in METHOD_ORDER if m in set(self.methods) | set(extra))


def _toml(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml(v) for v in value) + "]"
    return repr(value)


def help_text() -> str:
    lines = ["configuration keys (TOML, section.key = default):"]
    for (sec, key), (default, desc) in KEYS.items():
        lines.append(f"  {sec}.{key} = {_toml(default)}\n      {desc}")
    lines.append("  dgp.<field> = value\n      override any DGPCoefficients field, e.g. dgp.trt_L1 = 1.5")
    return "\n".join(lines)


def _check(value, kind, key, path):
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"expected {kind.__name__}, got {value!r}", key=key, path=path)
    return float(value) if kind is float else value


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Parse and validate a configuration file (or TOML ``text``)."""
    src = str(path) if path is not None else None
    if text is None and path is None:
        doc = {}
    else:
        try:
            doc = tomllib.loads(text) if text is not None else tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc}", path=src) from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}", path=src) from exc
    return from_mapping(doc, source=src)


def from_mapping(doc: dict, source: str | None = None) -> RunConfig:
    values = {}
    for sec, body in doc.items():
        if not isinstance(body, dict):
            raise ConfigError("top-level keys must be sections such as [grid]", key=sec, path=source)
        for key, value in body.items():
            name = f"{sec}.{key}"
            if sec == "dgp" and key in DGP_FIELDS:
                values[name] = value
            elif (sec, key) in KEYS:
                default = KEYS[(sec, key)][0]
                values[name] = value if isinstance(default, list) else _check(value, type(default), name, source)
            else:
                raise ConfigError("unknown configuration key", key=name, path=source)

    def get(name):
        sec, key = name.split(".")
        return values.get(name, KEYS[(sec, key)][0])

    scenarios = get("grid.scenarios")
    if not isinstance(scenarios, list) or not scenarios:
        raise ConfigError("expected a non-empty list of mechanisms", key="grid.scenarios", path=source)
    for s in scenarios:
        if s not in MECHANISMS:
            raise ConfigError(f"unknown mechanism {s!r}; expected one of {list(MECHANISMS)}", key="grid.scenarios", path=source)
    methods = get("grid.methods")
    if not isinstance(methods, list):
        raise ConfigError("expected a list of methods", key="grid.methods", path=source)
    for m in methods:
        if m not in METHOD_ORDER:
            raise ConfigError(f"unknown method {m!r}; expected one of {list(METHOD_ORDER)}", key="grid.methods", path=source)
    for name, lo in (("grid.n", 1), ("grid.replications", 2), ("grid.n_oracle", 1), ("methods.mi_imputations", 2), ("methods.mi_cycles", 1), ("grid.threads", 0)):
        if get(name) < lo:
            raise ConfigError(f"must be at least {lo}", key=name, path=source)
    rate = get("grid.target_missing_rate")
    if not 0 < rate < 1:
        raise ConfigError("must lie strictly between 0 and 1", key="grid.target_missing_rate", path=source)
    if get("output.format") not in ("csv", "markdown"):
        raise ConfigError("must be 'csv' or 'markdown'", key="output.format", path=source)
    fit = get("methods.ipmw_treatment_fit")
    if fit not in TREATMENT_FITS:
        raise ConfigError(f"must be one of {list(TREATMENT_FITS)}", key="methods.ipmw_treatment_fit", path=source)
    truncate = get("methods.truncate")
    if truncate:
        if not (isinstance(truncate, list) and len(truncate) == 2 and 0 <= truncate[0] < truncate[1] <= 100):
            raise ConfigError("expected [] or [lo, hi] with 0 <= lo < hi <= 100", key="methods.truncate", path=source)
        truncate = (float(truncate[0]), float(truncate[1]))
    else:
        truncate = None
    B = get("analyze.bootstrap_B")
    if B != 0 and B < 100:
        raise ConfigError("must be 0 or at least 100", key="analyze.bootstrap_B", path=source)

    coef = DGPCoefficients()
    overrides = {}
    for name, value in values.items():
        sec, key = name.split(".")
        if sec == "dgp" and key in DGP_FIELDS:
            current = getattr(coef, key)
            overrides[key] = tuple(value) if isinstance(current, tuple) else value
    try:
        coef = coef.replace(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), key="dgp", path=source) from exc
    if get("dgp.recalibrate") or rate != KEYS[("grid", "target_missing_rate")][0]:
        coef = calibrate_defaults(coef, target_missing_rate=rate)

    return RunConfig(
        scenarios=tuple(scenarios),
        methods=tuple(methods),
        full_data=get("grid.full_data"),
        n=get("grid.n"),
        replications=get("grid.replications"),
        seed=get("grid.seed"),
        n_oracle=get("grid.n_oracle"),
        threads=get("grid.threads"),
        target_missing_rate=rate,
        out=Path(get("output.dir")),
        format=get("output.format"),
        raw=get("output.raw"),
        options=MethodOptions(
            M=get("methods.mi_imputations"),
            cycles=get("methods.mi_cycles"),
            truncate=truncate,
            ipmw_stabilized=get("methods.ipmw_stabilized"),
            ipmw_treatment_fit=fit,
        ),
        bootstrap_B=B,
        dgp=coef,
        source=source,
    )
