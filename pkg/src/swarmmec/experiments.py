"""Config files, parameter sweeps, result CSVs and trend summaries."""

from __future__ import annotations

import ast
import csv
import dataclasses
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from .config import ConfigError, LearnerParams, PropulsionParams, SimConfig
from .rldc import MODES, canonical_mode, run_training

log = logging.getLogger(__name__)

CSV_COLUMNS = ("sweep_param", "value", "mode", "seed", "mean_effi", "sum_over_loop",
               "bits_served", "joules_total", "wall_s")
SWEEP_PARAMS = ("K", "v", "S_L", "q")
# expected shape of each swept curve; q has no stated shape
EXPECTED_SHAPE = {"K": "monotone", "S_L": "monotone", "v": "unimodal"}

_NESTED = {"propulsion": PropulsionParams, "learner": LearnerParams}


# ---- key = value files ---------------------------------------------------------

def _parse_lines(text: str, source: str) -> List[Tuple[int, str, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value")
        out.append((lineno, key, value))
    return out


def _literal(value: str):
    try:
        return ast.literal_eval(value)
    except (ValueError, SyntaxError):
        return value  # bare word, e.g. offload_bound = min


def _coerce(name: str, default, value: str):
    """Convert the text ``value`` to the type of the field's default."""
    v = _literal(value)
    if isinstance(default, bool):
        if isinstance(v, bool):
            return v
        if isinstance(v, str) and v.lower() in ("true", "false"):
            return v.lower() == "true"
        raise ValueError(f"{name} expects true/false")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                return int(v)
            raise ValueError(f"{name} expects an integer")
        return v
    if name == "kappa":
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return float(v)
        if isinstance(v, (tuple, list)):
            return tuple(float(x) for x in v)
        raise ValueError("kappa expects a number or a tuple of numbers")
    if name == "depot_position":
        if v is None or (isinstance(v, str) and v.lower() == "none"):
            return None
        if isinstance(v, (tuple, list)) and len(v) == 2:
            return (float(v[0]), float(v[1]))
        raise ValueError("depot_position expects None or an (x, y) pair")
    if isinstance(default, float):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValueError(f"{name} expects a number")
        return float(v)
    if isinstance(default, str):
        return str(v)
    raise ValueError(f"{name} cannot be set from text")


def _field_defaults(cls) -> Dict[str, object]:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in dataclasses.fields(cls)}


def config_from_pairs(pairs: Iterable[Tuple[int, str, str]], source: str = "<config>",
                      base: Optional[SimConfig] = None) -> SimConfig:
    base = base or SimConfig()
    top = _field_defaults(SimConfig)
    top_changes: Dict[str, object] = {}
    nested_changes: Dict[str, Dict[str, object]] = {k: {} for k in _NESTED}
    for lineno, key, value in pairs:
        try:
            if "." in key:
                group, name = key.split(".", 1)
                if group not in _NESTED:
                    raise KeyError(key)
                defaults = _field_defaults(_NESTED[group])
                if name not in defaults:
                    raise KeyError(key)
                nested_changes[group][name] = _coerce(name, defaults[name], value)
            else:
                if key not in top or key in _NESTED:
                    raise KeyError(key)
                top_changes[key] = _coerce(key, top[key], value)
        except KeyError:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    for group, changes in nested_changes.items():
        if changes:
            top_changes[group] = dataclasses.replace(getattr(base, group), **changes)
    return dataclasses.replace(base, **top_changes).validate()


def parse_config(text: str, source: str = "<config>") -> SimConfig:
    return config_from_pairs(_parse_lines(text, source), source)


def load_config(path: str | os.PathLike) -> SimConfig:
    """Read a ``key = value`` file; missing keys keep their defaults."""
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def dump_config(cfg: SimConfig) -> str:
    lines = []
    for f in dataclasses.fields(SimConfig):
        value = getattr(cfg, f.name)
        if f.name in _NESTED:
            for g in dataclasses.fields(value):
                lines.append(f"{f.name}.{g.name} = {getattr(value, g.name)!r}")
        else:
            lines.append(f"{f.name} = {value!r}")
    return "\n".join(lines) + "\n"


# ---- sweeps --------------------------------------------------------------------

@dataclass
class SweepSpec:
    param: str
    values: List[float]
    modes: List[str] = field(default_factory=lambda: list(MODES))
    seeds: List[int] = field(default_factory=lambda: [0])
    overrides: Dict[str, object] = field(default_factory=dict)

    def validate(self) -> "SweepSpec":
        if self.param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.param!r}")
        if not self.values:
            raise ConfigError("sweep value list is empty")
        if not self.modes:
            raise ConfigError("sweep mode list is empty")
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("sweep seeds must be nonempty and distinct")
        self.modes = [canonical_mode(m) for m in self.modes]
        return self

    def cells(self) -> List[Tuple[object, str, int]]:
        return [(v, m, s) for v in self.values for m in self.modes for s in self.seeds]


def _split_list(value: str) -> List[str]:
    v = value.strip()
    if v[:1] in "([" and v[-1:] in ")]":
        v = v[1:-1]
    return [x.strip() for x in v.split(",") if x.strip()]


def parse_sweep(text: str, source: str = "<sweep>", base: Optional[SimConfig] = None
                ) -> Tuple[SweepSpec, SimConfig]:
    """Sweep files use the config syntax plus ``param``, ``values``, ``modes``
    and ``seeds``; every other key is a config override."""
    param = None
    values: List[str] = []
    modes = list(MODES)
    seeds = [0]
    rest = []
    for lineno, key, value in _parse_lines(text, source):
        try:
            if key == "param":
                param = value
            elif key == "values":
                values = _split_list(value)
            elif key == "modes":
                modes = [canonical_mode(m) for m in _split_list(value)]
            elif key == "seeds":
                seeds = [int(s) for s in _split_list(value)]
            else:
                rest.append((lineno, key, value))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    if param is None:
        raise ConfigError(f"{source}: missing 'param'")
    cfg = config_from_pairs(rest, source, base)
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"{source}: sweep parameter must be one of {SWEEP_PARAMS}")
    default = getattr(SimConfig(), param)
    try:
        typed = [_coerce(param, default, v) for v in values]
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    spec = SweepSpec(param, typed, modes, seeds, {k: getattr(cfg, k) for _, k, _ in rest
                                                   if "." not in k})
    return spec.validate(), cfg


def load_sweep(path: str | os.PathLike, base: Optional[SimConfig] = None
               ) -> Tuple[SweepSpec, SimConfig]:
    with open(path, encoding="utf-8") as fh:
        return parse_sweep(fh.read(), str(path), base)


@dataclass
class ResultRow:
    sweep_param: str
    value: object
    mode: str
    seed: int
    mean_effi: float
    sum_over_loop: float
    bits_served: float
    joules_total: float
    wall_s: float
    error: Optional[str] = None
    # kept off the CSV: safety record of every episode in the cell
    min_battery: float = math.nan
    bad_recharges: int = 0

    def as_csv(self) -> List[str]:
        return [self.sweep_param, repr(self.value), self.mode, str(self.seed),
                repr(self.mean_effi), repr(self.sum_over_loop), repr(self.bits_served),
                repr(self.joules_total), f"{self.wall_s:.3f}"]


def _run_cell(args) -> ResultRow:
    param, value, mode, seed, cfg = args
    t0 = time.perf_counter()
    try:
        res = run_training(cfg.replace(**{param: value}), mode, seed)
        return ResultRow(param, value, mode, seed, res.mean_effi, res.sum_over_loop,
                         res.bits_served, res.joules_total, time.perf_counter() - t0,
                         min_battery=min(m.min_battery for m in res.episodes),
                         bad_recharges=sum(m.bad_recharges for m in res.episodes))
    except Exception as exc:  # a failed cell must not stop the sweep
        nan = float("nan")
        return ResultRow(param, value, mode, seed, nan, nan, nan, nan,
                         time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec, config: Optional[SimConfig] = None, jobs: int = 1,
              out: str | os.PathLike | None = None) -> List[ResultRow]:
    """Train every (value, mode, seed) cell; rows come back in cell order
    whatever ``jobs`` is."""
    spec.validate()
    cfg = (config or SimConfig()).replace(**spec.overrides)
    tasks = [(spec.param, v, m, s, cfg) for v, m, s in spec.cells()]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell, tasks))
    else:
        rows = [_run_cell(t) for t in tasks]
    for r in rows:
        if r.error:
            log.error("cell %s=%r mode=%s seed=%d failed: %s", r.sweep_param, r.value,
                      r.mode, r.seed, r.error)
    if out is not None:
        write_csv(rows, out)
    return rows


def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def write_csv(rows: Sequence[ResultRow], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))


def read_csv(path: str | os.PathLike) -> List[ResultRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read())


def parse_csv(text: str) -> List[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise ValueError(f"malformed result CSV: header must be {','.join(CSV_COLUMNS)}")
    rows = []
    for i, rec in enumerate(reader, 2):
        if not rec:
            continue
        if len(rec) != len(CSV_COLUMNS):
            raise ValueError(f"malformed result CSV: line {i} has {len(rec)} fields")
        try:
            value = _literal(rec[1])
            rows.append(ResultRow(rec[0], value, rec[2], int(rec[3]),
                                  *(float(x) for x in rec[4:9])))
        except ValueError as exc:
            raise ValueError(f"malformed result CSV: line {i}: {exc}") from None
    return rows


# ---- trend verdicts ------------------------------------------------------------

def is_monotone(series: Sequence[float], tol: float = 0.0) -> bool:
    """Non-decreasing, allowing dips of at most ``tol``."""
    return all(b >= a - tol for a, b in zip(series, series[1:]))


def unimodal_peak(series: Sequence[float]) -> Optional[int]:
    """Index of the peak if the series rises to a single interior peak and
    then falls (plateaus allowed, but both ends must sit strictly below
    the peak), else None."""
    n = len(series)
    if n < 3:
        return None
    p = int(np.argmax(series))
    if p in (0, n - 1) or not series[0] < series[p] > series[-1]:
        return None
    if not is_monotone(series[:p + 1]) or not is_monotone([-x for x in series[p:]]):
        return None
    return p


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2 or np.ptp(y) == 0:
        return 0.0
    return float(spearmanr(x, y).statistic)


@dataclass
class Summary:
    text: str
    ok: bool
    means: Dict[Tuple[object, str], float]
    stds: Dict[Tuple[object, str], float]


def summarize_rows(rows: Sequence[ResultRow]) -> Summary:
    rows = [r for r in rows if not math.isnan(r.mean_effi)]
    if not rows:
        return Summary("no successful rows\n", False, {}, {})
    params = sorted({r.sweep_param for r in rows})
    groups: Dict[Tuple[object, str], List[float]] = {}
    for r in rows:
        groups.setdefault((r.value, r.mode), []).append(r.mean_effi)
    means = {k: float(np.mean(v)) for k, v in groups.items()}
    stds = {k: float(np.std(v)) for k, v in groups.items()}
    values = sorted({k[0] for k in groups}, key=_sort_key)
    modes = [m for m in MODES if any(k[1] == m for k in groups)]
    modes += sorted({k[1] for k in groups} - set(modes))

    out = [f"sweep_param: {','.join(params)}"]
    out.append(f"{'value':>10} {'mode':>12} {'n':>3} {'mean_effi':>14} {'std':>12}")
    for v in values:
        for m in modes:
            if (v, m) in groups:
                out.append(f"{v!r:>10} {m:>12} {len(groups[(v, m)]):>3} "
                           f"{means[(v, m)]:14.6g} {stds[(v, m)]:12.4g}")
    ok = True
    shape = EXPECTED_SHAPE.get(params[0]) if len(params) == 1 else None
    for m in modes:
        xs = [v for v in values if (v, m) in means]
        ys = [means[(v, m)] for v in xs]
        mono = is_monotone(ys)
        peak = unimodal_peak(ys)
        rho = spearman(xs, ys)
        out.append(f"[{m}] monotone: {'yes' if mono else 'no'} (spearman {rho:.3f})")
        if peak is None:
            out.append(f"[{m}] unimodal: no")
        else:
            out.append(f"[{m}] unimodal: yes, peak at interior value {xs[peak]!r}")
        if m == (modes[0] if "rldc" not in modes else "rldc"):
            if shape == "monotone":
                ok &= mono
            elif shape == "unimodal":
                ok &= peak is not None
    if all(m in modes for m in MODES):
        order = all(means.get((v, "rldc"), -math.inf) >= means.get((v, "fixed_swarm"), math.inf)
                    >= means.get((v, "no_swarm"), math.inf) for v in values)
        out.append(f"ordering rldc >= fixed_swarm >= no_swarm: {'yes' if order else 'no'}")
        if shape is not None:
            ok &= order
    out.append(f"verdict: {'pass' if ok else 'fail'}")
    return Summary("\n".join(out) + "\n", ok, means, stds)


def summarize(path: str | os.PathLike) -> Summary:
    return summarize_rows(read_csv(path))


def _sort_key(v):
    return (0, v) if isinstance(v, (int, float)) else (1, str(v))
