"""Monte-Carlo experiment runner.

An experiment sweeps one scenario axis (``tau_p``, ``snr_db``, ``M`` or
``none``). For every sweep value and trial a scenario is drawn from a
seed derived from ``(master_seed, sweep_index, trial_index)``, and every
enabled algorithm is run on the same realization. Per-cell aggregates are
written as CSV, JSON and whitespace-separated plot data.

Config files are JSON::

    {
      "scenario": {"tau_p": 24, "snr_db": 16},
      "algorithms": {"emep": {}, "corr_map_admm": {"beta1": 0.3}, "irw_l21": {}, "oracle_mmse": {}},
      "sweep": {"axis": "tau_p", "values": [12, 16, 20, 24, 28]},
      "trials": 100,
      "master_seed": 0,
      "output_dir": "results"
    }
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import metrics
from .admm import AdmmConfig, run_corr_map_admm
from .baselines import IrwConfig, OracleInfo, irw_l21, oracle_mmse
from .emep import EmEpConfig, run_em_ep
from .exceptions import ConfigurationError, DegenerateBeliefError, NumericalFailure
from .model import ScenarioConfig, generate_scenario

log = logging.getLogger(__name__)

ALGORITHMS = ("emep", "corr_map_admm", "irw_l21", "oracle_mmse")
SWEEP_AXES = ("none", "tau_p", "snr_db", "M")
_CONFIG_CLASSES = {"emep": EmEpConfig, "corr_map_admm": AdmmConfig, "irw_l21": IrwConfig}

# stream tags keep evaluation and tuning draws disjoint
EVAL_STREAM = 0
TUNING_STREAM = 1

FAILURE_WARN_FRACTION = 0.10

COLUMNS = ("sweep_value", "algorithm", "trials", "failures", "mean_srr", "srr_stderr",
           "mean_srr_fa", "srr_fa_stderr", "nmse", "nmse_db", "nmse_stderr",
           "nmse_trial_mean", "mean_iters", "mean_wall_time")


class ExperimentError(RuntimeError):
    """An experiment produced no usable result."""


def trial_seed(master_seed, sweep_index, trial_index, stream=EVAL_STREAM):
    """64-bit scenario seed mixed from the experiment coordinates."""
    ss = np.random.SeedSequence([int(stream), int(master_seed), int(sweep_index),
                                 int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _algorithm_config(name, params):
    if name not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {name!r}; choose from {list(ALGORITHMS)}")
    params = dict(params or {})
    if name == "oracle_mmse":
        if params:
            raise ConfigurationError("oracle_mmse takes no parameters")
        return None
    cls = _CONFIG_CLASSES[name]
    known = {f.name for f in fields(cls)}
    unknown = set(params) - known
    if unknown:
        raise ConfigurationError(f"unknown {name} parameters: {sorted(unknown)}")
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad {name} parameters: {exc}") from exc


@dataclass
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    algorithms: dict = field(default_factory=lambda: {a: {} for a in ALGORITHMS})
    sweep_axis: str = "none"
    sweep_values: list = field(default_factory=list)
    trials: int = 10
    master_seed: int = 0
    output_dir: str = "results"
    record_time: bool = False
    trace: bool = False
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if isinstance(self.algorithms, (list, tuple)):
            self.algorithms = {a: {} for a in self.algorithms}
        if not self.algorithms:
            raise ConfigurationError("at least one algorithm must be enabled")
        for name, params in self.algorithms.items():
            _algorithm_config(name, params)
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigurationError(
                f"sweep axis must be one of {list(SWEEP_AXES)} (got {self.sweep_axis!r})")
        if self.sweep_axis != "none":
            if not self.sweep_values:
                raise ConfigurationError(f"sweep over {self.sweep_axis} needs a non-empty value list")
            for v in self.sweep_values:
                self.scenario_at(v)
        if int(self.trials) < 1:
            raise ConfigurationError(f"trials must be >= 1 (got {self.trials})")
        if int(self.workers) < 1:
            raise ConfigurationError("workers must be >= 1")

    @property
    def points(self):
        """``(sweep_index, sweep_value)`` pairs; a single point when not sweeping."""
        if self.sweep_axis == "none":
            return [(0, None)]
        return list(enumerate(self.sweep_values))

    def scenario_at(self, value):
        if self.sweep_axis == "none" or value is None:
            return self.scenario
        cast = float if self.sweep_axis == "snr_db" else int
        if cast is int and float(value) != int(value):
            raise ConfigurationError(f"{self.sweep_axis} values must be integers (got {value})")
        return self.scenario.replace(**{self.sweep_axis: cast(value)})

    def algorithm_configs(self):
        return {name: _algorithm_config(name, p) for name, p in self.algorithms.items()}

    def to_dict(self):
        scen = self.scenario.to_dict()
        scen.pop("seed", None)
        return {"scenario": scen, "algorithms": {k: dict(v or {}) for k, v in self.algorithms.items()},
                "sweep": {"axis": self.sweep_axis, "values": list(self.sweep_values)},
                "trials": int(self.trials), "master_seed": int(self.master_seed),
                "output_dir": str(self.output_dir), "record_time": bool(self.record_time),
                "trace": bool(self.trace), "workers": int(self.workers)}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("experiment config must be a JSON object")
        allowed = {"scenario", "algorithms", "sweep", "trials", "master_seed", "output_dir",
                   "record_time", "trace", "workers"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigurationError(f"unknown experiment keys: {sorted(unknown)}")
        scen = dict(data.get("scenario", {}))
        if "seed" in scen:
            raise ConfigurationError("set master_seed instead of scenario.seed")
        sweep = data.get("sweep", {"axis": "none", "values": []})
        if not isinstance(sweep, dict) or set(sweep) - {"axis", "values"}:
            raise ConfigurationError("sweep must be an object with 'axis' and 'values'")
        try:
            return cls(scenario=ScenarioConfig.from_dict(scen),
                       algorithms=data.get("algorithms", {a: {} for a in ALGORITHMS}),
                       sweep_axis=sweep.get("axis", "none"),
                       sweep_values=list(sweep.get("values", [])),
                       trials=int(data.get("trials", 10)),
                       master_seed=int(data.get("master_seed", 0)),
                       output_dir=str(data.get("output_dir", "results")),
                       record_time=bool(data.get("record_time", False)),
                       trace=bool(data.get("trace", False)),
                       workers=int(data.get("workers", 1)))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


# --- single trial ----------------------------------------------------------------

def run_algorithm(name, cfg, sc, trace=False):
    """Run one algorithm on a scenario; returns ``(X_hat, support, iters, trace)``."""
    if name == "emep":
        r = run_em_ep(sc.Y, sc.Phi, sc.sigma2, sc.clusters, sc.B_prior, config=cfg, trace=trace)
        return r.X_hat, r.support, r.n_iter, r.trace
    if name == "corr_map_admm":
        r = run_corr_map_admm(sc.Y, sc.Phi, sc.sigma2, sc.clusters, sc.B_prior, config=cfg,
                              p=sc.p, trace=trace)
        return r.X_hat, r.support, r.n_iter, r.trace
    if name == "irw_l21":
        r = irw_l21(sc.Y, sc.Phi, sc.sigma2, config=cfg)
        return r.X_hat, r.support, r.n_iter, []
    if name == "oracle_mmse":
        info = OracleInfo(S_true=sc.support, R_true=sc.R_true, p=sc.p, sigma2=sc.sigma2)
        return oracle_mmse(sc.Y, sc.Phi, info), sc.support, 1, []
    raise ConfigurationError(f"unknown algorithm {name!r}")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def run_trial(scenario_cfg, algo_cfgs, record_time=False, trace=False):
    """All algorithms on one realization; failures are returned, not raised."""
    sc = generate_scenario(scenario_cfg)
    out = {}
    traces = {}
    for name, cfg in algo_cfgs.items():
        t0 = time.perf_counter()
        try:
            X_hat, S_hat, iters, tr = run_algorithm(name, cfg, sc, trace)
        except (NumericalFailure, DegenerateBeliefError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed on seed %d: %s", name, scenario_cfg.seed, exc)
            out[name] = None
            continue
        wall = time.perf_counter() - t0 if record_time else 0.0
        out[name] = metrics.trial_metrics(sc.X_true, X_hat, sc.support, S_hat, iters, wall)
        if trace:
            traces[name] = [{k: _jsonable(v) for k, v in rec.items()} for rec in tr]
    return out, traces


def _trial_task(args):
    scenario_cfg, algo_cfgs, record_time, trace = args
    return run_trial(scenario_cfg, algo_cfgs, record_time, trace)


# --- aggregation ----------------------------------------------------------------

def _stderr(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")


def _mean(x):
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    return float(np.mean(x)) if x.size else float("nan")


def summarize(sweep_value, name, records, n_trials):
    ok = [r for r in records if r is not None]
    row = {"sweep_value": sweep_value, "algorithm": name, "trials": n_trials,
           "failures": n_trials - len(ok)}
    if not ok:
        row.update({c: float("nan") for c in COLUMNS if c not in row})
        return row
    nums = [r.nmse_num for r in ok]
    dens = [r.nmse_den for r in ok]
    try:
        nm = metrics.nmse(nums, dens)
    except metrics.UndefinedMetricError:
        nm = float("nan")
    per = [n / d for n, d in zip(nums, dens) if d > 0]
    row.update({
        "mean_srr": _mean([r.srr for r in ok]),
        "srr_stderr": _stderr([r.srr for r in ok]),
        "mean_srr_fa": _mean([r.srr_fa for r in ok]),
        "srr_fa_stderr": _stderr([r.srr_fa for r in ok]),
        "nmse": nm,
        "nmse_db": metrics.to_db(nm) if nm == nm else float("nan"),
        "nmse_stderr": metrics.nmse_stderr(nums, dens),
        "nmse_trial_mean": _mean(per),
        "mean_iters": _mean([r.iters for r in ok]),
        "mean_wall_time": _mean([r.wall_time for r in ok]),
    })
    return row


@dataclass
class ResultTable:
    """One row per ``(sweep_value, algorithm)`` cell, columns as in :data:`COLUMNS`."""

    rows: list
    axis: str = "none"
    warnings: list = field(default_factory=list)
    raw: dict = field(default_factory=dict, repr=False)
    traces: list = field(default_factory=list, repr=False)

    def cell(self, sweep_value, algorithm):
        for r in self.rows:
            if r["algorithm"] == algorithm and r["sweep_value"] == sweep_value:
                return r
        raise KeyError((sweep_value, algorithm))

    def series(self, algorithm, column):
        rows = [r for r in self.rows if r["algorithm"] == algorithm]
        return [r["sweep_value"] for r in rows], [r[column] for r in rows]

    @property
    def algorithms(self):
        return list(dict.fromkeys(r["algorithm"] for r in self.rows))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, axis="none"):
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            row = {}
            for c in COLUMNS:
                v = rec[c]
                if c == "algorithm":
                    row[c] = v
                elif c in ("trials", "failures"):
                    row[c] = int(v)
                elif c == "sweep_value":
                    row[c] = None if v == "" else _parse_number(v)
                else:
                    row[c] = float(v)
            rows.append(row)
        return cls(rows=rows, axis=axis)


def _parse_number(text):
    try:
        return int(text)
    except ValueError:
        return float(text)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_experiment(config: ExperimentConfig, stream=EVAL_STREAM, progress=None):
    """Evaluate every enabled algorithm over the sweep; deterministic for a fixed config."""
    algo_cfgs = config.algorithm_configs()
    tasks = []
    for si, value in config.points:
        base = config.scenario_at(value)
        for t in range(config.trials):
            seed = trial_seed(config.master_seed, si, t, stream)
            tasks.append(((si, t), (base.replace(seed=seed), algo_cfgs, config.record_time,
                                    config.trace)))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_trial_task, [a for _, a in tasks], chunksize=1))
    else:
        results = []
        for i, (_, a) in enumerate(tasks):
            results.append(_trial_task(a))
            if progress is not None:
                progress(i + 1, len(tasks))
    by_key = dict(zip([k for k, _ in tasks], results))

    rows, warnings, raw, traces = [], [], {}, []
    for si, value in config.points:
        for name in algo_cfgs:
            recs = [by_key[(si, t)][0][name] for t in range(config.trials)]
            raw[(value, name)] = recs
            row = summarize(value, name, recs, config.trials)
            if row["failures"] > FAILURE_WARN_FRACTION * config.trials:
                msg = (f"{name} at {config.sweep_axis}={value}: {row['failures']} of "
                       f"{config.trials} trials failed")
                warnings.append(msg)
                log.warning(msg)
            rows.append(row)
            if config.trace:
                for t in range(config.trials):
                    for rec in by_key[(si, t)][1].get(name, []):
                        traces.append({"sweep_value": value, "trial": t, "algorithm": name, **rec})
    return ResultTable(rows=rows, axis=config.sweep_axis, warnings=warnings, raw=raw,
                       traces=traces)


def emit_outputs(table: ResultTable, output_dir, config: ExperimentConfig | None = None):
    """Write ``results.csv``, ``results.json`` and ``plot_<axis>_<metric>.dat``."""
    if not table.rows:
        raise ExperimentError("nothing to write: the result table is empty")
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "results.csv"
    p.write_text(table.to_csv())
    paths.append(p)

    doc = {"columns": list(COLUMNS),
           "rows": [{c: _json_num(r[c]) for c in COLUMNS} for r in table.rows],
           "warnings": list(table.warnings),
           "config": config.to_dict() if config is not None else None}
    p = out / "results.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    paths.append(p)

    algos = table.algorithms
    for metric in ("mean_srr", "nmse", "nmse_db"):
        lines = [f"# x={table.axis} y={metric}", "x " + " ".join(algos)]
        xs = list(dict.fromkeys(r["sweep_value"] for r in table.rows))
        for x in xs:
            vals = [_fmt(table.cell(x, a)[metric]) for a in algos]
            lines.append(" ".join([_fmt(0 if x is None else x)] + vals))
        p = out / f"plot_{table.axis}_{metric}.dat"
        p.write_text("\n".join(lines) + "\n")
        paths.append(p)

    if table.traces:
        p = out / "trace.jsonl"
        p.write_text("".join(json.dumps(_clean(rec)) + "\n" for rec in table.traces))
        paths.append(p)
    return paths


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _clean(rec):
    return {k: (_json_num(v) if isinstance(v, float) else v) for k, v in rec.items()}


# --- tuning -----------------------------------------------------------------------

def expand_grid(param_grid):
    """``{"alg": {"p": [..], "q": [..]}}`` to ``{"alg": [dict, ...]}`` in lexicographic order."""
    out = {}
    for name, axes in param_grid.items():
        if name not in ALGORITHMS or name == "oracle_mmse":
            raise ConfigurationError(f"cannot tune algorithm {name!r}")
        if not isinstance(axes, dict) or not axes:
            raise ConfigurationError(f"grid for {name} must be a non-empty object")
        keys = list(axes)
        values = [axes[k] if isinstance(axes[k], list) else [axes[k]] for k in keys]
        if any(len(v) == 0 for v in values):
            raise ConfigurationError(f"grid for {name} has an empty axis")
        out[name] = [dict(zip(keys, combo)) for combo in itertools.product(*values)]
        for point in out[name]:
            _algorithm_config(name, point)
    return out


def grid_search(config: ExperimentConfig, param_grid):
    """Pick, per algorithm, the grid point with the lowest NMSE on tuning seeds.

    Returns ``(best, rows)``: ``best`` maps algorithm to its parameter block,
    ``rows`` lists every evaluated point with its NMSE and SRR. Ties keep the
    earliest point in grid order.
    """
    grid = expand_grid(param_grid)
    best, rows = {}, []
    for name, points in grid.items():
        base = dict(config.algorithms.get(name, {}) or {})
        scores = []
        for point in points:
            params = {**base, **point}
            sub = ExperimentConfig(scenario=config.scenario, algorithms={name: params},
                                   sweep_axis=config.sweep_axis,
                                   sweep_values=config.sweep_values, trials=config.trials,
                                   master_seed=config.master_seed, workers=config.workers)
            table = run_experiment(sub, stream=TUNING_STREAM)
            nums = [r.nmse_num for recs in table.raw.values() for r in recs if r is not None]
            dens = [r.nmse_den for recs in table.raw.values() for r in recs if r is not None]
            srrs = [r.srr for recs in table.raw.values() for r in recs if r is not None]
            nm = metrics.nmse(nums, dens) if nums and sum(dens) > 0 else float("inf")
            scores.append(nm)
            rows.append({"algorithm": name, "params": params, "nmse": nm,
                         "nmse_db": metrics.to_db(nm) if math.isfinite(nm) else float("inf"),
                         "mean_srr": _mean(srrs)})
        best[name] = {**base, **points[int(np.argmin(scores))]}
    return best, rows
