"""Command line entry point: ``run``, ``sweep`` and ``report``.

A config file (TOML, or JSON such as a previous run's ``manifest.json``) has
the sections ``datagen``, ``optimizer`` (with a nested ``plan``),
``objective``, ``outputs`` and ``checks``::

    [datagen]
    N = 4
    M = 2
    seed = 0

    [optimizer]
    algorithm = "mm-psgd"
    gamma = "theoretical"

    [optimizer.plan]
    C = 5
    T = 16000
    I = "max"

    [objective]
    kind = "least-squares"
    lam = 1e-3

A run directory receives ``manifest.json`` (resolved config, seeds and
problem constants), ``trace.csv`` (one row per communication round) and
``gap_report.json``. Directories are written under a temporary name and
renamed into place, so a run directory holds either the full artifact set or
a ``FAILED`` marker.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from . import algorithms as alg
from . import analysis as an
from . import datagen
from . import objectives as obj
from .schedule import CyclePlan, ScheduleError

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVARIANT = 3
EXIT_ORACLE = 4
EXIT_MISSING = 5
EXIT_DIVERGED = 6

THEORETICAL = "theoretical"
MAX_I = "max"

SWEEP_AXES = ("I", "M", "N", "T", "participation_rate")

MANIFEST = "manifest.json"
TRACE = "trace.csv"
GAP_REPORT = "gap_report.json"
FAILED = "FAILED"
SUMMARY = "summary.csv"

_SECTIONS = ("datagen", "optimizer", "objective", "outputs", "checks")
_OPTIMIZER_KEYS = {
    "algorithm", "plan", "gamma", "eta", "batch_size", "full_batch", "averaging", "ewa_base",
    "participation_rate", "master_seed",
}
_PLAN_KEYS = {"C", "M", "E", "I", "T"}
_OBJECTIVE_KEYS = {"kind", "lam", "projection_radius"}


class ConfigParseError(ValueError):
    """The config file is unreadable or structurally wrong."""


class ConfigInvariantError(ValueError):
    """The config parses but its values are inconsistent."""


class MissingArtifacts(FileNotFoundError):
    pass


@dataclass(frozen=True)
class Outputs:
    directory: str = "runs/default"
    every: int = 1  # evaluate gaps every this many rounds (always on the last one)
    gap_threshold: Optional[float] = None


@dataclass(frozen=True)
class Checks:
    lemma3: bool = True
    reductions: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    """Raw experiment description; ``resolve`` turns it into runnable pieces.

    ``optimizer`` stays a plain mapping because ``gamma``, ``eta`` and the plan
    may name rules ("theoretical", ``I = "max"``, ``T`` instead of ``E``)
    that need the generated data before they become numbers.
    """

    datagen: datagen.DataGenConfig
    optimizer: Dict[str, Any]
    objective: Dict[str, Any]
    outputs: Outputs = Outputs()
    checks: Checks = Checks()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "datagen": asdict(self.datagen),
            "optimizer": deepcopy(self.optimizer),
            "objective": deepcopy(self.objective),
            "outputs": asdict(self.outputs),
            "checks": asdict(self.checks),
        }


@dataclass
class Resolved:
    config: ExperimentConfig
    dataset: Any
    spec: obj.ObjectiveSpec
    optimizer: alg.OptimizerConfig
    constants: obj.ProblemConstants

    def manifest_config(self) -> Dict[str, Any]:
        """The config with every rule replaced by the number it produced."""
        out = self.config.to_dict()
        opt = self.optimizer
        plan = opt.plan
        out["optimizer"] = {
            "algorithm": opt.algorithm,
            "plan": {"C": plan.C, "M": plan.M, "E": plan.E, "I": plan.I},
            "gamma": opt.gamma,
            "batch_size": opt.batch_size,
            "full_batch": opt.full_batch,
            "averaging": opt.averaging,
            "ewa_base": opt.ewa_base,
            "participation_rate": opt.participation_rate,
            "master_seed": opt.master_seed,
        }
        if opt.eta is not None:
            out["optimizer"]["eta"] = opt.eta
        out["objective"] = {"kind": self.spec.kind, "lam": self.spec.lam, "projection_radius": self.spec.projection_radius}
        return out


# -- parsing ------------------------------------------------------------------------


def _read_mapping(path: Path) -> Dict[str, Any]:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigParseError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            data = json.loads(raw)
        except ValueError as exc:
            raise ConfigParseError(f"{path}: {exc}") from exc
        if isinstance(data, dict) and "config" in data and "run_id" in data:
            data = data["config"]  # a manifest from an earlier run
    else:
        try:
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            data = tomllib.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise ConfigParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigParseError(f"{path}: top level must be a table")
    return data


def config_from_mapping(data: Dict[str, Any]) -> ExperimentConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigParseError(f"unknown sections: {sorted(unknown)}")
    for name in ("datagen", "optimizer", "objective"):
        if not isinstance(data.get(name), dict):
            raise ConfigParseError(f"missing [{name}] section")
    opt = deepcopy(data["optimizer"])
    bad = set(opt) - _OPTIMIZER_KEYS
    if bad:
        raise ConfigParseError(f"unknown optimizer keys: {sorted(bad)}")
    if not isinstance(opt.get("plan"), dict):
        raise ConfigParseError("missing [optimizer.plan] section")
    bad = set(opt["plan"]) - _PLAN_KEYS
    if bad:
        raise ConfigParseError(f"unknown plan keys: {sorted(bad)}")
    objective = deepcopy(data["objective"])
    bad = set(objective) - _OBJECTIVE_KEYS
    if bad:
        raise ConfigParseError(f"unknown objective keys: {sorted(bad)}")
    try:
        gen = datagen.DataGenConfig(**data["datagen"])
        outputs = Outputs(**data.get("outputs", {}))
        checks = Checks(**data.get("checks", {}))
    except TypeError as exc:
        raise ConfigParseError(str(exc)) from exc
    except datagen.DataGenError as exc:
        raise ConfigInvariantError(str(exc)) from exc
    return ExperimentConfig(gen, opt, objective, outputs, checks)


def load_config(path) -> ExperimentConfig:
    return config_from_mapping(_read_mapping(Path(path)))


def with_overrides(config: ExperimentConfig, seed: Optional[int] = None, checks: Optional[bool] = None,
                   out: Optional[str] = None) -> ExperimentConfig:
    """``seed`` replaces both the data seed and the optimizer's master seed."""
    data = config.to_dict()
    if seed is not None:
        data["datagen"]["seed"] = seed
        data["optimizer"]["master_seed"] = seed
    if checks is not None:
        data["checks"] = {"lemma3": checks, "reductions": checks}
    if out is not None:
        data["outputs"]["directory"] = str(out)
    return config_from_mapping(data)


# -- resolution ---------------------------------------------------------------------


def resolve_plan(raw: Dict[str, Any], M: int, N: int, algorithm: str) -> CyclePlan:
    """Build the plan; ``I = "max"`` takes the largest admissible ``I`` dividing the run.

    Exactly one of ``E`` and ``T`` must be given. With ``T``, ``E`` is derived
    and ``T`` must be a multiple of ``C * M * I``.
    """
    plan = dict(raw)
    if plan.get("M", M) != M:
        raise ConfigInvariantError(f"plan M={plan['M']} disagrees with datagen M={M}")
    if "C" not in plan:
        raise ConfigInvariantError("plan needs C")
    C = plan["C"]
    if ("E" in plan) == ("T" in plan):
        raise ConfigInvariantError("plan needs exactly one of E and T")
    I = plan.get("I", 1)
    try:
        if "T" in plan:
            T = plan["T"]
            if I == MAX_I:
                return alg.horizon_plan(T, C, M, N, algorithm)
            if T % (C * M * I):
                raise ConfigInvariantError(f"T={T} is not a multiple of C*M*I={C * M * I}")
            return CyclePlan(C, M, T // (C * M * I), I)
        if I == MAX_I:
            raise ConfigInvariantError('I = "max" needs T in the plan')
        return CyclePlan(C, M, plan["E"], I)
    except (ScheduleError, alg.ConfigError, TypeError) as exc:
        raise ConfigInvariantError(f"bad plan: {exc}") from exc


def resolve(config: ExperimentConfig) -> Resolved:
    gen = config.datagen
    raw = config.optimizer
    algorithm = raw.get("algorithm")
    if algorithm not in alg.ALGORITHMS:
        raise ConfigInvariantError(f"unknown algorithm {algorithm!r}")
    plan = resolve_plan(raw["plan"], gen.M, gen.N, algorithm)
    try:
        spec = obj.ObjectiveSpec(
            kind=config.objective.get("kind", obj.LEAST_SQUARES),
            d=gen.model_dim,
            lam=config.objective.get("lam", 1e-3),
            projection_radius=config.objective.get("projection_radius"),
            num_classes=gen.num_classes if gen.target == datagen.SOFTMAX else 2,
        )
    except obj.ObjectiveError as exc:
        raise ConfigInvariantError(str(exc)) from exc
    expected = {datagen.REGRESSION: obj.LEAST_SQUARES, datagen.LOGISTIC: obj.LOGISTIC, datagen.SOFTMAX: obj.SOFTMAX}
    if expected[gen.target] != spec.kind:
        raise ConfigInvariantError(f"{gen.target} targets need a {expected[gen.target]} objective, not {spec.kind}")

    dataset = datagen.generate(gen)
    constants = obj.constants(spec, obj.global_data(dataset))

    def rate(value, name, rule):
        if value == THEORETICAL:
            return rule()
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigInvariantError(f"{name} must be a number or {THEORETICAL!r}")
        return float(value)

    gamma = rate(raw.get("gamma", THEORETICAL), "gamma", lambda: alg.theoretical_gamma(gen.N, plan.T, constants.L))
    eta = None
    if algorithm == alg.MC_PSGD:
        eta = rate(raw.get("eta", THEORETICAL), "eta", lambda: alg.theoretical_eta(gen.N, gen.M, plan.T, constants.L))
    elif "eta" in raw:
        raise ConfigInvariantError("eta is only used by mc-psgd")
    try:
        optimizer = alg.OptimizerConfig(
            algorithm=algorithm,
            plan=plan,
            gamma=gamma,
            eta=eta,
            batch_size=raw.get("batch_size", 2),
            full_batch=raw.get("full_batch", False),
            averaging=raw.get("averaging", alg.UNIFORM),
            ewa_base=raw.get("ewa_base", 0.5),
            participation_rate=raw.get("participation_rate", 1.0),
            master_seed=raw.get("master_seed", gen.seed),
            check_bounds=config.checks.lemma3,
        )
    except alg.ConfigError as exc:
        raise ConfigInvariantError(str(exc)) from exc
    return Resolved(config, dataset, spec, optimizer, constants)


def run_id_for(manifest_config: Dict[str, Any]) -> str:
    """Hash of everything that shapes the results (the output location does not)."""
    keyed = deepcopy(manifest_config)
    keyed["outputs"].pop("directory", None)
    blob = json.dumps(keyed, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


# -- artifacts ----------------------------------------------------------------------


def trace_header(M: int) -> List[str]:
    return (
        ["run_id", "t", "cycle", "block", "round_in_block", "algorithm", "global_loss", "minimax_gap"]
        + [f"gap_block_{m}" for m in range(1, M + 1)]
        + ["selected_chain", "lemma3_ratio", "eval_loss"]
    )


def _num(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def trace_table(run_id: str, trace: alg.RunTrace) -> str:
    M = trace.plan.M
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header(M))
    for r in trace.records:
        gaps = list(r.block_gaps) if r.block_gaps else [math.nan] * M
        writer.writerow(
            [run_id, r.t, r.cycle, r.block, r.round_in_block, trace.algorithm, _num(r.global_loss), _num(r.minimax_gap)]
            + [_num(g) for g in gaps]
            + [r.selected_chain, _num(r.lemma3_ratio), _num(r.eval_loss)]
        )
    return buf.getvalue()


def read_trace(path) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _dump(obj_: Any) -> str:
    return json.dumps(obj_, indent=2, sort_keys=True) + "\n"


def _reduction_checks(resolved: Resolved) -> Dict[str, Any]:
    """Run both reduction oracles on a one-block, one-client slice of the config's data."""
    gen = resolved.config.datagen
    small = datagen.DataGenConfig(**{**asdict(gen), "N": 1, "M": 1, "S": min(gen.S, 200), "eval_per_block": 20})
    dataset = datagen.generate(small)
    spec = resolved.spec
    L = obj.smoothness(spec, obj.global_data(dataset))
    plan = CyclePlan(1, 1, 20, 1)
    fb = alg.OptimizerConfig(alg.FEDAVG, plan, 0.5 / L, full_batch=True, check_bounds=False)
    sequential = an.reduction_oracle_sequential(fb, dataset, spec)
    plan = CyclePlan(2, 1, 5, 3)
    fed = alg.run(alg.OptimizerConfig(alg.FEDAVG, plan, 0.5 / L, record_models=True, check_bounds=False), dataset, spec)
    mm = alg.run(alg.OptimizerConfig(alg.MM_PSGD, plan, 0.5 / L, record_models=True, check_bounds=False), dataset, spec)
    identical = bool(np.array_equal(fed.models, mm.models))
    return {"sequential_gd": sequential, "mm_equals_fedavg_at_M1": identical, "passed": sequential and identical}


def execute(resolved: Resolved) -> Dict[str, str]:
    """Run the experiment and return the artifact texts keyed by file name."""
    config = resolved.config
    manifest_config = resolved.manifest_config()
    run_id = run_id_for(manifest_config)
    optima = an.compute_optima(resolved.dataset, resolved.spec)
    monitor = an.GapMonitor(resolved.dataset, resolved.spec, optima, every=config.outputs.every)
    trace = alg.run(resolved.optimizer, resolved.dataset, resolved.spec, monitor=monitor)

    models = trace.final_model if trace.predictors is None else trace.predictors.predictors
    report = an.gap_report(models, resolved.dataset, resolved.spec, optima)
    opt = resolved.optimizer
    checks: Dict[str, Any] = {}
    if config.checks.lemma3:
        res = an.check_lemma3(trace, opt.gamma, opt.plan.I)
        checks["lemma3"] = {"passed": res.passed, "worst_ratio": res.worst_ratio}
        if opt.algorithm == alg.MC_PSGD:
            sep = an.check_lemma3(trace, opt.eta, opt.plan.I, chain=alg.SEPARATE)
            checks["lemma3_separate"] = {"passed": sep.passed, "worst_ratio": sep.worst_ratio}
    else:
        checks["lemma3"] = "skipped"
    checks["reductions"] = _reduction_checks(resolved) if config.checks.reductions else "skipped"

    gap = {
        "run_id": run_id,
        "algorithm": opt.algorithm,
        "T": opt.plan.T,
        "minimax_gap": report.minimax_gap,
        "per_block_gaps": list(report.per_block_gaps),
        "F_star": optima.F_star,
        "block_F_star": list(optima.block_F_star),
        "eval_losses": [float(v) for v in an.eval_losses(resolved.spec, models, resolved.dataset)],
        "checks": checks,
    }
    if opt.algorithm == alg.MC_PSGD:
        chains = [r.selected_chain for r in trace.records]
        gap["selected_chain_counts"] = {c: chains.count(c) for c in (alg.MIXED, alg.SEPARATE)}

    manifest = {
        "run_id": run_id,
        "version": __version__,
        "config": manifest_config,
        "seeds": {"datagen": config.datagen.seed, "master_seed": opt.master_seed},
        "constants": asdict(resolved.constants),
        "plan": {"K": opt.plan.K, "T": opt.plan.T, "rounds": opt.plan.rounds},
    }
    return {MANIFEST: _dump(manifest), TRACE: trace_table(run_id, trace), GAP_REPORT: _dump(gap)}


def write_atomic(directory: Path, files: Dict[str, str]) -> None:
    """Materialize ``files`` as ``directory`` in one rename."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text)
        if directory.exists():
            shutil.rmtree(directory)
        os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def mark_failed(directory: Path, message: str) -> None:
    directory = Path(directory)
    if directory.exists():
        shutil.rmtree(directory)
    directory.mkdir(parents=True)
    (directory / FAILED).write_text(message.rstrip() + "\n")


def classify(exc: BaseException) -> Optional[int]:
    """Exit code for an expected failure, None for a bug."""
    if isinstance(exc, ConfigParseError):
        return EXIT_PARSE
    if isinstance(exc, obj.OracleFailure):
        return EXIT_ORACLE
    if isinstance(exc, FloatingPointError):
        return EXIT_DIVERGED
    if isinstance(exc, (ConfigInvariantError, alg.ConfigError, datagen.DataGenError, obj.ObjectiveError, ScheduleError)):
        return EXIT_INVARIANT
    return None


def run_config(config: ExperimentConfig, directory=None) -> int:
    """Run one experiment into ``directory`` (default: the config's output directory)."""
    directory = Path(directory if directory is not None else config.outputs.directory)
    try:
        files = execute(resolve(config))
    except Exception as exc:
        mark_failed(directory, f"{type(exc).__name__}: {exc}")
        code = classify(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code
    write_atomic(directory, files)
    return EXIT_OK


# -- sweeps -------------------------------------------------------------------------


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def sweep_point(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """Config for one sweep value, with derived parameters recomputed.

    Sweeping ``M`` keeps ``M * E`` fixed (so ``T`` is unchanged); sweeping
    ``T`` or ``N`` re-derives ``E``, a ``"max"`` ``I`` and theoretical rates.
    """
    if axis not in SWEEP_AXES:
        raise ConfigParseError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")
    data = config.to_dict()
    plan = data["optimizer"]["plan"]
    if axis == "I":
        plan["I"] = int(value)
    elif axis == "T":
        plan.pop("E", None)
        plan["T"] = int(value)
    elif axis == "N":
        data["datagen"]["N"] = int(value)
    elif axis == "participation_rate":
        data["optimizer"]["participation_rate"] = float(value)
    elif axis == "M":
        M0, M = config.datagen.M, int(value)
        plan.pop("M", None)
        if "E" in plan:
            total = plan["E"] * M0
            if total % M:
                raise ConfigInvariantError(f"M*E={total} is not divisible by M={M}")
            plan["E"] = total // M
        data["datagen"]["M"] = M
    return config_from_mapping(data)


def _sweep_one(args):
    config, axis, value, directory = args
    return run_config(sweep_point(config, axis, value), directory)


def rounds_to_threshold(rows: Sequence[Dict[str, str]], threshold: float) -> Optional[int]:
    for i, row in enumerate(rows, start=1):
        if row["minimax_gap"] and float(row["minimax_gap"]) <= threshold:
            return i
    return None


def sweep(config: ExperimentConfig, axis: str, values: Sequence, out, jobs: int = 1) -> int:
    out = Path(out)
    points = [sweep_point(config, axis, v) for v in values]  # fail fast on bad values
    dirs = [out / f"{axis}={v}" for v in values]
    work = [(config, axis, v, d) for v, d in zip(values, dirs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_sweep_one, work))
    else:
        codes = [_sweep_one(w) for w in work]

    finals, traces = [], []
    for d, code in zip(dirs, codes):
        if code != EXIT_OK:
            finals.append(None)
            traces.append(None)
            continue
        finals.append(json.loads((d / GAP_REPORT).read_text()))
        traces.append(read_trace(d / TRACE))
    threshold = config.outputs.gap_threshold
    if threshold is None:
        done = [f["minimax_gap"] for f in finals if f is not None]
        threshold = max(done) if done else math.nan  # loosest final gap: every run reaches it

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["value", "run_id", "T", "rounds", "final_minimax_gap", "rounds_to_threshold", "status"])
    for v, point, f, rows, code in zip(values, points, finals, traces, codes):
        if f is None:
            writer.writerow([v, "", "", "", "", "", f"failed({code})"])
            continue
        hit = rounds_to_threshold(rows, threshold)
        writer.writerow([v, f["run_id"], f["T"], len(rows), repr(f["minimax_gap"]), "" if hit is None else hit, "ok"])
    out.mkdir(parents=True, exist_ok=True)
    (out / SUMMARY).write_text(buf.getvalue())
    (out / "sweep.json").write_text(_dump({"axis": axis, "values": list(values), "threshold": threshold,
                                           "base_config": config.to_dict()}))
    if axis == "M":
        Ts = {f["T"] for f in finals if f is not None}
        if len(Ts) > 1:
            raise ConfigInvariantError(f"M sweep changed T: {sorted(Ts)}")
    return max(codes) if any(codes) else EXIT_OK


# -- reports ------------------------------------------------------------------------


def _fmt(x) -> str:
    return f"{x:.6g}" if isinstance(x, float) else str(x)


def _check_lines(checks: Dict[str, Any]) -> List[str]:
    lines = []
    for name in ("lemma3", "lemma3_separate", "reductions"):
        if name not in checks:
            continue
        value = checks[name]
        if value == "skipped":
            lines.append(f"  {name}: skipped")
        elif name == "reductions":
            lines.append(f"  {name}: {'pass' if value['passed'] else 'FAIL'}")
        else:
            lines.append(f"  {name}: {'pass' if value['passed'] else 'FAIL'} (worst ratio {_fmt(value['worst_ratio'])})")
    return lines


def report_run(directory: Path) -> str:
    directory = Path(directory)
    if (directory / FAILED).exists():
        raise MissingArtifacts(f"{directory} holds a failed run: {(directory / FAILED).read_text().strip()}")
    for name in (MANIFEST, TRACE, GAP_REPORT):
        if not (directory / name).exists():
            raise MissingArtifacts(f"{directory / name} is missing")
    manifest = json.loads((directory / MANIFEST).read_text())
    gap = json.loads((directory / GAP_REPORT).read_text())
    rows = read_trace(directory / TRACE)
    cfg = manifest["config"]
    plan = cfg["optimizer"]["plan"]
    lines = [
        f"run {manifest['run_id']}  {cfg['optimizer']['algorithm']}  "
        f"C={plan['C']} M={plan['M']} E={plan['E']} I={plan['I']} T={manifest['plan']['T']}  "
        f"N={cfg['datagen']['N']} seed={manifest['seeds']['datagen']}",
        f"constants: " + " ".join(f"{k}={_fmt(v)}" for k, v in manifest["constants"].items()),
        f"minimax gap: {_fmt(gap['minimax_gap'])}",
    ]
    for m, g in enumerate(gap["per_block_gaps"], start=1):
        lines.append(f"  block {m} gap: {_fmt(g)}  eval loss: {_fmt(gap['eval_losses'][m - 1])}")
    if "selected_chain_counts" in gap:
        lines.append("selected chain: " + " ".join(f"{k}={v}" for k, v in gap["selected_chain_counts"].items()))

    # slope of the minimax gap over cycle boundaries
    per_cycle = int(plan["M"]) * int(plan["E"])
    points = [
        (int(r["t"]), float(r["minimax_gap"]))
        for i, r in enumerate(rows, start=1)
        if i % per_cycle == 0 and r["minimax_gap"] and float(r["minimax_gap"]) > 0
    ]
    if len(points) >= 3:
        fit = an.fit_slope(points)
        lines.append(f"slope of minimax gap in t over {len(points)} cycle checkpoints: {fit.slope:.3f} (r2 {fit.r2:.3f})")
    else:
        lines.append("slope: fewer than 3 positive cycle checkpoints")
    lines.append("checks:")
    lines.extend(_check_lines(gap["checks"]))
    return "\n".join(lines) + "\n"


def report_sweep(directory: Path) -> str:
    directory = Path(directory)
    meta = json.loads((directory / "sweep.json").read_text())
    with open(directory / SUMMARY, newline="") as fh:
        rows = list(csv.DictReader(fh))
    lines = [f"sweep over {meta['axis']} (threshold {_fmt(meta['threshold'])})"]
    for r in rows:
        lines.append(
            f"  {meta['axis']}={r['value']}: final gap {r['final_minimax_gap'] or '-'}  "
            f"rounds to threshold {r['rounds_to_threshold'] or '-'}  {r['status']}"
        )
    ok = [r for r in rows if r["status"] == "ok" and float(r["final_minimax_gap"]) > 0]
    if meta["axis"] == "T" and len(ok) >= 3:
        fit = an.fit_slope([(float(r["T"]), float(r["final_minimax_gap"])) for r in ok])
        lines.append(f"slope of final minimax gap in T: {fit.slope:.3f} (r2 {fit.r2:.3f})")
    for r in rows:
        sub = directory / f"{meta['axis']}={r['value']}"
        if r["status"] == "ok":
            lines.append("")
            lines.append(report_run(sub).rstrip())
    return "\n".join(lines) + "\n"


def report(directory) -> str:
    directory = Path(directory)
    if (directory / "sweep.json").exists():
        return report_sweep(directory)
    return report_run(directory)


# -- entry point --------------------------------------------------------------------


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockcyclic", description="Block-cyclic federated SGD experiments.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML config or a run manifest (JSON)")
        p.add_argument("--out", help="output directory (default: outputs.directory)")
        p.add_argument("--checks", type=_on_off, help="on|off: lemma checks and reduction oracles")
        p.add_argument("--seed", type=int, help="override the data seed and the master seed")

    common(sub.add_parser("run", help="run one experiment"))
    p = sub.add_parser("sweep", help="run one experiment per value of an axis")
    common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma separated values")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    p = sub.add_parser("report", help="summarize a run or sweep directory")
    p.add_argument("run_dir", nargs="?")
    p.add_argument("--out", help="same as run_dir")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verb == "report":
        target = args.run_dir or args.out
        if target is None:
            print("error: report needs a run directory", file=sys.stderr)
            return EXIT_PARSE
        try:
            sys.stdout.write(report(target))
        except (MissingArtifacts, FileNotFoundError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_MISSING
        return EXIT_OK

    try:
        config = with_overrides(load_config(args.config), seed=args.seed, checks=args.checks)
    except (ConfigParseError, ConfigInvariantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.out:
            mark_failed(Path(args.out), f"{type(exc).__name__}: {exc}")
        return EXIT_PARSE if isinstance(exc, ConfigParseError) else EXIT_INVARIANT
    out = args.out or config.outputs.directory
    if args.verb == "run":
        return run_config(config, out)
    try:
        values = [_number(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        print(f"error: bad --values {args.values!r}", file=sys.stderr)
        return EXIT_PARSE
    try:
        return sweep(config, args.axis, values, out, jobs=args.jobs)
    except (ConfigParseError, ConfigInvariantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE if isinstance(exc, ConfigParseError) else EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
