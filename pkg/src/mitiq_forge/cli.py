"""Command-line driver: JSON config in, deterministic JSON/CSV reports out.

    mitiq-forge <ground-state|optimize|benchmark|readout-study>
                --config <path> --out <dir> [--seed N] [--threads K]

Exit codes: 0 success, 2 config error, 3 solver or fit failure that aborts
the run. Every report embeds the config digest, the seed and the package
and library versions, and contains nothing time- or host-dependent, so a
re-run with the same inputs reproduces it byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import platform
import sys
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy

from . import __version__
from .circuit import dumps
from .device import DeviceModel, bundled_device, load_device, synthetic_device, uniform_device
from .estimator import EstimatorConfig, EstimatorError
from .hamiltonian import (ConvergenceError, IsingParams, exact_spectrum, perturbative_energy_large_hx,
                          perturbative_energy_small_hx, perturbative_energy_small_hz)
from .mitigation import (METHODS, VARIANTS, BenchmarkReport, BenchmarkSpec, FitFailure, MeasurementCache,
                         OptimizerSettings, run_benchmark)
from .readout import residual_table
from .simulator import SimulationError
from .vqe import ExactObjective, NoisyObjective, OptimizationError, SpsaConfig, spsa_optimize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Strict config parsing
# ---------------------------------------------------------------------------

def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, where)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list")
        item = args[0] if args else Any
        return tuple(_convert(item, v, f"{where}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string")
        return value
    return value


def build(cls, data, where: str = "config"):
    """Instantiate dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class DeviceConfig:
    """``kind`` is bundled, file, uniform or synthetic; other fields apply per kind."""

    kind: str = "bundled"
    path: str | None = None
    cnot_error: float = 0.0
    sq_error: float | None = None
    e0: float = 0.0
    e1: float = 0.0
    seed: int = 0
    cnot_mean: float = 0.02
    gate_scale: float = 1.0
    readout_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bundled", "file", "uniform", "synthetic"):
            raise ConfigError(f"unknown device kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ConfigError("device kind 'file' needs a path")

    def load(self, n: int, base: Path) -> DeviceModel:
        if self.kind == "bundled":
            try:
                d = bundled_device(n)
            except FileNotFoundError as exc:
                raise ConfigError(f"no bundled device for n={n}") from exc
        elif self.kind == "file":
            p = Path(self.path)
            try:
                d = load_device(p if p.is_absolute() else base / p)
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot load device file: {exc}") from exc
        elif self.kind == "uniform":
            d = uniform_device(n, self.cnot_error, self.sq_error, self.e0, self.e1)
        else:
            d = synthetic_device(n, self.seed, self.cnot_mean)
        if d.n_physical != n:
            raise ConfigError(f"device has {d.n_physical} qubits, Hamiltonian has {n}")
        if self.gate_scale != 1.0 or self.readout_scale != 1.0:
            d = d.scaled(self.gate_scale, self.readout_scale)
        return d


@dataclass(frozen=True)
class GroundStateConfig:
    hamiltonian: IsingParams = IsingParams(20)
    h_x_sweep: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
    tol: float = 1e-8


@dataclass(frozen=True)
class OptimizeConfig:
    hamiltonian: IsingParams = IsingParams(8)
    layers: int = 3
    symmetric: bool = True
    objective: str = "noisy"
    device: DeviceConfig = DeviceConfig(kind="uniform", cnot_error=0.01)
    estimator: EstimatorConfig = EstimatorConfig(shots_per_term=1024, readout=False)
    spsa: SpsaConfig = SpsaConfig()
    track_damping: bool = True

    def __post_init__(self):
        if self.objective not in ("noisy", "exact"):
            raise ConfigError("objective must be 'noisy' or 'exact'")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")


@dataclass(frozen=True)
class BenchmarkConfig:
    benchmark: BenchmarkSpec = BenchmarkSpec()
    device: DeviceConfig = DeviceConfig()
    seeds: tuple[int, ...] = (0,)
    cache_dir: str | None = None


@dataclass(frozen=True)
class ReadoutStudyConfig:
    sizes: tuple[int, ...] = (1, 2, 3, 4, 10, 11)
    count: int = 1000
    e0: float = 0.05
    e1: float = 0.1

    def __post_init__(self):
        if not self.sizes or min(self.sizes) < 1 or max(self.sizes) > 16:
            raise ConfigError("sizes must lie in 1..16")
        if self.count < 1:
            raise ConfigError("count must be >= 1")


# ---------------------------------------------------------------------------
# Deterministic output
# ---------------------------------------------------------------------------

def _plain(x):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(x, Mapping):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_digest(raw: Mapping) -> str:
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def versions() -> dict:
    import numba
    import sklearn

    return {"mitiq_forge": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "scikit-learn": sklearn.__version__}


def provenance(command: str, raw: Mapping, seed: int | None) -> dict:
    return {"command": command, "config": _plain(raw), "config_digest": config_digest(raw), "seed": seed,
            "versions": versions()}


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (f"{v:.12g}" if isinstance(v, float) else v) for v in _plain(row)])
    path.write_text(buf.getvalue())


def _try(fn: Callable[[], float]) -> dict:
    """A table cell: the value, or a structured error record."""
    try:
        return {"value": float(fn()), "error": None}
    except (ArithmeticError, MemoryError, ConvergenceError) as exc:
        return {"value": None, "error": {"type": type(exc).__name__, "message": str(exc)}}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ground_state(cfg: GroundStateConfig, out: Path, seed: int, threads: int, meta: dict,
                     config_dir: Path) -> None:
    """Exact spectrum of the configured chain plus exact and perturbative energies over an h_x sweep."""
    h = cfg.hamiltonian
    target = exact_spectrum(h, tol=cfg.tol, seed=seed)
    rows = []
    for hx in cfg.h_x_sweep:
        p = h.replace(h_x=float(hx))
        exact = exact_spectrum(p, tol=cfg.tol, seed=seed).ground_energy
        rows.append({"h_x": float(hx), "exact": exact,
                     "small_h_x": _try(lambda: perturbative_energy_small_hx(p)),
                     "large_h_x": _try(lambda: perturbative_energy_large_hx(p)),
                     "small_h_z": _try(lambda: perturbative_energy_small_hz(p))})
    write_json(out / "ground_state.json", {**meta, "hamiltonian": dataclasses.asdict(h),
                                           "spectrum": target.to_dict(), "sweep": rows})
    cols = ("small_h_x", "large_h_x", "small_h_z")
    write_csv(out / "ground_state_sweep.csv", ("h_x", "exact") + cols,
              [[r["h_x"], r["exact"]] + [r[c]["value"] for c in cols] for r in rows])


def cmd_optimize(cfg: OptimizeConfig, out: Path, seed: int, threads: int, meta: dict,
                 config_dir: Path) -> None:
    """SPSA against the exact or noisy energy; writes the best circuit and the trace."""
    h = cfg.hamiltonian
    exact = ExactObjective(h, cfg.layers, cfg.symmetric)
    if cfg.objective == "exact":
        objective = exact
    else:
        device = cfg.device.load(h.n, config_dir)
        objective = NoisyObjective(h, cfg.layers, device, cfg.estimator, seed=seed, symmetric=cfg.symmetric)
    dim = exact.evaluator.n_params
    reference = exact.energy if cfg.track_damping else None
    theta, trace = spsa_optimize(objective, dim, cfg.spsa, seed=seed, reference=reference)
    spectrum = exact_spectrum(h, seed=seed)
    best_exact = exact.energy(theta)
    circuit = exact.evaluator.circuit(theta)
    (out / "best_circuit.txt").write_text(dumps(circuit))
    (out / "trace.csv").write_text(trace.to_csv())
    write_json(out / "optimize.json", {
        **meta, "hamiltonian": dataclasses.asdict(h), "layers": cfg.layers, "dim": dim,
        "best_params": theta, "best_measured": float(trace.records[-1].best) if trace.records else None,
        "best_exact": best_exact, "ground_energy": spectrum.ground_energy,
        "first_excited_energy": spectrum.first_excited_energy,
        "below_first_excited": bool(best_exact < spectrum.first_excited_energy),
        "spsa_gain": trace.a, "iterations": len(trace)})


HEATMAP_NAME = "benchmark_heatmap.csv"


def heatmap_rows(report: BenchmarkReport) -> tuple[list[str], list[list]]:
    """Class grid: one row per (seed, variant, method), one column per depth."""
    layers = sorted({r.layers for r in report.rows})
    grid: dict = {}
    for r in report.rows:
        grid.setdefault((r.seed, r.variant, r.method), {})[r.layers] = r.effectiveness
    header = ["seed", "variant", "method"] + [f"l{l}" for l in layers]
    rows = [[s, v, m] + [cells.get(l) for l in layers] for (s, v, m), cells in grid.items()]
    return header, rows


def cmd_benchmark(cfg: BenchmarkConfig, out: Path, seed: int | None, threads: int, meta: dict,
                  config_dir: Path, progress: Callable[[str], None] | None = None) -> None:
    """Method comparison over depths, seeds and readout variants."""
    spec = cfg.benchmark
    device = cfg.device.load(spec.hamiltonian.n, config_dir)
    seeds = [seed] if seed is not None else list(cfg.seeds)
    cache_dir = Path(cfg.cache_dir) if cfg.cache_dir else out / "cache"
    if not cache_dir.is_absolute() and cfg.cache_dir:
        cache_dir = config_dir / cache_dir
    report = run_benchmark(spec, device, seeds, MeasurementCache(cache_dir), threads, progress)
    write_json(out / "benchmark.json", {**meta, "device": device.to_dict(), **report.to_dict()})
    cols = BenchmarkReport.CSV_COLUMNS
    write_csv(out / "benchmark.csv", cols,
              [[getattr(r, c) for c in cols] for r in report.rows])
    header, rows = heatmap_rows(report)
    write_csv(out / HEATMAP_NAME, header, rows)


def cmd_readout_study(cfg: ReadoutStudyConfig, out: Path, seed: int, threads: int, meta: dict,
                      config_dir: Path) -> None:
    """Exact biased parity against the closed forms for random distributions."""
    summary, scatter = [], []
    for N in cfg.sizes:
        t = residual_table(N, cfg.count, cfg.e0, cfg.e1, seed=seed + N)
        entry = {"N": N, "rms": t["rms"], "max_abs_residual": float(np.max(np.abs(t["residual"])))}
        if N == 2:
            entry["bound_violations"] = int(np.sum((t["exact"] < t["lo"] - 1e-15) | (t["exact"] > t["hi"] + 1e-15)))
        summary.append(entry)
        lo = t.get("lo", [None] * len(t["p"]))
        hi = t.get("hi", [None] * len(t["p"]))
        for i in range(len(t["p"])):
            scatter.append([N, i, t["p"][i], t["exact"][i], t["approx"][i], t["residual"][i], lo[i], hi[i]])
    write_json(out / "readout_study.json", {**meta, "e0": cfg.e0, "e1": cfg.e1, "count": cfg.count,
                                            "sizes": summary})
    write_csv(out / "readout_scatter.csv", ("N", "index", "p", "exact", "approx", "residual", "lo", "hi"), scatter)


COMMANDS = {
    "ground-state": (GroundStateConfig, cmd_ground_state),
    "optimize": (OptimizeConfig, cmd_optimize),
    "benchmark": (BenchmarkConfig, cmd_benchmark),
    "readout-study": (ReadoutStudyConfig, cmd_readout_study),
}

ABORTS = (ConvergenceError, OptimizationError, SimulationError, FitFailure, EstimatorError, ArithmeticError,
          MemoryError)


def load_config(command: str, path: Path):
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return raw, build(COMMANDS[command][0], raw)


def parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mitiq-forge", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="JSON config file")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="base seed (benchmark: run only this seed)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for sweep cells")
    p.add_argument("--quiet", action="store_true", help="no progress messages")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = parser().parse_args(argv)
    log = (lambda m: None) if args.quiet else (lambda m: print(m, file=sys.stderr, flush=True))
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        raw, cfg = load_config(args.command, args.config)
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    seed = args.seed
    if args.command != "benchmark" and seed is None:
        seed = 0
    meta = provenance(args.command, raw, seed)
    args.out.mkdir(parents=True, exist_ok=True)
    run = COMMANDS[args.command][1]
    extra = {"progress": log} if args.command == "benchmark" else {}
    try:
        run(cfg, args.out, seed, args.threads, meta, args.config.parent.resolve(), **extra)
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_CONFIG
    except ABORTS as exc:
        log(f"aborted: {type(exc).__name__}: {exc}")
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
