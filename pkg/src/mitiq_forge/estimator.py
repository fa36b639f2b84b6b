"""Energy measurement pipeline.

Each Hamiltonian term gets its own circuit (basis change, light-cone
filter, basis decomposition). Shots are split over the best qubit
assignments and randomized-compiling draws, the counts are pooled, and the
parity is optionally corrected for readout bias before the terms are
summed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .circuit import (
    AnsatzParams,
    Circuit,
    build_alt_ansatz,
    decompose_to_basis,
    dumps,
    fold_cnots,
    hadamard,
    light_cone_filter,
    ry,
)
from .device import DeviceModel, gate_error_rates, readout_rates, select_assignments
from .hamiltonian import IsingParams, PauliTerm, expand_terms
from .readout import NonInvertibleError, mitigate_affine, parity_response, unbiased_parity
from .simulator import ShotTable, make_job, merge_tables, parity_expectation, run_jobs, zero_fraction


class EstimatorError(ValueError):
    pass


class BudgetError(EstimatorError):
    pass


class UndefinedDampingError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    """Measurement settings.

    ``shots_per_trajectory`` sets how many shots share one noise
    trajectory. Shared trajectories correlate shots, which the
    cluster-robust error bar accounts for.
    """

    shots_per_term: int = 4096
    assignments: int = 4
    rc_instances: int = 8
    readout_mitigation: bool = False
    fold_scale: float = 1.0
    depolarizing: bool = True
    readout: bool = True
    shots_per_trajectory: int = 32

    def __post_init__(self):
        for name in ("shots_per_term", "assignments", "rc_instances", "shots_per_trajectory"):
            if getattr(self, name) < 1:
                raise EstimatorError(f"{name} must be >= 1")
        if self.fold_scale < 1:
            raise EstimatorError("fold_scale must be >= 1")

    def replace(self, **changes) -> EstimatorConfig:
        d = asdict(self)
        d.update(changes)
        return EstimatorConfig(**d)

    @property
    def cells(self) -> int:
        return self.assignments * self.rc_instances


@dataclass(frozen=True)
class TermResult:
    label: str
    coefficient: float
    value: float
    sigma: float
    raw_value: float
    clamped: bool = False


@dataclass(frozen=True)
class EnergyEstimate:
    value: float
    sigma: float
    per_term: tuple[TermResult, ...] = ()
    config_hash: str = ""

    @classmethod
    def from_terms(cls, terms: Sequence[TermResult], config_hash: str = "") -> EnergyEstimate:
        value = float(sum(t.coefficient * t.value for t in terms))
        sigma = float(np.sqrt(sum((t.coefficient * t.sigma) ** 2 for t in terms)))
        return cls(value, sigma, tuple(terms), config_hash)

    @property
    def any_clamped(self) -> bool:
        return any(t.clamped for t in self.per_term)

    def to_dict(self) -> dict:
        return {"value": self.value, "sigma": self.sigma, "config_hash": self.config_hash,
                "clamped": self.any_clamped, "per_term": [asdict(t) for t in self.per_term]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class DampingEstimate:
    """Damping factor C with its standard deviation and the method that produced it."""

    c: float
    sigma: float
    method: str
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError("sigma must be non-negative")

    def to_dict(self) -> dict:
        return {"c": self.c, "sigma": self.sigma, "method": self.method, **self.extra}


def digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


def _cell_seed(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def split_shots(total: int, cells: int) -> list[int]:
    """Even split; the remainder goes round-robin to the first cells."""
    if total < cells:
        raise BudgetError(f"{total} shots cannot cover {cells} assignment x RC cells")
    base, rem = divmod(total, cells)
    return [base + (k < rem) for k in range(cells)]


# ---------------------------------------------------------------------------
# Term circuits
# ---------------------------------------------------------------------------

def term_circuit(ansatz: Circuit, t: PauliTerm) -> Circuit:
    """Basis-gate circuit measuring term ``t``: basis change, light cone, decomposition."""
    if any(q < 0 or q >= ansatz.n_qubits for q in t.support):
        raise EstimatorError(f"term {t.label()} not supported on {ansatz.n_qubits} qubits")
    gates = list(ansatz.gates)
    if t.basis == "X":
        for q in t.support:
            last = next((g for g in reversed(gates) if q in g.qubits), None)
            if last is None or last.kind != "RY":
                gates.append(ry(q, 0.0))
            gates.append(hadamard(q))
    c = ansatz.with_gates(gates)
    return decompose_to_basis(light_cone_filter(c, t.support))


def zero_theta_circuit(n: int, layers: int) -> Circuit:
    """The ansatz at theta = 0 with its (identity) rotations removed: CNOTs only."""
    c = build_alt_ansatz(n, AnsatzParams.zeros(n, layers, symmetric=True))
    return c.with_gates(g for g in c.gates if g.kind == "CNOT")


# ---------------------------------------------------------------------------
# Pooled sampling
# ---------------------------------------------------------------------------

@dataclass
class _Plan:
    jobs: list
    spans: list  # per measured circuit: (start, stop) into jobs
    rates: list  # per measured circuit: [(e0 array, e1 array, shots)]


def _plan(circuits: Sequence[Circuit], d: DeviceModel, cfg: EstimatorConfig, seed: int) -> _Plan:
    if cfg.assignments > 2 * d.n_physical:
        raise EstimatorError(f"only {2 * d.n_physical} assignments exist")
    shots = split_shots(cfg.shots_per_term, cfg.cells)
    jobs, spans, rates = [], [], []
    for ti, c in enumerate(circuits):
        if c.loop_size != d.n_physical:
            raise EstimatorError(f"circuit loop of {c.loop_size} qubits on a {d.n_physical}-qubit device")
        base = c
        if cfg.fold_scale != 1:
            base = fold_cnots(c, cfg.fold_scale, seed=_cell_seed(seed, ti, 1))
        picks = select_assignments(d, base, cfg.assignments)
        start = len(jobs)
        cell_rates = []
        for ai, a in enumerate(picks):
            e0, e1 = readout_rates(d, base, a)
            gate_rates = gate_error_rates(d, base, a)
            for ri in range(cfg.rc_instances):
                k = ai * cfg.rc_instances + ri
                jobs.append(make_job(base, d, a, shots[k], cfg.depolarizing, cfg.readout, tag=(ti, k),
                                     twirl_seed=_cell_seed(seed, ti, 2, ai, ri), rates=gate_rates))
                cell_rates.append((e0, e1, shots[k]))
        spans.append((start, len(jobs)))
        rates.append(cell_rates)
    return _Plan(jobs, spans, rates)


def sample_pooled(circuits: Sequence[Circuit], d: DeviceModel, cfg: EstimatorConfig,
                  seed: int) -> tuple[list[ShotTable], list, list[list[ShotTable]]]:
    """Pooled shot table per circuit, the per-cell readout rates and the per-cell tables."""
    plan = _plan(circuits, d, cfg, seed)
    tables = run_jobs(plan.jobs, seed, cfg.shots_per_trajectory, readout=cfg.readout)
    cells = [tables[a:b] for a, b in plan.spans]
    return [merge_tables(c) for c in cells], plan.rates, cells


def _pooled_slope(cell_rates, N: int) -> float:
    """Shot-weighted readout slope of a pooled parity."""
    total = sum(s for _, _, s in cell_rates)
    return sum(s / total * parity_response(e0, e1, N)[0] for e0, e1, s in cell_rates)


def _pooled_unbiased(cells: Sequence[ShotTable], cell_rates) -> float:
    """Shot-weighted mean of the per-cell unbiased parities."""
    total = sum(t.shots for t in cells)
    return sum(t.shots / total * unbiased_parity(t.counts, e0, e1)
               for t, (e0, e1, _) in zip(cells, cell_rates) if t.shots)


def config_digest(ansatz: Circuit, terms: Sequence[PauliTerm], d: DeviceModel,
                  cfg: EstimatorConfig, seed: int) -> str:
    return digest(dumps(ansatz), [(t.coefficient, t.support, t.kind) for t in terms],
                  d.to_dict(), asdict(cfg), seed)


@dataclass(frozen=True)
class RawTerm:
    """Pooled, unmitigated parity of one term and its readout response.

    ``slope`` is the shot-weighted product of (1 - e0 - e1) and ``offset``
    the additive shift estimated from the same shots, so that
    (raw - offset) / slope is the unbiased parity of every cell pooled.
    """

    label: str
    coefficient: float
    raw: float
    sigma: float
    slope: float
    offset: float

    def to_dict(self) -> dict:
        return asdict(self)


def measure_raw(ansatz: Circuit, terms: Sequence[PauliTerm], d: DeviceModel, cfg: EstimatorConfig,
                seed: int = 0) -> list[RawTerm]:
    """Sample every non-zero term; readout mitigation is left to ``assemble_energy``."""
    active = [t for t in terms if t.coefficient != 0.0]
    circuits = [term_circuit(ansatz, t) for t in active]
    pooled, rates, cells = sample_pooled(circuits, d, cfg, seed)
    out = []
    for t, c, table, cell_rates, cell_tables in zip(active, circuits, pooled, rates, cells):
        raw, sig = parity_expectation(table, c.measured)
        slope, offset = 1.0, 0.0
        if cfg.readout:
            slope = _pooled_slope(cell_rates, len(t.support))
            offset = raw - slope * _pooled_unbiased(cell_tables, cell_rates)
        out.append(RawTerm(t.label(), t.coefficient, raw, sig, slope, offset))
    return out


def assemble_energy(raws: Sequence[RawTerm], mitigate: bool, config_hash: str = "") -> EnergyEstimate:
    """Sum of coefficient-weighted parities, optionally readout-corrected per term."""
    results = []
    for r in raws:
        value, sigma, clamped = r.raw, r.sigma, False
        if mitigate:
            try:
                mp = mitigate_affine(r.raw, r.sigma, r.slope, r.offset)
            except NonInvertibleError as exc:
                raise EstimatorError(f"term {r.label}: {exc}") from exc
            value, sigma, clamped = mp.value, mp.sigma, mp.clamped
        results.append(TermResult(r.label, r.coefficient, value, sigma, r.raw, clamped))
    return EnergyEstimate.from_terms(results, config_hash)


def measure_energy(ansatz: Circuit, terms: Sequence[PauliTerm], d: DeviceModel,
                   cfg: EstimatorConfig, seed: int = 0) -> EnergyEstimate:
    """Noisy energy of ``ansatz`` under device ``d``; zero-coefficient terms are skipped."""
    raws = measure_raw(ansatz, terms, d, cfg, seed)
    return assemble_energy(raws, cfg.readout_mitigation and cfg.readout,
                           config_digest(ansatz, terms, d, cfg, seed))


def damping_from(measured: EnergyEstimate, exact_energy: float, method: str = "observed") -> DampingEstimate:
    if abs(exact_energy) <= 1e-9:
        raise UndefinedDampingError("damping is undefined for a vanishing exact energy")
    return DampingEstimate(measured.value / exact_energy, measured.sigma / abs(exact_energy), method,
                           {"energy": measured.value, "energy_sigma": measured.sigma})


def measure_damping(ansatz: Circuit, terms: Sequence[PauliTerm], d: DeviceModel, cfg: EstimatorConfig,
                    exact_energy: float, seed: int = 0) -> DampingEstimate:
    """Observed damping C = measured / exact."""
    if abs(exact_energy) <= 1e-9:
        raise UndefinedDampingError("damping is undefined for a vanishing exact energy")
    return damping_from(measure_energy(ansatz, terms, d, cfg, seed), exact_energy)


def measure_zero_theta_fidelity(shape: tuple[int, int], d: DeviceModel, cfg: EstimatorConfig,
                                seed: int = 0, terms: Sequence[PauliTerm] | None = None,
                                variant: str = "per_term") -> DampingEstimate:
    """Probability of reading all zeros from the theta = 0 circuit.

    ``per_term`` measures the light-cone circuit of every distinct term
    support and averages the fidelities with weights |coefficient|;
    ``register`` measures the whole register once.
    """
    n, layers = shape
    zc = zero_theta_circuit(n, layers)
    if variant == "register":
        c = zc.with_measured(range(n))
        (table,), _, _ = sample_pooled([c], d, cfg, seed)
        f, s = zero_fraction(table)
        return DampingEstimate(f, s, "zero_theta_fidelity", {"variant": "register"})
    if variant != "per_term":
        raise EstimatorError(f"unknown fidelity variant {variant!r}")
    if terms is None:
        terms = expand_terms(IsingParams(n))
    weights: dict[tuple[int, ...], float] = {}
    for t in terms:
        weights[t.support] = weights.get(t.support, 0.0) + abs(t.coefficient)
    supports = [s for s, w in weights.items() if w > 0]
    circuits = [light_cone_filter(zc, s) for s in supports]
    tables, _, _ = sample_pooled(circuits, d, cfg, seed)
    w = np.array([weights[s] for s in supports])
    w = w / w.sum()
    fs = np.array([zero_fraction(tb) for tb in tables])
    return DampingEstimate(float(w @ fs[:, 0]), float(np.sqrt(np.sum((w * fs[:, 1]) ** 2))),
                           "zero_theta_fidelity", {"variant": "per_term"})
