"""Damping-factor predictions, mitigated energies and effectiveness classes.

Every method estimates the damping factor C in E_noisy ~ C E_exact (or
extrapolates the energy directly) and the mitigated energy is E_noisy / C.
``run_benchmark`` evaluates all methods over a layer sweep against the
exact energies of classically optimized circuits.
"""

from __future__ import annotations

import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .circuit import Circuit, ansatz_layers, decompose_to_basis, dumps
from .device import DeviceModel, gate_error_rates, select_assignments
from .estimator import (
    DampingEstimate,
    EnergyEstimate,
    EstimatorConfig,
    EstimatorError,
    RawTerm,
    UndefinedDampingError,
    assemble_energy,
    digest,
    measure_raw,
    measure_zero_theta_fidelity,
    term_circuit,
    zero_theta_circuit,
)
from .hamiltonian import IsingParams, PauliTerm, expand_terms, perturbative_energy_small_hx
from .simulator import exact_expectation, exact_state
from .vqe import AnsatzEvaluator, optimize_depths, warm_source

METHODS = ("zne", "from_pert", "depth_fit", "zero_theta_fidelity", "zero_theta_energy",
           "zne_first", "zne_last", "multiply_fidelities", "noise_model_sim")
VARIANTS = ("none", "all")


class FitFailure(ArithmeticError):
    """Exponential fit impossible; ``fallback`` carries the unextrapolated value if known."""

    def __init__(self, message: str, fallback: EnergyEstimate | None = None):
        super().__init__(message)
        self.fallback = fallback


# ---------------------------------------------------------------------------
# Exponential fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """y = amplitude * exp(-rate * x); covariance is over (amplitude, rate)."""

    amplitude: float
    rate: float
    covariance: np.ndarray
    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("a fit needs at least two points")
        if not math.isfinite(self.rate):
            raise ValueError("rate must be finite")

    def predict(self, x: float) -> tuple[float, float]:
        """Value and first-order standard deviation at ``x``."""
        e = math.exp(-self.rate * x)
        value = self.amplitude * e
        grad = np.array([e, -x * value])
        var = float(grad @ self.covariance @ grad)
        return value, math.sqrt(max(var, 0.0))

    @property
    def amplitude_sigma(self) -> float:
        return math.sqrt(max(float(self.covariance[0, 0]), 0.0))

    def to_dict(self) -> dict:
        return {"amplitude": self.amplitude, "rate": self.rate,
                "covariance": np.asarray(self.covariance).tolist(), "points": [list(p) for p in self.points]}


def fit_exponential(points: Sequence[tuple[float, float, float]]) -> FitResult:
    """Weighted least squares of log|y| against x.

    Each log|y| carries the standard deviation sigma/|y|. With all sigmas
    zero the fit is unweighted and its covariance is zero.
    """
    pts = [(float(x), float(y), float(s)) for x, y, s in points]
    if len(pts) < 2:
        raise FitFailure("need at least two points")
    x, y, s = (np.array(v) for v in zip(*pts))
    if np.any(s < 0):
        raise FitFailure("sigma must be non-negative")
    if np.any(y == 0) or len(set(np.sign(y))) > 1:
        raise FitFailure("values change sign or vanish")
    if np.any(np.abs(y) <= 2 * s):
        raise FitFailure("a value is within two standard deviations of zero")
    if len(set(x)) < 2:
        raise FitFailure("need two distinct abscissae")
    sign = float(np.sign(y[0]))
    logy = np.log(np.abs(y))
    weighted = bool(np.all(s > 0))
    w = 1.0 / (s / np.abs(y)) if weighted else np.ones_like(y)
    X = np.column_stack([np.ones_like(x), x])
    beta, *_ = np.linalg.lstsq(X * w[:, None], logy * w, rcond=None)
    amplitude = sign * math.exp(beta[0])
    rate = -float(beta[1])
    if weighted:
        cov_beta = np.linalg.inv((X * w[:, None] ** 2).T @ X)
    else:
        cov_beta = np.zeros((2, 2))
    J = np.array([[amplitude, 0.0], [0.0, -1.0]])
    return FitResult(amplitude, rate, J @ cov_beta @ J.T, tuple(pts))


class ExponentialFit(RegressorMixin, BaseEstimator):
    """Estimator wrapper around ``fit_exponential``: ``fit(X, y, sigma=None)``."""

    def fit(self, X, y, sigma=None):
        x = np.asarray(X, dtype=float).reshape(len(y), -1)
        if x.shape[1] != 1:
            raise ValueError("ExponentialFit takes a single feature")
        s = np.zeros(len(y)) if sigma is None else np.asarray(sigma, dtype=float)
        self.result_ = fit_exponential(list(zip(x[:, 0], np.asarray(y, float), s)))
        self.amplitude_ = self.result_.amplitude
        self.rate_ = self.result_.rate
        self.covariance_ = self.result_.covariance
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "result_")
        x = np.asarray(X, dtype=float).reshape(-1)
        return self.amplitude_ * np.exp(-self.rate_ * x)

    def predict_sigma(self, X):
        check_is_fitted(self, "result_")
        return np.array([self.result_.predict(float(v))[1] for v in np.asarray(X, float).reshape(-1)])


# ---------------------------------------------------------------------------
# Seeds and the measurement cache
# ---------------------------------------------------------------------------

def derive_seed(base: int, *keys) -> int:
    """Deterministic child seed for a named measurement."""
    h = digest(int(base), *keys)
    return int(np.random.SeedSequence([int(base) & 0xFFFFFFFF, int(h, 16) & 0xFFFFFFFF])
               .generate_state(1)[0])


# bumped whenever the meaning of a stored RawTerm changes
RAW_FORMAT = 2


class MeasurementCache:
    """Content-addressed store of JSON-able measurement records.

    Entries live in memory and, with ``directory`` set, as one JSON file per
    key. Reads are lock-free and insertion is exclusive: a value computed
    concurrently for the same key is discarded in favour of the first one
    stored, which is identical because measurements are seeded.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._mem: dict[str, object] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _path(self, kind: str, key: str) -> Path:
        return self.directory / kind / f"{key}.json"

    def lookup(self, kind: str, parts):
        """Stored value or None."""
        key = digest(kind, parts)
        if key in self._mem:
            self.hits += 1
            return self._mem[key]
        if self.directory is not None and self._path(kind, key).exists():
            with open(self._path(kind, key)) as fh:
                value = json.load(fh)
            self._mem[key] = value
            self.hits += 1
            return value
        return None

    def _put(self, key: str, kind: str, value) -> None:
        self._mem[key] = value
        if self.directory is not None:
            path = self._path(kind, key)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
            with open(tmp, "w") as fh:
                json.dump(value, fh, sort_keys=True)
            os.replace(tmp, path)

    def put(self, kind: str, parts, value) -> None:
        with self._lock:
            self._put(digest(kind, parts), kind, value)

    def get(self, kind: str, parts, compute: Callable[[], object]):
        """Stored value, or ``compute()`` inserted under the lock."""
        value = self.lookup(kind, parts)
        if value is not None:
            return value
        key = digest(kind, parts)
        value = compute()
        with self._lock:
            if key in self._mem:
                return self._mem[key]
            self.misses += 1
            self._put(key, kind, value)
        return value

    def raw(self, circuit: Circuit, terms: Sequence[PauliTerm], d: DeviceModel, cfg: EstimatorConfig,
            seed: int) -> list[RawTerm]:
        """Cached ``measure_raw``; the readout-mitigation flag does not change the samples."""
        base = cfg.replace(readout_mitigation=False)
        parts = [RAW_FORMAT, dumps(circuit), [(t.coefficient, t.support, t.kind) for t in terms],
                 d.to_dict(), asdict(base), int(seed)]
        rec = self.get("raw", parts, lambda: [r.to_dict() for r in measure_raw(circuit, terms, d, base, seed)])
        return [RawTerm(**r) for r in rec]

    def energy(self, circuit: Circuit, terms: Sequence[PauliTerm], d: DeviceModel, cfg: EstimatorConfig,
               seed: int) -> EnergyEstimate:
        return assemble_energy(self.raw(circuit, terms, d, cfg, seed), cfg.readout_mitigation and cfg.readout)


def _cache(cache: MeasurementCache | None) -> MeasurementCache:
    return MeasurementCache() if cache is None else cache


# ---------------------------------------------------------------------------
# Exact references
# ---------------------------------------------------------------------------

def circuit_energy(circuit: Circuit, h: IsingParams) -> float:
    """Exact energy of an ansatz circuit (RY and CNOT gates on |0...0>)."""
    state = exact_state(circuit)
    return float(sum(t.coefficient * exact_expectation(circuit, t, state) for t in expand_terms(h)))


def zero_theta_ideal_energy(terms: Sequence[PauliTerm]) -> float:
    """Energy of |0...0>: every Z-type term contributes its coefficient."""
    return float(sum(t.coefficient for t in terms if t.basis == "Z"))


# ---------------------------------------------------------------------------
# Methods
# ---------------------------------------------------------------------------

def _zne_energies(ansatz: Circuit, terms, d, cfg, scales, seed, cache) -> list[EnergyEstimate]:
    cache = _cache(cache)
    out = []
    for lam in scales:
        s = seed if lam == 1 else derive_seed(seed, "fold", float(lam))
        out.append(cache.energy(ansatz, terms, d, cfg.replace(fold_scale=float(lam)), s))
    return out


def _check_scales(scales: Sequence[float]) -> list[float]:
    scales = [float(s) for s in scales]
    if 1.0 not in scales or len(scales) < 2:
        raise ValueError("scales must include 1 and have at least two entries")
    return scales


def zne_fit(ansatz: Circuit, terms: Sequence[PauliTerm], d: DeviceModel, cfg: EstimatorConfig,
            scales: Sequence[float] = (1, 3, 5), seed: int = 0,
            cache: MeasurementCache | None = None) -> tuple[FitResult, list[EnergyEstimate]]:
    """Energies at each CNOT fold scale and their exponential fit."""
    scales = _check_scales(scales)
    energies = _zne_energies(ansatz, terms, d, cfg, scales, seed, cache)
    try:
        fit = fit_exponential([(lam, e.value, e.sigma) for lam, e in zip(scales, energies)])
    except FitFailure as exc:
        raise FitFailure(f"zne: {exc}", energies[scales.index(1.0)]) from None
    return fit, energies


def zne(ansatz: Circuit, h: IsingParams | Sequence[PauliTerm], d: DeviceModel, cfg: EstimatorConfig,
        scales: Sequence[float] = (1, 3, 5), seed: int = 0,
        cache: MeasurementCache | None = None) -> EnergyEstimate:
    """Zero-noise extrapolated energy; the scale-1 run uses ``seed`` itself."""
    terms = expand_terms(h) if isinstance(h, IsingParams) else list(h)
    fit, energies = zne_fit(ansatz, terms, d, cfg, scales, seed, cache)
    return EnergyEstimate(fit.amplitude, fit.amplitude_sigma, (), digest("zne", [e.config_hash for e in energies]))


def predict_from_pert(opt_circuits: Mapping[float, Circuit], h: IsingParams, d: DeviceModel,
                      cfg: EstimatorConfig, seed: int = 0, cache: MeasurementCache | None = None,
                      reference: str = "exact") -> DampingEstimate:
    """Mean damping of circuits optimized at perturbative h_x.

    ``reference`` "exact" divides by each circuit's exact energy,
    "perturbative" by the second-order ground energy.
    """
    if not opt_circuits:
        raise ValueError("need at least one perturbative circuit")
    cache = _cache(cache)
    cs, sig = [], []
    for hx in sorted(opt_circuits):
        hp = h.replace(h_x=float(hx))
        c = opt_circuits[hx]
        if reference == "exact":
            ref = circuit_energy(c, hp)
        elif reference == "perturbative":
            ref = perturbative_energy_small_hx(hp)
        else:
            raise ValueError(f"unknown reference {reference!r}")
        if abs(ref) <= 1e-9:
            raise UndefinedDampingError(f"reference energy vanishes at h_x={hx}")
        e = cache.energy(c, expand_terms(hp), d, cfg, derive_seed(seed, "pert", float(hx)))
        cs.append(e.value / ref)
        sig.append(e.sigma / abs(ref))
    cs, sig = np.array(cs), np.array(sig)
    k = len(cs)
    pooled = float(np.sqrt(np.sum(sig ** 2)) / k)
    spread = float(np.std(cs, ddof=1) / math.sqrt(k)) if k > 1 else pooled
    return DampingEstimate(float(cs.mean()), spread, "from_pert",
                           {"pooled_sigma": pooled, "points": cs.tolist(), "reference": reference})


def predict_from_depth(damping_by_layer: Sequence[tuple[int, float, float]], l_target: int,
                       l_max_fit: int = 15) -> DampingEstimate:
    """Exponential fit of C against l over l <= l_max_fit, evaluated at ``l_target``."""
    if l_target <= 0:
        raise ValueError("l_target must be positive")
    pts = [(l, c, s) for l, c, s in damping_by_layer if l <= l_max_fit]
    fit = fit_exponential(pts)
    c, s = fit.predict(l_target)
    return DampingEstimate(c, s, "depth_fit", {"fit": fit.to_dict()})


def _zero_theta_energy(n: int, layers: int, terms, d, cfg, seed, cache) -> EnergyEstimate:
    zterms = [t for t in terms if t.basis == "Z"]
    return _cache(cache).energy(zero_theta_circuit(n, layers), zterms, d, cfg, seed)


def predict_zero_theta(shape: tuple[int, int], d: DeviceModel, cfg: EstimatorConfig, variant: str = "fidelity",
                       seed: int = 0, h: IsingParams | None = None,
                       cache: MeasurementCache | None = None) -> DampingEstimate:
    """Damping of the rotation-free circuit: all-zero fidelity or energy ratio.

    The energy variant measures only the Z-type terms; the X terms vanish on
    |0...0> and stay zero under Pauli noise.
    """
    n, layers = shape
    h = IsingParams(n) if h is None else h
    terms = expand_terms(h)
    cache = _cache(cache)
    if variant == "fidelity":
        rec = cache.get("fidelity", [n, layers, d.to_dict(), asdict(cfg), int(seed),
                                     [(t.coefficient, t.support) for t in terms]],
                        lambda: measure_zero_theta_fidelity(shape, d, cfg, seed, terms).to_dict())
        return DampingEstimate(rec["c"], rec["sigma"], "zero_theta_fidelity", {"variant": rec.get("variant")})
    if variant != "energy":
        raise ValueError(f"unknown zero-theta variant {variant!r}")
    ideal = zero_theta_ideal_energy(terms)
    e = _zero_theta_energy(n, layers, terms, d, cfg, seed, cache)
    return DampingEstimate(e.value / ideal, e.sigma / abs(ideal), "zero_theta_energy", {"ideal": ideal})


def _ratio(a: float, sa: float, b: float, sb: float) -> tuple[float, float]:
    q = a / b
    return q, abs(q) * math.hypot(sa / a if a else 0.0, sb / b) if a else abs(sa / b)


def zne_combined(ansatz: Circuit, h: IsingParams, d: DeviceModel, cfg: EstimatorConfig, order: str = "zne_first",
                 scales: Sequence[float] = (1, 3, 5), seed: int = 0, calibration: str = "energy",
                 cache: MeasurementCache | None = None) -> EnergyEstimate:
    """ZNE combined with the rotation-free calibration circuit.

    ``zne_first`` divides the extrapolated energy by the extrapolated
    calibration damping; ``zne_last`` extrapolates the per-scale quotient.
    """
    scales = _check_scales(scales)
    terms = expand_terms(h)
    n, layers = h.n, ansatz_layers(ansatz)
    energies = _zne_energies(ansatz, terms, d, cfg, scales, seed, cache)
    cal = []
    for lam in scales:
        s = derive_seed(seed, "calibration", float(lam))
        c = cfg.replace(fold_scale=float(lam))
        if calibration == "energy":
            cal.append(predict_zero_theta((n, layers), d, c, "energy", s, h, cache))
        elif calibration == "fidelity":
            cal.append(predict_zero_theta((n, layers), d, c, "fidelity", s, h, cache))
        else:
            raise ValueError(f"unknown calibration {calibration!r}")
    if order == "zne_first":
        try:
            fe = fit_exponential([(lam, e.value, e.sigma) for lam, e in zip(scales, energies)])
            fc = fit_exponential([(lam, c.c, c.sigma) for lam, c in zip(scales, cal)])
        except FitFailure as exc:
            raise FitFailure(f"zne_first: {exc}", energies[scales.index(1.0)]) from None
        value, sigma = _ratio(fe.amplitude, fe.amplitude_sigma, fc.amplitude, fc.amplitude_sigma)
    elif order == "zne_last":
        quot = []
        for e, c in zip(energies, cal):
            if c.c <= 2 * c.sigma:
                raise FitFailure("zne_last: calibration damping not resolved", energies[scales.index(1.0)])
            quot.append(_ratio(e.value, e.sigma, c.c, c.sigma))
        try:
            fq = fit_exponential([(lam, q, s) for lam, (q, s) in zip(scales, quot)])
        except FitFailure as exc:
            raise FitFailure(f"zne_last: {exc}", energies[scales.index(1.0)]) from None
        value, sigma = fq.amplitude, fq.amplitude_sigma
    else:
        raise ValueError(f"unknown order {order!r}")
    return EnergyEstimate(value, sigma, (), digest(order, [e.config_hash for e in energies], calibration))


def predict_multiply_fidelities(d: DeviceModel, term_circuits: Sequence[Circuit],
                                weights: Sequence[float] | None = None, assignments: int = 1) -> DampingEstimate:
    """Weighted mean over terms of the product of gate fidelities in each light cone.

    Each term's product is averaged over its ``assignments`` best qubit
    assignments. ``weights`` are typically coefficient times exact
    expectation, which makes the result the predicted energy ratio.
    """
    if not term_circuits:
        raise ValueError("need at least one term circuit")
    w = np.ones(len(term_circuits)) if weights is None else np.asarray(weights, float)
    if w.shape != (len(term_circuits),) or w.sum() == 0:
        raise ValueError("weights must match the circuits and not sum to zero")
    prods = []
    for c in term_circuits:
        basis = decompose_to_basis(c)
        picks = select_assignments(d, basis, assignments)
        prods.append(np.mean([np.prod(1.0 - gate_error_rates(d, basis, a)) for a in picks]))
    prods = np.array(prods)
    return DampingEstimate(float(w @ prods / w.sum()), 0.0, "multiply_fidelities",
                           {"per_term": prods.tolist()})


def predict_noise_model_sim(ansatz: Circuit, h: IsingParams, d: DeviceModel, cfg: EstimatorConfig,
                            seed: int = 0, cache: MeasurementCache | None = None,
                            exact_energy: float | None = None) -> DampingEstimate:
    """Damping of an independent simulation under the full device model."""
    exact = circuit_energy(ansatz, h) if exact_energy is None else exact_energy
    if abs(exact) <= 1e-9:
        raise UndefinedDampingError("damping is undefined for a vanishing exact energy")
    e = _cache(cache).energy(ansatz, expand_terms(h), d, cfg, derive_seed(seed, "noise_model_sim"))
    return DampingEstimate(e.value / exact, e.sigma / abs(exact), "noise_model_sim")


# ---------------------------------------------------------------------------
# Mitigated energies and classification
# ---------------------------------------------------------------------------

def classify_effectiveness(e_mit: float, sigma: float, e_true: float) -> int:
    """3 confidently within 10% of e_true, 2 straddling at 1 sigma, 1 at 2 sigma, 0 confidently outside."""
    if e_true == 0:
        raise ValueError("e_true must be non-zero")
    if not sigma >= 0:
        raise ValueError("sigma must be non-negative")
    d = abs(e_mit - e_true)
    t = 0.1 * abs(e_true)
    if d + sigma <= t:
        return 3
    if abs(d - t) <= sigma:
        return 2
    if abs(d - t) <= 2 * sigma:
        return 1
    return 0


def mitigated_energy(raw: EnergyEstimate, damping: DampingEstimate) -> tuple[float, float]:
    """E_raw / C with first-order error propagation.

    Undefined (raises) when C or the raw energy is not resolved from zero
    at two standard deviations.
    """
    if damping.c <= 0 or damping.c <= 2 * damping.sigma:
        raise UndefinedDampingError(f"damping {damping.c:.4g} +- {damping.sigma:.2g} not resolved")
    if abs(raw.value) <= 2 * raw.sigma:
        raise UndefinedDampingError(f"raw energy {raw.value:.4g} +- {raw.sigma:.2g} not resolved")
    return _ratio(raw.value, raw.sigma, damping.c, damping.sigma)


def relative_error(e_mit: float, sigma: float, e_true: float) -> tuple[float, float]:
    return abs(e_mit - e_true) / abs(e_true), sigma / abs(e_true)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerSettings:
    restarts: int = 3
    seed: int = 0
    first_sweeps: int = 200
    step_sweeps: int = 10
    tol: float = 1e-6


@dataclass(frozen=True)
class BenchmarkSpec:
    """What to sweep: target Hamiltonian, depths, methods and measurement settings.

    ``gate_noise_scale`` multiplies every gate error rate of the device.
    ``fit_layers`` are extra depths measured only as points for
    ``depth_fit``; rows are reported for ``layers`` alone.
    ``calibration`` picks the zero-theta variant used by the ZNE
    combinations and ``pert_reference`` the divisor of ``from_pert``.
    """

    hamiltonian: IsingParams = IsingParams(12)
    layers: tuple[int, ...] = (1, 2, 3, 4, 6, 8, 10, 12, 15)
    fit_layers: tuple[int, ...] = ()
    methods: tuple[str, ...] = METHODS
    variants: tuple[str, ...] = VARIANTS
    pert_h_x: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    zne_scales: tuple[float, ...] = (1.0, 3.0, 5.0)
    l_max_fit: int = 15
    calibration: str = "energy"
    pert_reference: str = "exact"
    gate_noise_scale: float = 1.0
    estimator: EstimatorConfig = EstimatorConfig(shots_per_term=1024)
    optimizer: OptimizerSettings = OptimizerSettings()

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        bad = set(self.variants) - set(VARIANTS)
        if bad:
            raise ValueError(f"unknown variants {sorted(bad)}")
        if not self.layers or min(self.layers) < 1 or min(self.fit_layers, default=1) < 1:
            raise ValueError("layers must be positive")
        if self.calibration not in ("energy", "fidelity"):
            raise ValueError("calibration must be 'energy' or 'fidelity'")
        if self.pert_reference not in ("exact", "perturbative"):
            raise ValueError("pert_reference must be 'exact' or 'perturbative'")
        if self.gate_noise_scale < 0:
            raise ValueError("gate_noise_scale must be non-negative")
        _check_scales(self.zne_scales)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hamiltonian"] = asdict(self.hamiltonian)
        return d


def optimized_circuits(h: IsingParams, layers: Sequence[int], opt: OptimizerSettings,
                       cache: MeasurementCache | None = None) -> dict[int, Circuit]:
    """Classically optimized symmetric ansatz circuits, one per depth (cached per depth)."""
    cache = _cache(cache)
    parts = [asdict(h), asdict(opt)]
    wanted = sorted(set(int(l) for l in layers))
    stored: dict[int, dict] = {}
    missing = []
    for l in wanted:
        chain = [l]
        while chain[-1] is not None and cache.lookup("circuit", parts + [chain[-1]]) is None:
            chain.append(warm_source(chain[-1]))
        if chain[-1] is not None:
            stored[chain[-1]] = cache.lookup("circuit", parts + [chain[-1]])
        if len(chain) > 1 or chain[-1] is None:
            missing.append(l)
    if missing:
        warm = {l: rec["params"] for l, rec in stored.items()}
        results = optimize_depths(h, missing, True, opt.restarts, opt.seed, opt.first_sweeps, opt.step_sweeps,
                                  opt.tol, reference_ground=False, keep_all=True, warm=warm)
        for l, r in results.items():
            rec = {"params": [float(x) for x in r.params], "energy": float(r.energy)}
            cache.put("circuit", parts + [l], rec)
    out = {}
    for l in wanted:
        rec = cache.lookup("circuit", parts + [l])
        out[l] = AnsatzEvaluator(h, l, True).circuit(np.array(rec["params"]))
    return out


@dataclass
class BenchmarkRow:
    seed: int
    variant: str
    layers: int
    method: str
    c_pred: float | None
    sigma: float | None
    e_raw: float | None
    e_raw_sigma: float | None
    e_mitigated: float | None
    e_sigma: float | None
    e_true: float
    c_observed: float
    c_observed_sigma: float
    rel_error: float | None
    rel_error_sigma: float | None
    effectiveness: int
    error: str | None = None


@dataclass
class BenchmarkReport:
    spec: dict
    seeds: list[int]
    rows: list[BenchmarkRow] = field(default_factory=list)

    def max_layers(self, min_class: int = 2) -> dict:
        """Largest depth with class >= ``min_class`` per (seed, variant, method); 0 if none."""
        out: dict = {}
        for r in self.rows:
            key = (r.seed, r.variant, r.method)
            out.setdefault(key, 0)
            if r.effectiveness >= min_class:
                out[key] = max(out[key], r.layers)
        return out

    def to_dict(self) -> dict:
        summary = [{"seed": s, "variant": v, "method": m, "max_layers_class_ge_2": l}
                   for (s, v, m), l in sorted(self.max_layers().items())]
        return {"spec": self.spec, "seeds": self.seeds, "rows": [asdict(r) for r in self.rows],
                "summary": summary}

    CSV_COLUMNS = ("seed", "variant", "layers", "method", "c_observed", "c_pred", "sigma", "e_mitigated",
                   "e_sigma", "e_true", "rel_error", "effectiveness", "error")


class _Cell:
    """Measurements for one (seed, depth) pair, shared by all methods and variants."""

    def __init__(self, spec: BenchmarkSpec, d: DeviceModel, seed: int, l: int, target: Circuit,
                 pert: dict[float, Circuit], cache: MeasurementCache):
        self.spec, self.d, self.seed, self.l = spec, d, seed, l
        self.target, self.pert, self.cache = target, pert, cache
        self.h = spec.hamiltonian
        self.terms = expand_terms(self.h)
        self.e_true = circuit_energy(target, self.h)
        self.raw_seed = derive_seed(seed, "target", l)

    def cfg(self, variant: str) -> EstimatorConfig:
        return self.spec.estimator.replace(readout_mitigation=variant == "all")

    def raw(self, variant: str) -> EnergyEstimate:
        return self.cache.energy(self.target, self.terms, self.d, self.cfg(variant), self.raw_seed)

    def observed(self, variant: str) -> DampingEstimate:
        e = self.raw(variant)
        return DampingEstimate(e.value / self.e_true, e.sigma / abs(self.e_true), "observed")

    def method(self, name: str, variant: str, depth_points) -> tuple[DampingEstimate | None, EnergyEstimate | None]:
        """Either a damping prediction or a directly mitigated energy."""
        spec, cfg, cache = self.spec, self.cfg(variant), self.cache
        if name == "zne":
            return None, zne(self.target, self.terms, self.d, cfg, spec.zne_scales, self.raw_seed, cache)
        if name in ("zne_first", "zne_last"):
            return None, zne_combined(self.target, self.h, self.d, cfg, name, spec.zne_scales, self.raw_seed,
                                      spec.calibration, cache)
        if name == "from_pert":
            return predict_from_pert(self.pert, self.h, self.d, cfg, derive_seed(self.seed, "pert", self.l),
                                     cache, spec.pert_reference), None
        if name == "depth_fit":
            return predict_from_depth(depth_points, self.l, spec.l_max_fit), None
        if name in ("zero_theta_fidelity", "zero_theta_energy"):
            v = "fidelity" if name == "zero_theta_fidelity" else "energy"
            fcfg = cfg.replace(readout_mitigation=False) if v == "fidelity" else cfg
            return predict_zero_theta((self.h.n, self.l), self.d, fcfg, v,
                                      derive_seed(self.seed, "zero_theta", self.l), self.h, cache), None
        if name == "multiply_fidelities":
            state_terms = [t for t in self.terms if t.coefficient != 0.0]
            state = exact_state(self.target)
            w = [t.coefficient * exact_expectation(self.target, t, state) for t in state_terms]
            circuits = [term_circuit(self.target, t) for t in state_terms]
            return predict_multiply_fidelities(self.d, circuits, w, cfg.assignments), None
        if name == "noise_model_sim":
            return predict_noise_model_sim(self.target, self.h, self.d, cfg, derive_seed(self.seed, "sim", self.l),
                                           cache, self.e_true), None
        raise ValueError(f"unknown method {name!r}")


def _row(cell: _Cell, variant: str, name: str, depth_points) -> BenchmarkRow:
    raw = cell.raw(variant)
    obs = cell.observed(variant)
    base = dict(seed=cell.seed, variant=variant, layers=cell.l, method=name, e_raw=raw.value,
                e_raw_sigma=raw.sigma, e_true=cell.e_true, c_observed=obs.c, c_observed_sigma=obs.sigma)
    empty = dict(c_pred=None, sigma=None, e_mitigated=None, e_sigma=None, rel_error=None,
                 rel_error_sigma=None, effectiveness=0)
    try:
        damping, energy = cell.method(name, variant, depth_points)
        if energy is not None:
            e_mit, e_sig = energy.value, energy.sigma
            c_pred, c_sig = _ratio(raw.value, raw.sigma, e_mit, e_sig) if e_mit else (None, None)
        else:
            c_pred, c_sig = damping.c, damping.sigma
            e_mit, e_sig = mitigated_energy(raw, damping)
    except (FitFailure, UndefinedDampingError, EstimatorError) as exc:
        return BenchmarkRow(**base, **empty, error=f"{type(exc).__name__}: {exc}")
    rel, rel_sig = relative_error(e_mit, e_sig, cell.e_true)
    return BenchmarkRow(**base, c_pred=c_pred, sigma=c_sig, e_mitigated=e_mit, e_sigma=e_sig, rel_error=rel,
                        rel_error_sigma=rel_sig, effectiveness=classify_effectiveness(e_mit, e_sig, cell.e_true))


def run_benchmark(spec: BenchmarkSpec, device: DeviceModel, seeds: Sequence[int],
                  cache: MeasurementCache | None = None, threads: int = 1,
                  progress: Callable[[str], None] | None = None) -> BenchmarkReport:
    """Every method at every depth, seed and readout variant.

    Rows are ordered by (seed, variant, depth, method) regardless of the
    number of worker threads.
    """
    cache = _cache(cache)
    h = spec.hamiltonian
    if device.n_physical != h.n:
        raise ValueError(f"{h.n}-qubit Hamiltonian on a {device.n_physical}-qubit device")
    d = device.scaled(spec.gate_noise_scale, 1.0) if spec.gate_noise_scale != 1.0 else device
    layers = sorted(set(spec.layers))
    fit_layers = sorted(set(l for l in spec.layers + spec.fit_layers if l <= spec.l_max_fit))
    measured = sorted(set(layers) | set(fit_layers))
    targets = optimized_circuits(h, measured, spec.optimizer, cache)
    pert: dict[int, dict[float, Circuit]] = {l: {} for l in measured}
    if "from_pert" in spec.methods:
        for hx in spec.pert_h_x:
            for l, c in optimized_circuits(h.replace(h_x=float(hx)), layers, spec.optimizer, cache).items():
                pert[l][float(hx)] = c
    if progress:
        progress("circuits ready")

    cells = {(s, l): _Cell(spec, d, s, l, targets[l], pert[l], cache) for s in seeds for l in measured}

    def measure(key):
        cell = cells[key]
        for v in spec.variants:
            cell.raw(v)
        return key

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for key in pool.map(measure, list(cells)):
            if progress:
                progress(f"seed {key[0]} l={key[1]} measured")

    report = BenchmarkReport(spec.to_dict(), [int(s) for s in seeds])

    def evaluate(key):
        s, v = key
        depth_points = []
        for l in fit_layers:
            o = cells[(s, l)].observed(v)
            depth_points.append((l, o.c, o.sigma))
        return [_row(cells[(s, l)], v, m, depth_points) for l in layers for m in spec.methods]

    keys = [(s, v) for s in seeds for v in spec.variants]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for key, rows in zip(keys, pool.map(evaluate, keys)):
            report.rows.extend(rows)
            if progress:
                progress(f"seed {key[0]} variant {key[1]} done")
    return report
