"""Variational optimization of the layered ansatz.

``spsa_optimize`` drives any (possibly noisy) energy objective.
``classical_optimize`` minimizes the exact energy with coordinate descent:
every angle enters through rotations whose energy dependence is a
trigonometric polynomial of known degree, so sampling ``2K + 1`` points
fixes it exactly and the 1D minimum follows without gradients.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .circuit import AnsatzParams, Circuit, build_alt_ansatz, cnot_pairs
from .device import DeviceModel
from .estimator import EstimatorConfig, measure_energy
from .hamiltonian import IsingOperator, IsingParams, expand_terms, exact_spectrum

Objective = Callable[[np.ndarray], "tuple[float, float]"]


class OptimizationError(RuntimeError):
    """Objective failure; ``trace`` holds the records gathered so far."""

    def __init__(self, message: str, trace: OptTrace):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# SPSA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpsaConfig:
    """SPSA gains a_k = a / (k + 1 + A)^alpha and c_k = c / (k + 1)^gamma.

    ``a = None`` calibrates the gain from ``calib_evals`` evaluations so the
    first update moves each angle by about ``target_step``.
    """

    a: float | None = None
    c: float = 0.1
    alpha: float = 0.602
    gamma: float = 0.101
    A: float | None = None
    max_iter: int = 300
    calib_evals: int = 50
    target_step: float = 0.1

    def __post_init__(self):
        if self.a is not None and self.a <= 0:
            raise ValueError("a must be positive")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.calib_evals < 2 or self.calib_evals % 2:
            raise ValueError("calib_evals must be a positive even number")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @property
    def stability(self) -> float:
        return 0.1 * self.max_iter if self.A is None else self.A


@dataclass
class TraceRecord:
    iteration: int
    theta_plus: np.ndarray
    theta_minus: np.ndarray
    e_plus: float
    e_minus: float
    sigma: float
    best: float
    damping: float | None = None


@dataclass
class OptTrace:
    records: list[TraceRecord] = field(default_factory=list)
    calibration: list[float] = field(default_factory=list)
    a: float = float("nan")

    def __len__(self):
        return len(self.records)

    @property
    def best_so_far(self) -> np.ndarray:
        return np.array([r.best for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "e_plus", "e_minus", "sigma", "best_so_far", "observed_damping"])
        for r in self.records:
            w.writerow([r.iteration, f"{r.e_plus:.10g}", f"{r.e_minus:.10g}", f"{r.sigma:.10g}",
                        f"{r.best:.10g}", "" if r.damping is None else f"{r.damping:.10g}"])
        return buf.getvalue()


def _call(objective: Objective, theta: np.ndarray, trace: OptTrace) -> tuple[float, float]:
    try:
        value, sigma = objective(theta)
    except Exception as exc:
        raise OptimizationError(f"objective failed: {exc}", trace) from exc
    return float(value), float(sigma)


def spsa_optimize(objective: Objective, dim: int, cfg: SpsaConfig = SpsaConfig(), seed: int = 0,
                  theta0: Sequence[float] | None = None,
                  reference: Callable[[np.ndarray], float] | None = None) -> tuple[np.ndarray, OptTrace]:
    """Minimize ``objective`` by SPSA; returns the lowest-energy point seen.

    ``reference`` (an exact energy function) adds the observed damping
    E_measured / E_exact to each trace record.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-np.pi, np.pi, dim) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"theta0 must have {dim} entries")
    trace = OptTrace()
    A = cfg.stability

    a = cfg.a
    if a is None:
        diffs = []
        for _ in range(cfg.calib_evals // 2):
            delta = rng.choice([-1.0, 1.0], size=dim)
            ep, _ = _call(objective, theta + cfg.c * delta, trace)
            em, _ = _call(objective, theta - cfg.c * delta, trace)
            diffs.append(abs(ep - em))
        trace.calibration = diffs
        g = float(np.mean(diffs)) / (2 * cfg.c)
        a = cfg.target_step * (A + 1) ** cfg.alpha / g if g > 0 else cfg.target_step
    trace.a = a

    best_e, best_theta = math.inf, theta.copy()
    for k in range(cfg.max_iter):
        ak = a / (k + 1 + A) ** cfg.alpha
        ck = cfg.c / (k + 1) ** cfg.gamma
        delta = rng.choice([-1.0, 1.0], size=dim)
        tp, tm = theta + ck * delta, theta - ck * delta
        ep, sp = _call(objective, tp, trace)
        em, sm = _call(objective, tm, trace)
        for e, t in ((ep, tp), (em, tm)):
            if e < best_e:
                best_e, best_theta = e, t.copy()
        damping = None
        if reference is not None:
            damping = 0.5 * (ep / reference(tp) + em / reference(tm))
        trace.records.append(TraceRecord(k, tp, tm, ep, em, math.hypot(sp, sm) / 2, best_e, damping))
        theta = theta - ak * (ep - em) / (2 * ck) / delta
    return best_theta, trace


def spsa_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, c: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One two-point SPSA gradient estimate."""
    delta = rng.choice([-1.0, 1.0], size=theta.shape)
    return (f(theta + c * delta) - f(theta - c * delta)) / (2 * c) / delta


# ---------------------------------------------------------------------------
# Fast exact energies of the real-valued ansatz
# ---------------------------------------------------------------------------

def _groups(n: int, size: int = 5) -> list[tuple[int, int]]:
    count = -(-n // size)
    bounds = np.linspace(0, n, count + 1).round().astype(int)
    return [(int(a), int(b - a)) for a, b in zip(bounds[:-1], bounds[1:])]


class AnsatzEvaluator:
    """Batched exact energies of the layered ansatz.

    The ansatz is real (RY and CNOT only), so states are real vectors. An RY
    layer is applied as a Kronecker product over blocks of at most five
    qubits and a CNOT layer as a single index permutation.
    """

    def __init__(self, h: IsingParams, layers: int, symmetric: bool = True):
        if h.n % 2 or h.n < 2:
            raise ValueError("the ansatz needs an even number of qubits")
        self.h = h
        self.n = h.n
        self.layers = layers
        self.symmetric = symmetric
        self.groups = _groups(self.n)
        idx = np.arange(2 ** self.n, dtype=np.int64)
        self._perms = {}
        for parity in (1, 2):
            p = idx.copy()
            pairs = cnot_pairs(self.n, parity) if self.n > 2 else [(0, 1)]
            for c, t in pairs:
                p ^= ((idx >> c) & 1) << t
            self._perms[parity] = p
        self._diag = IsingOperator(h).diagonal
        self.n_params = AnsatzParams.zeros(self.n, layers, symmetric).expected_length(self.n)

    def _full_angles(self, params: np.ndarray) -> np.ndarray:
        """(B, P) -> (B, l + 1, n) per-gate angles."""
        B = params.shape[0]
        if self.symmetric:
            pairs = params.reshape(B, self.layers + 1, 2)
            return np.tile(pairs, (1, 1, self.n // 2))
        return params.reshape(B, self.layers + 1, self.n)

    def _apply_ry_layer(self, state: np.ndarray, angles: np.ndarray) -> np.ndarray:
        B = state.shape[0]
        c, s = np.cos(angles / 2), np.sin(angles / 2)
        rot = np.empty((B, self.n, 2, 2))
        rot[:, :, 0, 0] = c
        rot[:, :, 0, 1] = -s
        rot[:, :, 1, 0] = s
        rot[:, :, 1, 1] = c
        G = len(self.groups)
        dims = [2 ** size for _, size in reversed(self.groups)]
        state = state.reshape((B,) + tuple(dims))
        for k, (start, size) in enumerate(self.groups):
            U = rot[:, start + size - 1]
            for q in range(start + size - 2, start - 1, -1):
                d = U.shape[1]
                U = (U[:, :, None, :, None] * rot[:, q, None, :, None, :]).reshape(B, 2 * d, 2 * d)
            ax = 1 + (G - 1 - k)
            moved = np.moveaxis(state, ax, -1)
            shape = moved.shape
            out = moved.reshape(B, -1, shape[-1]) @ np.swapaxes(U, 1, 2)
            state = np.moveaxis(out.reshape(shape), -1, ax)
        return np.ascontiguousarray(state).reshape(B, -1)

    def _cnot_layer(self, state: np.ndarray, layer: int) -> np.ndarray:
        return state[:, self._perms[1 if layer % 2 else 2]]

    def run(self, state: np.ndarray, angles: np.ndarray, first: int) -> np.ndarray:
        """Apply RY layer ``first`` and everything after it to ``state``.

        ``angles`` is (B, l + 1, n); ``state`` is the register just before
        RY layer ``first``.
        """
        state = self._apply_ry_layer(state, angles[:, first])
        for layer in range(first + 1, self.layers + 1):
            state = self._apply_ry_layer(self._cnot_layer(state, layer), angles[:, layer])
        return state

    def states(self, params) -> np.ndarray:
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if params.shape[1] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape[1]}")
        state = np.zeros((params.shape[0], 2 ** self.n))
        state[:, 0] = 1.0
        return self.run(state, self._full_angles(params), 0)

    def energy_of_states(self, psi: np.ndarray) -> np.ndarray:
        e = psi ** 2 @ self._diag
        if self.h.h_x != 0.0:
            t = psi.reshape((psi.shape[0],) + (2,) * self.n)
            flips = sum(np.flip(t, axis=1 + ax) for ax in range(self.n)).reshape(psi.shape)
            e = e - self.h.h_x * np.einsum("bi,bi->b", psi, flips)
        return e

    def energies(self, params) -> np.ndarray:
        return self.energy_of_states(self.states(params))

    def param_layer(self, j: int) -> int:
        return j // (2 if self.symmetric else self.n)

    def energy(self, params) -> float:
        return float(self.energies(params)[0])

    def gates_per_param(self) -> int:
        return self.n // 2 if self.symmetric else 1

    def circuit(self, params) -> Circuit:
        return build_alt_ansatz(self.n, AnsatzParams(self.layers, tuple(np.asarray(params, float)),
                                                     self.symmetric))


def _trig_minimize(samples: np.ndarray) -> tuple[float, float]:
    """Minimum of the degree-K trig polynomial through equispaced samples.

    ``samples[m]`` is the value at phi = 2 pi m / (2K + 1).
    """
    M = len(samples)
    K = (M - 1) // 2
    ks = np.arange(-K, K + 1)
    phis = 2 * np.pi * np.arange(M) / M
    coef = (samples[None, :] * np.exp(-1j * ks[:, None] * phis[None, :])).sum(axis=1) / M

    def f(phi):
        return float(np.real(np.sum(coef * np.exp(1j * ks * phi))))

    grid = np.linspace(0, 2 * np.pi, 64 * M, endpoint=False)
    vals = np.real(np.exp(1j * np.outer(grid, ks)) @ coef)
    j = int(np.argmin(vals))
    step = grid[1] - grid[0]
    res = minimize_scalar(f, bounds=(grid[j] - step, grid[j] + step), method="bounded",
                          options={"xatol": 1e-10})
    if res.fun <= vals[j]:
        return float(res.x), float(res.fun)
    return float(grid[j]), float(vals[j])


def coordinate_descent(ev: AnsatzEvaluator, theta: np.ndarray, max_sweeps: int = 200,
                       tol: float = 1e-9) -> tuple[np.ndarray, float, list[float]]:
    """Exact 1D minimization of each angle in turn until a sweep gains < tol.

    Angles are visited layer by layer; the register state in front of the
    current layer is carried along so only the remaining layers are re-run.
    """
    theta = np.array(theta, dtype=float)
    K = ev.gates_per_param()
    M = 2 * K + 1
    offsets = 2 * np.pi * np.arange(M) / M
    energy = ev.energy(theta)
    history = [energy]
    for _ in range(max_sweeps):
        start = energy
        front = np.zeros((1, 2 ** ev.n))
        front[0, 0] = 1.0
        layer = 0
        for j in range(len(theta)):
            lj = ev.param_layer(j)
            while layer < lj:
                ang = ev._full_angles(theta[None, :])
                front = ev._apply_ry_layer(front, ang[:, layer])
                layer += 1
                front = ev._cnot_layer(front, layer)
            batch = np.repeat(theta[None, :], M, axis=0)
            batch[:, j] += offsets
            psi = ev.run(np.repeat(front, M, axis=0), ev._full_angles(batch), lj)
            phi, e = _trig_minimize(ev.energy_of_states(psi))
            if e < energy:
                theta[j] = math.remainder(theta[j] + phi, 2 * math.pi)
                energy = e
        history.append(energy)
        if start - energy < tol:
            break
    return theta, ev.energy(theta), history


def pad_layers(theta: Sequence[float], n: int, symmetric: bool, extra: int = 2) -> np.ndarray:
    """Warm start for ``extra`` (even) more layers that leaves the state unchanged.

    Zero-angle layers in front act on |0...0>, where both RY(0) and CNOT
    are trivial; an even count keeps the CNOT parity of the old layers.
    """
    if extra % 2:
        raise ValueError("only an even number of layers can be prepended")
    width = 2 if symmetric else n
    return np.concatenate([np.zeros(extra * width), np.asarray(theta, float)])


@dataclass
class ClassicalResult:
    circuit: Circuit
    params: np.ndarray
    energy: float
    ground_energy: float | None
    history: list[float]

    @property
    def relative_error(self) -> float | None:
        if self.ground_energy is None:
            return None
        return abs(self.energy - self.ground_energy) / abs(self.ground_energy)


def classical_optimize(h: IsingParams, shape: tuple[int, int], symmetric: bool = True, restarts: int = 3,
                       seed: int = 0, max_sweeps: int = 200, spsa_iter: int = 0,
                       include_zero_start: bool = True, reference_ground: bool = True,
                       theta0: Sequence[float] | None = None) -> ClassicalResult:
    """Best of several coordinate-descent runs on the exact energy.

    Starts are uniform random angles (plus theta = 0 and an optional given
    ``theta0``). ``spsa_iter`` > 0 runs a short noiseless SPSA phase before
    the descent of each random start.
    """
    n, layers = shape
    if n != h.n:
        raise ValueError("shape and Hamiltonian disagree on n")
    if n > 24:
        raise MemoryError("classical optimization limited to n <= 24")
    ev = AnsatzEvaluator(h, layers, symmetric)
    rng = np.random.default_rng(seed)
    starts = []
    if theta0 is not None:
        starts.append(np.asarray(theta0, float))
    if include_zero_start:
        starts.append(np.zeros(ev.n_params))
    starts += [rng.uniform(-np.pi, np.pi, ev.n_params) for _ in range(restarts)]
    best = None
    for k, t0 in enumerate(starts):
        if spsa_iter and k >= (theta0 is not None) + include_zero_start:
            t0, _ = spsa_optimize(lambda t: (ev.energy(t), 0.0), ev.n_params,
                                  SpsaConfig(max_iter=spsa_iter, calib_evals=10), seed=seed + k, theta0=t0)
        theta, e, hist = coordinate_descent(ev, t0, max_sweeps)
        if best is None or e < best[1]:
            best = (theta, e, hist)
    theta, e, hist = best
    ground = exact_spectrum(h).ground_energy if reference_ground else None
    return ClassicalResult(ev.circuit(theta), theta, e, ground, hist)


LADDER_TOP = 16


def warm_source(l: int, top: int = LADDER_TOP) -> int | None:
    """Depth whose optimum seeds depth ``l`` (None for the base depths 1 and 2).

    Depths up to ``top`` climb in steps of two; deeper ones start from the
    top of the ladder with the same parity, so every depth has one fixed
    source whatever set of depths is requested.
    """
    if l <= 2:
        return None
    if l <= top:
        return l - 2
    return top if (top - l) % 2 == 0 else top - 1


def optimize_depths(h: IsingParams, depths: Sequence[int], symmetric: bool = True, restarts: int = 3,
                    seed: int = 0, first_sweeps: int = 200, step_sweeps: int = 10, tol: float = 1e-6,
                    reference_ground: bool = True, keep_all: bool = False,
                    warm: Mapping[int, Sequence[float]] | None = None) -> dict[int, ClassicalResult]:
    """Optimized circuits for several layer counts, each warm-started from a shallower optimum.

    Depths 1 and 2 get a full multi-start optimization. Depth l starts from
    the optimum at ``warm_source(l)`` padded with leading zero layers (same
    energy) and is refined by at most ``step_sweeps`` sweeps. ``warm`` maps
    already optimized depths to their parameters. ``keep_all`` also returns
    the intermediate depths that had to be optimized.
    """
    wanted = sorted(set(int(l) for l in depths))
    if not wanted or wanted[0] < 1:
        raise ValueError("depths must be >= 1")
    ground = exact_spectrum(h).ground_energy if reference_ground else None
    done: dict[int, ClassicalResult] = {}
    for l, t in (warm or {}).items():
        ev = AnsatzEvaluator(h, int(l), symmetric)
        theta = np.asarray(t, float)
        e = ev.energy(theta)
        done[int(l)] = ClassicalResult(ev.circuit(theta), theta, e, ground, [e])
    given = set(done)

    def solve(l: int) -> ClassicalResult:
        if l in done:
            return done[l]
        src = warm_source(l)
        if src is None:
            r = classical_optimize(h, (h.n, l), symmetric, restarts, seed, first_sweeps,
                                   reference_ground=False)
            done[l] = ClassicalResult(r.circuit, r.params, r.energy, ground, r.history)
        else:
            start = pad_layers(solve(src).params, h.n, symmetric, l - src)
            ev = AnsatzEvaluator(h, l, symmetric)
            theta, e, hist = coordinate_descent(ev, start, step_sweeps, tol)
            done[l] = ClassicalResult(ev.circuit(theta), theta, e, ground, hist)
        return done[l]

    for l in wanted:
        solve(l)
    if keep_all:
        return {l: r for l, r in sorted(done.items()) if l not in given or l in wanted}
    return {l: done[l] for l in wanted}


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------

class ExactObjective:
    """Noiseless energy of the ansatz at given angles (sigma 0)."""

    def __init__(self, h: IsingParams, layers: int, symmetric: bool = True):
        self.evaluator = AnsatzEvaluator(h, layers, symmetric)

    def __call__(self, theta) -> tuple[float, float]:
        return self.evaluator.energy(theta), 0.0

    def energy(self, theta) -> float:
        return self.evaluator.energy(theta)


class NoisyObjective:
    """Sampled energy under a device model; each call draws a fresh seed."""

    def __init__(self, h: IsingParams, layers: int, device: DeviceModel, cfg: EstimatorConfig,
                 seed: int = 0, symmetric: bool = True):
        self.h, self.layers, self.device, self.cfg = h, layers, device, cfg
        self.symmetric = symmetric
        self.terms = expand_terms(h)
        self._seeds = np.random.SeedSequence(seed)
        self.calls = 0

    def __call__(self, theta) -> tuple[float, float]:
        c = build_alt_ansatz(self.h.n, AnsatzParams(self.layers, tuple(np.asarray(theta, float)),
                                                    self.symmetric))
        s = int(self._seeds.spawn(1)[0].generate_state(1)[0])
        self.calls += 1
        est = measure_energy(c, self.terms, self.device, self.cfg, seed=s)
        return est.value, est.sigma
