"""Simulated loop device: gate and readout error rates, assignment scoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .circuit import Circuit, QubitAssignment, decompose_to_basis, enumerate_assignments, is_basis_circuit

DATA_DIR = Path(__file__).parent / "data"


class DeviceError(ValueError):
    pass


def _edge(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class DeviceModel:
    """Loop of ``n_physical`` qubits with per-edge CNOT and per-qubit error rates.

    ``readout_e0[q]`` is the probability a prepared 0 reads as 1 and
    ``readout_e1[q]`` the probability a prepared 1 reads as 0.
    """

    n_physical: int
    cnot_error: Mapping[tuple[int, int], float]
    readout_e0: tuple[float, ...]
    readout_e1: tuple[float, ...]
    single_qubit_error: tuple[float, ...]
    name: str = field(default="device", compare=False)

    def __post_init__(self):
        n = self.n_physical
        edges = {_edge(int(a), int(b)): float(p) for (a, b), p in dict(self.cnot_error).items()}
        object.__setattr__(self, "cnot_error", edges)
        for attr in ("readout_e0", "readout_e1", "single_qubit_error"):
            vals = tuple(float(x) for x in getattr(self, attr))
            if len(vals) != n:
                raise DeviceError(f"{attr} needs {n} entries, got {len(vals)}")
            object.__setattr__(self, attr, vals)
        for (a, b) in (_edge(q, (q + 1) % n) for q in range(n)):
            if (a, b) not in edges:
                raise DeviceError(f"missing CNOT error for loop edge {a}-{b}")
        probs = list(edges.values()) + list(self.readout_e0) + list(self.readout_e1) + list(self.single_qubit_error)
        if any(not (0.0 <= p < 0.5) for p in probs):
            raise DeviceError("error probabilities must lie in [0, 0.5)")

    def cnot_rate(self, a: int, b: int) -> float:
        try:
            return self.cnot_error[_edge(a, b)]
        except KeyError:
            raise DeviceError(f"no CNOT between physical qubits {a} and {b}") from None

    def scaled(self, gate_factor: float = 1.0, readout_factor: float = 1.0) -> DeviceModel:
        return DeviceModel(
            self.n_physical,
            {e: min(p * gate_factor, 0.4999) for e, p in self.cnot_error.items()},
            tuple(min(p * readout_factor, 0.4999) for p in self.readout_e0),
            tuple(min(p * readout_factor, 0.4999) for p in self.readout_e1),
            tuple(min(p * gate_factor, 0.4999) for p in self.single_qubit_error),
            name=f"{self.name}*{gate_factor:g}/{readout_factor:g}",
        )

    def without_readout(self) -> DeviceModel:
        return self.scaled(1.0, 0.0)

    def without_gate_noise(self) -> DeviceModel:
        return self.scaled(0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "n": self.n_physical,
            "readout_e0": list(self.readout_e0),
            "readout_e1": list(self.readout_e1),
            "cnot_error": {f"{a}-{b}": p for (a, b), p in sorted(self.cnot_error.items())},
            "sq_error": list(self.single_qubit_error),
        }

    def digest_key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def device_from_dict(d: Mapping, name: str = "device") -> DeviceModel:
    required = {"n", "readout_e0", "readout_e1", "cnot_error", "sq_error"}
    missing = required - set(d)
    if missing:
        raise DeviceError(f"device profile missing keys: {sorted(missing)}")
    edges = {}
    for key, p in d["cnot_error"].items():
        try:
            a, b = (int(x) for x in key.split("-"))
        except ValueError:
            raise DeviceError(f"bad edge key {key!r}, expected 'i-j'") from None
        edges[(a, b)] = p
    return DeviceModel(int(d["n"]), edges, d["readout_e0"], d["readout_e1"], d["sq_error"], name=name)


def load_device(path: str | Path) -> DeviceModel:
    path = Path(path)
    if not path.exists() and (DATA_DIR / path.name).exists():
        path = DATA_DIR / path.name
    with open(path) as fh:
        return device_from_dict(json.load(fh), name=path.stem)


def save_device(d: DeviceModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(d.to_dict(), fh, indent=2)
        fh.write("\n")


def uniform_device(n: int, cnot_error: float = 0.0, sq_error: float | None = None,
                   e0: float = 0.0, e1: float = 0.0) -> DeviceModel:
    if sq_error is None:
        sq_error = cnot_error / 10
    edges = {_edge(q, (q + 1) % n): cnot_error for q in range(n)}
    return DeviceModel(n, edges, (e0,) * n, (e1,) * n, (sq_error,) * n, name="uniform")


def synthetic_device(n: int, seed: int, cnot_mean: float = 0.01, cnot_spread: float = 0.5,
                     e0_mean: float = 0.02, e1_mean: float = 0.05, sq_ratio: float = 0.1) -> DeviceModel:
    """Heterogeneous loop profile with log-normal scatter around the given means."""
    rng = np.random.default_rng(seed)

    def scatter(mean, size):
        return np.clip(mean * rng.lognormal(-cnot_spread ** 2 / 2, cnot_spread, size), 0.0, 0.45)

    cx = scatter(cnot_mean, n)
    edges = {_edge(q, (q + 1) % n): round(float(cx[q]), 6) for q in range(n)}
    e0 = [round(float(x), 6) for x in scatter(e0_mean, n)]
    e1 = [round(float(x), 6) for x in scatter(e1_mean, n)]
    sq = [round(float(x), 7) for x in sq_ratio * 0.5 * (cx + np.roll(cx, 1))]
    return DeviceModel(n, edges, e0, e1, sq, name=f"synthetic{n}")


def bundled_device(n: int) -> DeviceModel:
    """The committed synthetic profile for an ``n``-qubit loop."""
    return load_device(DATA_DIR / f"synthetic_loop{n}.json")


# ---------------------------------------------------------------------------
# Gate error rates and assignment scoring
# ---------------------------------------------------------------------------

def physical_qubit(c: Circuit, a: QubitAssignment, q: int) -> int:
    if a.n != c.loop_size:
        raise DeviceError(f"assignment for {a.n} qubits used on a {c.loop_size}-qubit loop")
    return a.physical(c.labels[q])


def gate_error_rates(d: DeviceModel, c: Circuit, a: QubitAssignment) -> np.ndarray:
    """Per-gate depolarizing probability for a basis circuit placed by ``a``.

    RZ is a virtual frame change and Pauli gates are noiseless dressings,
    so both get rate 0.
    """
    if not is_basis_circuit(c):
        raise DeviceError("error rates are defined for basis-gate circuits only")
    if a.n != d.n_physical:
        raise DeviceError("assignment size does not match the device")
    phys = [physical_qubit(c, a, q) for q in range(c.n_qubits)]
    rates = np.zeros(len(c.gates))
    for k, g in enumerate(c.gates):
        if g.kind == "CNOT":
            rates[k] = d.cnot_rate(phys[g.qubits[0]], phys[g.qubits[1]])
        elif g.kind == "SX":
            rates[k] = d.single_qubit_error[phys[g.qubits[0]]]
    return rates


def readout_rates(d: DeviceModel, c: Circuit, a: QubitAssignment) -> tuple[np.ndarray, np.ndarray]:
    phys = [physical_qubit(c, a, q) for q in c.measured]
    return (np.array([d.readout_e0[p] for p in phys]), np.array([d.readout_e1[p] for p in phys]))


def score_assignment(d: DeviceModel, c: Circuit, a: QubitAssignment,
                     single_qubit: bool = True, readout: bool = False) -> float:
    """Product of gate fidelities (1 - e) of ``c`` under assignment ``a``."""
    basis = c if is_basis_circuit(c) else decompose_to_basis(c)
    rates = gate_error_rates(d, basis, a)
    if not single_qubit:
        rates = np.where([g.kind == "CNOT" for g in basis.gates], rates, 0.0)
    score = float(np.prod(1.0 - rates))
    if readout:
        e0, e1 = readout_rates(d, basis, a)
        score *= float(np.prod(1.0 - (e0 + e1) / 2))
    return score


def select_assignments(d: DeviceModel, c: Circuit, count: int, **score_kw) -> list[QubitAssignment]:
    """The ``count`` best-scoring assignments, ties by (rotation, reflected)."""
    candidates = enumerate_assignments(d.n_physical)
    if not 1 <= count <= len(candidates):
        raise DeviceError(f"count must be in [1, {len(candidates)}]")
    scored = [(round(score_assignment(d, c, a, **score_kw), 12), a) for a in candidates]
    scored.sort(key=lambda sa: (-sa[0], sa[1].rotation, sa[1].reflected))
    return [a for _, a in scored[:count]]


def assignment_scores(d: DeviceModel, c: Circuit, assignments: Sequence[QubitAssignment], **kw) -> list[float]:
    return [score_assignment(d, c, a, **kw) for a in assignments]
