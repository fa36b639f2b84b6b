"""Circuit representation, ALT ansatz construction and circuit transforms.

Qubit ``q`` corresponds to bit ``q`` of a computational basis index
(little-endian). Gates are listed in time order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

GATE_KINDS = ("CNOT", "RY", "RZ", "SX", "X", "Y", "Z", "H")
PAULI_KINDS = ("X", "Y", "Z")
BASIS_KINDS = frozenset({"CNOT", "RZ", "SX", "X", "Y", "Z"})


class CircuitError(ValueError):
    """Raised for malformed circuits or unsupported transforms."""


class ParameterShapeError(CircuitError):
    pass


class TopologyError(CircuitError):
    pass


class DecompositionError(CircuitError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        arity = 2 if self.kind == "CNOT" else 1
        if len(self.qubits) != arity:
            raise CircuitError(f"{self.kind} takes {arity} qubit(s), got {self.qubits}")
        if arity == 2 and self.qubits[0] == self.qubits[1]:
            raise CircuitError("CNOT control and target must differ")
        if (self.kind in ("RY", "RZ")) != (self.angle is not None):
            raise CircuitError(f"angle given/missing for {self.kind}")

    def relabel(self, mapping) -> Gate:
        return Gate(self.kind, tuple(mapping[q] for q in self.qubits), self.angle)


def cnot(c: int, t: int) -> Gate:
    return Gate("CNOT", (c, t))


def ry(q: int, theta: float) -> Gate:
    return Gate("RY", (q,), float(theta))


def rz(q: int, theta: float) -> Gate:
    return Gate("RZ", (q,), float(theta))


def sx(q: int) -> Gate:
    return Gate("SX", (q,))


def pauli(q: int, label: str) -> Gate:
    if label not in PAULI_KINDS:
        raise CircuitError(f"not a Pauli label: {label!r}")
    return Gate(label, (q,))


def hadamard(q: int) -> Gate:
    return Gate("H", (q,))


@dataclass(frozen=True)
class Circuit:
    """Immutable gate list.

    ``labels[k]`` is the logical loop position of register qubit ``k``;
    it is the identity for full-loop circuits and records the original
    positions after light-cone filtering. ``loop_size`` is the size of
    the logical loop the labels refer to.
    """

    n_qubits: int
    gates: tuple[Gate, ...] = ()
    measured: tuple[int, ...] = ()
    labels: tuple[int, ...] | None = None
    loop_size: int | None = None

    def __post_init__(self):
        n = self.n_qubits
        if n < 1:
            raise CircuitError("circuit needs at least one qubit")
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "measured", tuple(int(q) for q in self.measured))
        labels = tuple(range(n)) if self.labels is None else tuple(int(q) for q in self.labels)
        if len(labels) != n:
            raise CircuitError("labels must have one entry per qubit")
        object.__setattr__(self, "labels", labels)
        if self.loop_size is None:
            object.__setattr__(self, "loop_size", n)
        for g in self.gates:
            if any(q < 0 or q >= n for q in g.qubits):
                raise CircuitError(f"gate {g} acts outside [0, {n})")
        if len(set(self.measured)) != len(self.measured):
            raise CircuitError("measured qubits must be distinct")
        if any(q < 0 or q >= n for q in self.measured):
            raise CircuitError("measured qubit out of range")

    @property
    def is_full_loop(self) -> bool:
        return self.loop_size == self.n_qubits and self.labels == tuple(range(self.n_qubits))

    def count(self, kind: str) -> int:
        return sum(1 for g in self.gates if g.kind == kind)

    @cached_property
    def kinds(self) -> frozenset[str]:
        return frozenset(g.kind for g in self.gates)

    def with_gates(self, gates: Iterable[Gate]) -> Circuit:
        return Circuit(self.n_qubits, tuple(gates), self.measured, self.labels, self.loop_size)

    def with_measured(self, measured: Sequence[int]) -> Circuit:
        return Circuit(self.n_qubits, self.gates, tuple(measured), self.labels, self.loop_size)

    def __len__(self):
        return len(self.gates)


@dataclass(frozen=True)
class AnsatzParams:
    layers: int
    values: tuple[float, ...]
    symmetric: bool = False

    def __post_init__(self):
        if self.layers < 0:
            raise ParameterShapeError("layers must be non-negative")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    def expected_length(self, n: int) -> int:
        return 2 * (self.layers + 1) if self.symmetric else n * (self.layers + 1)

    def check(self, n: int) -> None:
        want = self.expected_length(n)
        if len(self.values) != want:
            mode = "symmetric" if self.symmetric else "full"
            raise ParameterShapeError(
                f"{mode} ansatz with n={n}, l={self.layers} needs {want} angles, got {len(self.values)}"
            )

    @classmethod
    def zeros(cls, n: int, layers: int, symmetric: bool = False) -> AnsatzParams:
        size = 2 * (layers + 1) if symmetric else n * (layers + 1)
        return cls(layers, (0.0,) * size, symmetric)


def cnot_pairs(n: int, layer: int) -> list[tuple[int, int]]:
    """Neighbor pairs coupled in ansatz layer ``layer`` (1-based).

    Odd layers couple (0,1),(2,3),...; even layers couple (1,2),...,(n-1,0).
    """
    start = 0 if layer % 2 == 1 else 1
    return [(i % n, (i + 1) % n) for i in range(start, start + n, 2)]


def expand_symmetric(params: AnsatzParams, n: int) -> AnsatzParams:
    if not params.symmetric:
        raise ParameterShapeError("parameters are already in full form")
    params.check(n)
    full = []
    for k in range(params.layers + 1):
        even, odd = params.values[2 * k], params.values[2 * k + 1]
        full.extend(even if q % 2 == 0 else odd for q in range(n))
    return AnsatzParams(params.layers, tuple(full), symmetric=False)


def build_alt_ansatz(n: int, params: AnsatzParams) -> Circuit:
    """Alternating layered ansatz on a loop of ``n`` qubits.

    An RY layer on every qubit, then ``params.layers`` repetitions of
    (brickwork CNOT layer, RY layer). Nothing is measured.
    """
    if n < 2 or n % 2:
        raise TopologyError(f"loop ansatz needs an even number of qubits >= 2, got {n}")
    params.check(n)
    full = expand_symmetric(params, n) if params.symmetric else params
    angles = full.values
    gates = [ry(q, angles[q]) for q in range(n)]
    for layer in range(1, params.layers + 1):
        pairs = cnot_pairs(n, layer) if n > 2 else [(0, 1)]
        gates.extend(cnot(c, t) for c, t in pairs)
        gates.extend(ry(q, angles[layer * n + q]) for q in range(n))
    return Circuit(n, tuple(gates))


def ansatz_layers(c: Circuit) -> int:
    """Number of CNOT layers of an unfiltered ansatz (brickwork depth)."""
    return _cnot_depth(c.gates, c.n_qubits)


def _cnot_depth(gates: Sequence[Gate], n: int) -> int:
    depth = [0] * n
    for g in gates:
        if g.kind == "CNOT":
            d = max(depth[q] for q in g.qubits) + 1
            for q in g.qubits:
                depth[q] = d
    return max(depth, default=0)


# ---------------------------------------------------------------------------
# Basis decomposition
# ---------------------------------------------------------------------------

def _ry_basis(q: int, theta: float) -> list[Gate]:
    # RY(t) = RZ(pi) SX RZ(pi + t) SX, rightmost first
    return [sx(q), rz(q, math.pi + theta), sx(q), rz(q, math.pi)]


def _h_ry_basis(q: int, theta: float) -> list[Gate]:
    # H RY(t) = RZ(pi) SX RZ(3pi/2 - t) SX RZ(-pi)
    return [rz(q, -math.pi), sx(q), rz(q, 1.5 * math.pi - theta), sx(q), rz(q, math.pi)]


def decompose_to_basis(c: Circuit) -> Circuit:
    """Rewrite RY and merged H-after-RY pairs into RZ/SX/CNOT.

    An H must directly follow an RY on the same qubit (no gate on that
    qubit in between); anything else raises :class:`DecompositionError`.
    """
    segments: list[list[Gate]] = []
    # qubit -> (segment index, angle) of an RY an H may still merge into
    open_ry: dict[int, tuple[int, float]] = {}
    for idx, g in enumerate(c.gates):
        if g.kind == "RY":
            q = g.qubits[0]
            open_ry[q] = (len(segments), g.angle)
            segments.append(_ry_basis(q, g.angle))
        elif g.kind == "H":
            q = g.qubits[0]
            if q not in open_ry:
                raise DecompositionError(f"gate {idx} (H on qubit {q}) does not follow an RY")
            pos, theta = open_ry.pop(q)
            segments[pos] = _h_ry_basis(q, theta)
        else:
            if g.kind not in BASIS_KINDS:
                raise DecompositionError(f"gate {idx} ({g.kind}) has no basis decomposition")
            for q in g.qubits:
                open_ry.pop(q, None)
            segments.append([g])
    return c.with_gates(g for seg in segments for g in seg)


def is_basis_circuit(c: Circuit) -> bool:
    return c.kinds <= BASIS_KINDS


# ---------------------------------------------------------------------------
# Light-cone filter
# ---------------------------------------------------------------------------

def light_cone_filter(c: Circuit, observable_qubits: Sequence[int]) -> Circuit:
    """Keep only gates in the backward light cone of ``observable_qubits``.

    The register is the geometric cone: the observable's arc widened by the
    CNOT depth of the cone on each side, i.e. ``min(m + 2l, n)`` qubits for
    an ``l``-layer ansatz. Qubits are relabeled in loop order; ``labels``
    keeps their original positions and the observable becomes the measured
    register.
    """
    obs = [int(q) for q in observable_qubits]
    n = c.n_qubits
    if not obs or len(set(obs)) != len(obs) or any(q < 0 or q >= n for q in obs):
        raise CircuitError(f"bad observable qubits {observable_qubits}")
    in_cone = set(obs)
    kept = []
    for g in reversed(c.gates):
        if any(q in in_cone for q in g.qubits):
            kept.append(g)
            in_cone.update(g.qubits)
    kept.reverse()
    depth = _cnot_depth(kept, n)
    register = _geometric_register(c, obs, depth) | in_cone
    order = _loop_order(c, register)
    relabel = {q: k for k, q in enumerate(order)}
    return Circuit(
        len(order),
        tuple(g.relabel(relabel) for g in kept),
        tuple(relabel[q] for q in obs),
        tuple(c.labels[q] for q in order),
        c.loop_size,
    )


def _geometric_register(c: Circuit, obs: list[int], depth: int) -> set[int]:
    n = c.n_qubits
    if c.is_full_loop:
        arc = _covering_arc(sorted(obs), n)
        if arc is None:
            return set(obs)
        start, length = arc
        if length + 2 * depth >= n:
            return set(range(n))
        return {(start - depth + k) % n for k in range(length + 2 * depth)}
    lo, hi = min(obs), max(obs)
    return set(range(max(0, lo - depth), min(n, hi + depth + 1)))


def _covering_arc(obs: list[int], n: int) -> tuple[int, int] | None:
    """Shortest contiguous loop arc covering ``obs``, or None if not adjacent."""
    best = None
    for start in obs:
        length = max((q - start) % n for q in obs) + 1
        if best is None or length < best[1]:
            best = (start, length)
    if best[1] != len(obs):
        return None
    return best


def _loop_order(c: Circuit, qubits: set[int]) -> list[int]:
    n = c.n_qubits
    if len(qubits) == n or not c.is_full_loop:
        return sorted(qubits)
    # start at a qubit whose loop predecessor is outside the set
    starts = [q for q in sorted(qubits) if (q - 1) % n not in qubits]
    if len(starts) != 1:
        return sorted(qubits)
    s = starts[0]
    return [(s + k) % n for k in range(len(qubits))]


# ---------------------------------------------------------------------------
# Noise amplification and randomized compiling
# ---------------------------------------------------------------------------

def fold_cnots(c: Circuit, scale: float, seed: int = 0) -> Circuit:
    """Replace CNOTs by odd numbers of copies so the CNOT count grows by ``scale``.

    Odd integer scales repeat every CNOT ``scale`` times. Otherwise each
    CNOT is repeated ``2k+1`` or ``2k+3`` times with ``k = floor((scale-1)/2)``,
    choosing the larger count with the probability that makes the expected
    total equal ``scale`` times the original.
    """
    if not scale >= 1:
        raise ValueError(f"fold scale must be >= 1, got {scale}")
    base = 2 * math.floor((scale - 1) / 2) + 1
    frac = (scale - base) / 2.0
    rng = np.random.default_rng(seed)
    out = []
    for g in c.gates:
        if g.kind != "CNOT":
            out.append(g)
            continue
        reps = base
        if frac > 0 and rng.random() < frac:
            reps += 2
        out.extend([g] * reps)
    return c.with_gates(out)


_PAULI_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_PAULI = {v: k for k, v in _PAULI_BITS.items()}


def conjugate_through_cnot(pc: str, pt: str) -> tuple[str, str]:
    """Pauli pair after pushing ``pc (x) pt`` through a CNOT (phase dropped)."""
    xc, zc = _PAULI_BITS[pc]
    xt, zt = _PAULI_BITS[pt]
    xt ^= xc
    zc ^= zt
    return _BITS_PAULI[(xc, zc)], _BITS_PAULI[(xt, zt)]


def dressed_cnot(c: int, t: int, pc: str, pt: str) -> list[Gate]:
    """CNOT wrapped in a Pauli frame that leaves its action unchanged."""
    after_c, after_t = conjugate_through_cnot(pc, pt)
    gates = [pauli(q, p) for q, p in ((c, pc), (t, pt)) if p != "I"]
    gates.append(cnot(c, t))
    gates.extend(pauli(q, p) for q, p in ((c, after_c), (t, after_t)) if p != "I")
    return gates


TWIRL_LABELS = "IXYZ"


def twirl_draws(c: Circuit, seed: int = 0) -> np.ndarray:
    """(n_cnot, 2) Pauli indices into ``TWIRL_LABELS`` for control and target."""
    return np.random.default_rng(seed).integers(0, 4, size=(c.count("CNOT"), 2))


def randomized_compile(c: Circuit, seed: int = 0) -> Circuit:
    """Dress every CNOT with one of the 16 Pauli-frame twirls."""
    draws = twirl_draws(c, seed)
    out = []
    j = 0
    for g in c.gates:
        if g.kind != "CNOT":
            out.append(g)
            continue
        a, b = draws[j]
        j += 1
        out.extend(dressed_cnot(*g.qubits, TWIRL_LABELS[a], TWIRL_LABELS[b]))
    return c.with_gates(out)


# ---------------------------------------------------------------------------
# Qubit assignments on the loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class QubitAssignment:
    """Adjacency-preserving map from logical to physical loop positions."""

    rotation: int
    reflected: bool
    n: int = field(compare=False)

    @property
    def mapping(self) -> tuple[int, ...]:
        s = -1 if self.reflected else 1
        return tuple((self.rotation + s * q) % self.n for q in range(self.n))

    def physical(self, logical: int) -> int:
        s = -1 if self.reflected else 1
        return (self.rotation + s * logical) % self.n


def enumerate_assignments(n: int) -> list[QubitAssignment]:
    """All ``2n`` loop symmetries: n rotations, each with and without reflection."""
    if n < 3:
        raise TopologyError("a loop needs at least 3 qubits")
    return [QubitAssignment(r, refl, n) for r in range(n) for refl in (False, True)]


def preserves_adjacency(mapping: Sequence[int]) -> bool:
    n = len(mapping)
    return all((mapping[(q + 1) % n] - mapping[q]) % n in (1, n - 1) for q in range(n))


# ---------------------------------------------------------------------------
# Text serialization
# ---------------------------------------------------------------------------

def dumps(c: Circuit) -> str:
    """Line-oriented text form: header then one gate per line."""
    lines = [f"qubits {c.n_qubits}; measured {','.join(map(str, c.measured))}"]
    for g in c.gates:
        if g.kind == "CNOT":
            lines.append(f"CNOT {g.qubits[0]} {g.qubits[1]}")
        elif g.kind in ("RY", "RZ"):
            lines.append(f"{g.kind} {g.qubits[0]} {g.angle!r}")
        else:
            lines.append(f"{g.kind} {g.qubits[0]}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> Circuit:
    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise CircuitError("empty circuit text")
    head = rows[0]
    try:
        qpart, mpart = (s.strip() for s in head.split(";"))
        if not qpart.startswith("qubits ") or not mpart.startswith("measured"):
            raise ValueError
        n = int(qpart.split()[1])
        mtext = mpart[len("measured"):].strip()
        measured = tuple(int(x) for x in mtext.split(",")) if mtext else ()
    except ValueError as exc:
        raise CircuitError(f"bad header line: {head!r}") from exc
    gates = []
    for ln in rows[1:]:
        tok = ln.split()
        kind = tok[0]
        try:
            if kind == "CNOT":
                gates.append(cnot(int(tok[1]), int(tok[2])))
            elif kind in ("RY", "RZ"):
                gates.append(Gate(kind, (int(tok[1]),), float(tok[2])))
            else:
                gates.append(Gate(kind, (int(tok[1]),)))
        except (IndexError, ValueError) as exc:
            raise CircuitError(f"bad gate line: {ln!r}") from exc
    return Circuit(n, tuple(gates), measured)
