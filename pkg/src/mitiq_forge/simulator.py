"""Statevector simulation: exact expectations and trajectory-sampled noise.

Depolarizing noise is realized by stochastic Pauli insertion: after a gate
with error rate ``p``, with probability ``p`` a uniformly drawn non-identity
Pauli acts on the gate's qubits. Averaged over trajectories this is the
depolarizing channel. Readout noise flips measured bits independently.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from ._kernels import apply_1q, apply_cnot_dressed
from .circuit import Circuit, Gate, QubitAssignment, is_basis_circuit, twirl_draws
from .device import DeviceModel, gate_error_rates, readout_rates
from .hamiltonian import PauliTerm

MAX_EXACT_QUBITS = 26
# amplitudes per trajectory chunk (complex128: 16 bytes each)
CHUNK_AMPLITUDES = 1 << 21
# double precision: single-precision amplitudes underflow into slow denormals
TRAJ_DTYPE = np.complex128
# uniform draws per block of error-hit sampling
HIT_BLOCK = 1 << 22

_SQ2 = np.sqrt(0.5)
_PAULI = np.array([
    [[1, 0], [0, 1]],
    [[0, 1], [1, 0]],    # X
    [[1, 0], [0, -1]],   # Z
    [[0, -1], [1, 0]],   # X Z (Y up to phase)
], dtype=np.complex128)


def gate_matrix(g: Gate) -> np.ndarray:
    """2x2 unitary of a single-qubit gate."""
    k = g.kind
    if k == "RY":
        c, s = np.cos(g.angle / 2), np.sin(g.angle / 2)
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if k == "RZ":
        ph = np.exp(0.5j * g.angle)
        return np.array([[1 / ph, 0], [0, ph]], dtype=np.complex128)
    if k == "SX":
        return 0.5 * np.array([[1 + 1j, 1 - 1j], [1 - 1j, 1 + 1j]], dtype=np.complex128)
    if k == "H":
        return np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=np.complex128)
    if k == "X":
        return _PAULI[1].copy()
    if k == "Y":
        return np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
    if k == "Z":
        return _PAULI[2].copy()
    raise ValueError(f"{k} is not a single-qubit gate")


class SimulationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Exact simulation
# ---------------------------------------------------------------------------

def _apply_1q(state: np.ndarray, m: np.ndarray, q: int, n: int) -> np.ndarray:
    s = state.reshape(2 ** (n - q - 1), 2, 2 ** q)
    out = np.empty_like(s)
    a, b = s[:, 0, :], s[:, 1, :]
    out[:, 0, :] = m[0, 0] * a + m[0, 1] * b
    out[:, 1, :] = m[1, 0] * a + m[1, 1] * b
    return out.reshape(-1)


@lru_cache(maxsize=512)
def _cnot_perm(n: int, c: int, t: int) -> np.ndarray:
    idx = np.arange(2 ** n, dtype=np.int64)
    return idx ^ (((idx >> c) & 1) << t)


def exact_state(c: Circuit) -> np.ndarray:
    """Normalized amplitudes of ``c`` applied to |0...0>."""
    n = c.n_qubits
    if n > MAX_EXACT_QUBITS:
        raise SimulationError(f"exact simulation capped at {MAX_EXACT_QUBITS} qubits")
    state = np.zeros(2 ** n, dtype=np.complex128)
    state[0] = 1.0
    for g in c.gates:
        if g.kind == "CNOT":
            state = state[_cnot_perm(n, *g.qubits)]
        else:
            state = _apply_1q(state, gate_matrix(g), g.qubits[0], n)
    return state


def _check_support(c: Circuit, support: Sequence[int]):
    if not support or any(q < 0 or q >= c.n_qubits for q in support):
        raise SimulationError(f"support {tuple(support)} not on a {c.n_qubits}-qubit circuit")


def pauli_expectation(state: np.ndarray, n: int, support: Sequence[int], basis: str) -> float:
    """<psi| P |psi> for P = basis^{(x) support} with basis 'Z' or 'X'."""
    idx = np.arange(state.size, dtype=np.int64)
    if basis == "Z":
        mask = 0
        for q in support:
            mask |= 1 << q
        parity = np.bitwise_count(idx & mask) & 1 if hasattr(np, "bitwise_count") else \
            np.array([bin(i).count("1") & 1 for i in (idx & mask)])
        return float(np.sum(np.abs(state) ** 2 * (1 - 2 * parity.astype(np.int64))))
    if basis == "X":
        flip = 0
        for q in support:
            flip |= 1 << q
        return float(np.real(np.vdot(state, state[idx ^ flip])))
    raise ValueError(f"unsupported basis {basis!r}")


def exact_expectation(c: Circuit, t: PauliTerm, state: np.ndarray | None = None) -> float:
    """Exact <P> of a Pauli term (coefficient not applied)."""
    _check_support(c, t.support)
    psi = exact_state(c) if state is None else state
    return pauli_expectation(psi, c.n_qubits, t.support, t.basis)


def state_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """|<a|b>|^2, insensitive to global phase."""
    return float(abs(np.vdot(a, b)) ** 2)


# ---------------------------------------------------------------------------
# Shot tables
# ---------------------------------------------------------------------------

@dataclass
class ShotTable:
    """Bit-string counts. Character ``j`` of a key is the bit of ``measured[j]``.

    ``moments`` optionally holds per-trajectory sums for shots that share a
    noise trajectory: for the full-register parity and for the all-zero
    indicator, (clusters, sum S_k^2, sum S_k n_k, sum n_k^2) where S_k is
    the statistic summed over the n_k shots of trajectory k. They are
    additive, so merged tables keep a cluster-robust standard error.
    """

    counts: dict[str, int]
    shots: int
    measured: tuple[int, ...]
    moments: dict[str, tuple[int, float, float, float]] | None = None

    def __post_init__(self):
        self.measured = tuple(self.measured)
        if sum(self.counts.values()) != self.shots:
            raise ValueError("counts do not sum to shots")
        if any(len(k) != len(self.measured) for k in self.counts):
            raise ValueError("bit-string length differs from measured qubit count")
        if any(v < 0 for v in self.counts.values()):
            raise ValueError("negative count")
        if self.moments is not None:
            self.moments = {k: (int(v[0]), float(v[1]), float(v[2]), float(v[3]))
                            for k, v in sorted(self.moments.items())}

    @classmethod
    def empty(cls, measured: Sequence[int]) -> ShotTable:
        return cls({}, 0, tuple(measured))

    def merge(self, other: ShotTable) -> ShotTable:
        if self.measured != other.measured:
            raise ValueError("cannot merge tables over different qubits")
        counts = Counter(self.counts)
        counts.update(other.counts)
        moments = None
        if self.moments is not None and other.moments is not None:
            moments = {k: tuple(a + b for a, b in zip(self.moments[k], other.moments[k]))
                       for k in self.moments if k in other.moments}
        elif self.shots == 0:
            moments = other.moments
        elif other.shots == 0:
            moments = self.moments
        return ShotTable(dict(sorted(counts.items())), self.shots + other.shots, self.measured, moments)

    def probability(self, bits: str) -> float:
        return self.counts.get(bits, 0) / self.shots if self.shots else 0.0

    def cluster_sigma(self, statistic: str, mean: float) -> float | None:
        """Cluster-robust standard error of a per-shot mean, or None without moments."""
        if not self.moments or statistic not in self.moments:
            return None
        k, s2, sn, n2 = self.moments[statistic]
        if k < 2:
            return None
        var = (s2 - 2 * mean * sn + mean ** 2 * n2) * k / (k - 1) / self.shots ** 2
        return float(np.sqrt(max(var, 0.0)))

    def to_dict(self) -> dict:
        d = {"shots": self.shots, "measured": list(self.measured),
             "counts": dict(sorted(self.counts.items()))}
        if self.moments is not None:
            d["moments"] = {k: list(v) for k, v in self.moments.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> ShotTable:
        moments = d.get("moments")
        return cls({str(k): int(v) for k, v in d["counts"].items()}, int(d["shots"]), tuple(d["measured"]),
                   None if moments is None else {k: tuple(v) for k, v in moments.items()})

    @classmethod
    def from_json(cls, text: str) -> ShotTable:
        return cls.from_dict(json.loads(text))


def merge_tables(tables: Sequence[ShotTable]) -> ShotTable:
    out = tables[0]
    for t in tables[1:]:
        out = out.merge(t)
    return out


def parity_expectation(s: ShotTable, support: Sequence[int]) -> tuple[float, float]:
    """Mean of (-1)^parity over ``support`` and its standard error.

    The error is cluster-robust when the parity covers every measured qubit
    and the table carries trajectory moments; binomial otherwise.
    """
    if s.shots == 0:
        raise ValueError("empty shot table")
    pos = []
    for q in support:
        if q not in s.measured:
            raise ValueError(f"qubit {q} was not measured")
        pos.append(s.measured.index(q))
    total = 0
    for bits, k in s.counts.items():
        total += k if sum(bits[j] == "1" for j in pos) % 2 == 0 else -k
    value = total / s.shots
    binomial = float(np.sqrt(max(0.0, 1.0 - value ** 2) / s.shots))
    if sorted(pos) == list(range(len(s.measured))):
        robust = s.cluster_sigma("parity", value)
        if robust is not None:
            return value, robust
    return value, binomial


def zero_fraction(s: ShotTable) -> tuple[float, float]:
    """Fraction of all-zero outcomes with its (cluster-robust if possible) standard error."""
    if s.shots == 0:
        raise ValueError("empty shot table")
    f = s.probability("0" * len(s.measured))
    robust = s.cluster_sigma("zero", f)
    if robust is not None:
        return f, robust
    return f, float(np.sqrt(max(f * (1 - f), 0.0) / s.shots))


# ---------------------------------------------------------------------------
# Trajectory engine
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryJob:
    """One circuit instance to sample with explicit per-gate noise.

    ``error_rates`` has one depolarizing probability per gate; ``e0``/``e1``
    hold readout flip rates for each measured qubit. ``twirl`` optionally
    holds randomized-compiling draws (see ``twirl_draws``) applied as Pauli
    frames around each CNOT without materializing the dressed circuit.
    """

    circuit: Circuit
    error_rates: np.ndarray
    e0: np.ndarray
    e1: np.ndarray
    shots: int
    tag: object = None
    twirl: np.ndarray | None = None

    def skeleton(self) -> tuple:
        c = self.circuit
        return (c.n_qubits, c.measured, tuple(g for g in c.gates if g.kind not in ("X", "Y", "Z")))


_PAULI_BITS = {"X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
# TWIRL_LABELS index -> (x, z)
_TWIRL_X = np.array([0, 1, 1, 0], dtype=np.uint8)
_TWIRL_Z = np.array([0, 0, 1, 1], dtype=np.uint8)


def _compile_variant(job: TrajectoryJob):
    """Split a job into skeleton error rates and Pauli-frame insertions.

    Returns (rates per skeleton op, inserts of shape (ops + 1, n, 2) with
    the x and z bits applied just before each op, explicit-Pauli flag).
    """
    n = job.circuit.n_qubits
    gates = job.circuit.gates
    explicit = any(g.kind in _PAULI_BITS for g in gates)
    if explicit:
        rates = []
        ins = np.zeros((len(gates) + 1, n, 2), dtype=np.uint8)
        for g, p in zip(gates, job.error_rates):
            if g.kind in _PAULI_BITS:
                if p:
                    raise SimulationError("Pauli frame gates are noiseless; got a nonzero error rate")
                ins[len(rates), g.qubits[0]] ^= np.array(_PAULI_BITS[g.kind], dtype=np.uint8)
                continue
            rates.append(float(p))
        rates = np.array(rates)
        ins = ins[:len(rates) + 1]
    else:
        rates = np.asarray(job.error_rates, dtype=float)
        ins = np.zeros((len(gates) + 1, n, 2), dtype=np.uint8)
    if job.twirl is not None:
        skel = [g for g in gates if g.kind not in _PAULI_BITS]
        pos = np.array([k for k, g in enumerate(skel) if g.kind == "CNOT"], dtype=np.int64)
        if len(pos) != len(job.twirl):
            raise SimulationError("one twirl draw per CNOT required")
        ctl = np.array([skel[k].qubits[0] for k in pos], dtype=np.int64)
        tgt = np.array([skel[k].qubits[1] for k in pos], dtype=np.int64)
        a, b = np.asarray(job.twirl).T
        xc, zc, xt, zt = _TWIRL_X[a], _TWIRL_Z[a], _TWIRL_X[b], _TWIRL_Z[b]
        for qubits, x, z, at in ((ctl, xc, zc, pos), (tgt, xt, zt, pos),
                                 (ctl, xc, zc ^ zt, pos + 1), (tgt, xt ^ xc, zt, pos + 1)):
            np.bitwise_xor.at(ins, (at, qubits, 0), x)
            np.bitwise_xor.at(ins, (at, qubits, 1), z)
    return rates, ins, explicit


def _marginal(probs: np.ndarray, n: int, measured: Sequence[int]) -> np.ndarray:
    """(B, 2^n) -> (B, 2^m); outcome bit i is the bit of ``measured[i]``."""
    B = probs.shape[0]
    axis_of = {q: 1 + (n - 1 - q) for q in range(n)}
    arr = probs.reshape((B,) + (2,) * n)
    drop = tuple(axis_of[q] for q in range(n) if q not in measured)
    if drop:
        arr = arr.sum(axis=drop)
    # surviving axes are ordered by decreasing qubit index
    kept = sorted(measured, reverse=True)
    want = list(reversed(measured))
    arr = arr.transpose([0] + [1 + kept.index(q) for q in want])
    return arr.reshape(B, -1)


def _frame_cancels(skel_gates, n: int, measured, ins: np.ndarray) -> bool:
    """True when a variant's Pauli insertions compose to the identity.

    Checked by propagating the noiseless frame: it must be empty whenever a
    non-Pauli single-qubit gate acts and leave no X bit on a measured qubit.
    Randomized-compiling dressings always pass.
    """
    fx = np.zeros(n, dtype=bool)
    fz = np.zeros(n, dtype=bool)
    for k, g in enumerate(skel_gates):
        fx ^= ins[k, :, 0].astype(bool)
        fz ^= ins[k, :, 1].astype(bool)
        if g.kind == "CNOT":
            c, t = g.qubits
            fx[t] ^= fx[c]
            fz[c] ^= fz[t]
        elif fx[g.qubits[0]] or fz[g.qubits[0]]:
            return False
    fx ^= ins[len(skel_gates), :, 0].astype(bool)
    return not fx[list(measured)].any()


def _evolve(skel_gates, n, measured, inserts, variant, hits, rng):
    """Simulate ``B`` trajectories sharing one skeleton.

    The true state of trajectory b is F_b (x)_q M_q,b |phi_b>, with F a Pauli
    frame (bits) and M pending per-qubit matrices. Single-qubit gates and
    Pauli errors fold into M / F; M is applied to |phi> only before a CNOT
    touches the qubit, and F is conjugated through CNOTs.

    Returns the measured-qubit marginals (B, 2^m) and the frame X bits on the
    measured qubits (B, m), which flip the sampled outcomes.
    """
    B = len(variant)
    n_ops = len(skel_gates)
    ins_x, ins_z, active = inserts
    state = np.zeros((B, 2 ** n), dtype=TRAJ_DTYPE)
    state[:, 0] = 1.0
    M: list[np.ndarray | None] = [None] * n
    fx = np.zeros((B, n), dtype=bool)
    fz = np.zeros((B, n), dtype=bool)
    perm = None
    eye = np.broadcast_to(_PAULI[0], (B, 2, 2)).astype(TRAJ_DTYPE)

    def settle():
        nonlocal state, perm
        if perm is not None:
            state = np.ascontiguousarray(state[:, perm])
            perm = None

    for k, g in enumerate(skel_gates):
        if active[k]:
            fx ^= ins_x[variant, k]
            fz ^= ins_z[variant, k]
        hit = hits[k]
        if g.kind == "CNOT":
            c, t = g.qubits
            if M[c] is None and M[t] is None:
                p = _cnot_perm(n, c, t)
                perm = p if perm is None else perm[p]
            else:
                settle()
                apply_cnot_dressed(state, eye if M[c] is None else M[c],
                                   eye if M[t] is None else M[t], c, t)
                M[c] = M[t] = None
            fx[:, t] ^= fx[:, c]
            fz[:, c] ^= fz[:, t]
            nh = int(hit.sum())
            if nh:
                code = rng.integers(1, 16, size=nh)
                rows = np.flatnonzero(hit)
                fx[rows, c] ^= (code & 1).astype(bool)
                fz[rows, c] ^= ((code >> 1) & 1).astype(bool)
                fx[rows, t] ^= ((code >> 2) & 1).astype(bool)
                fz[rows, t] ^= ((code >> 3) & 1).astype(bool)
        else:
            q = g.qubits[0]
            frame = _PAULI[fx[:, q] * 1 + fz[:, q] * 2]
            mat = (gate_matrix(g) @ frame).astype(TRAJ_DTYPE)
            M[q] = mat if M[q] is None else mat @ M[q]
            fx[:, q] = False
            fz[:, q] = False
            nh = int(hit.sum())
            if nh:
                code = rng.integers(1, 4, size=nh)
                rows = np.flatnonzero(hit)
                fx[rows, q] = (code & 1).astype(bool)
                fz[rows, q] = ((code >> 1) & 1).astype(bool)
    if active[n_ops]:
        fx ^= ins_x[variant, n_ops]
    settle()
    for q in measured:
        if M[q] is not None:
            apply_1q(state, M[q], q)
    marg = _marginal((np.abs(state) ** 2).astype(np.float64), n, measured)
    marg /= marg.sum(axis=1, keepdims=True)
    return marg, fx[:, list(measured)]


def _noiseless_marginal(skel_gates, n, measured) -> np.ndarray:
    """Error-free output distribution of the skeleton, via the fused engine."""
    k = len(skel_gates)
    none = (np.zeros((1, k + 1, n), dtype=bool), np.zeros((1, k + 1, n), dtype=bool), np.zeros(k + 1, dtype=bool))
    marg, _ = _evolve(skel_gates, n, measured, none, np.zeros(1, dtype=np.int64),
                      np.zeros((k, 1), dtype=bool), None)
    return marg[0]


def _sample(marg, flips, e0, e1, shots_each, rng):
    """Draw ``shots_each`` outcomes per row of ``marg``; returns (B, shots, m) bits."""
    B, size = marg.shape
    m = size.bit_length() - 1
    cum = np.cumsum(marg, axis=1)
    cum[:, -1] = 1.0
    offsets = np.arange(B)[:, None]
    u = rng.random((B, shots_each))
    flat = (cum + offsets).reshape(-1)
    pick = np.searchsorted(flat, (u + offsets).reshape(-1), side="right").reshape(B, shots_each)
    pick = np.clip(pick - offsets * size, 0, size - 1)
    bits = ((pick[:, :, None] >> np.arange(m)) & 1).astype(bool)
    if flips is not None:
        bits ^= flips[:, None, :]
    if e0 is not None:
        r = rng.random(bits.shape)
        bits ^= np.where(bits, r < e1[:, None, :], r < e0[:, None, :])
    return bits


def run_jobs(jobs: Sequence[TrajectoryJob], seed: int, shots_per_trajectory: int = 32,
             readout: bool = True) -> list[ShotTable]:
    """Sample every job; jobs sharing a Pauli-free skeleton run as one batch.

    Trajectories in which no error fires and whose Pauli dressing cancels
    all produce the noiseless output distribution, so they share a single
    noiseless simulation. Deterministic in ``seed`` and the job order.
    """
    if shots_per_trajectory < 1:
        raise ValueError("shots_per_trajectory must be >= 1")
    groups: dict[tuple, list[int]] = {}
    keys: dict[int, list[int]] = {}
    for i, job in enumerate(jobs):
        if not is_basis_circuit(job.circuit):
            raise SimulationError("trajectory sampling needs a basis-gate circuit")
        if not job.circuit.measured:
            raise SimulationError("circuit measures no qubits")
        if len(job.error_rates) != len(job.circuit.gates):
            raise SimulationError("one error rate per gate required")
        if id(job.circuit) not in keys:
            keys[id(job.circuit)] = groups.setdefault(job.skeleton(), [])
        keys[id(job.circuit)].append(i)

    results: list[ShotTable | None] = [None] * len(jobs)
    for gi, (key, members) in enumerate(groups.items()):
        n, measured, skel = key
        m = len(measured)
        n_ops = len(skel)
        compiled = [_compile_variant(jobs[i]) for i in members]
        if any(len(c[0]) != n_ops for c in compiled):
            raise SimulationError("one error rate per gate required")
        rates = np.stack([c[0] for c in compiled], axis=1) if skel else np.zeros((0, len(members)))
        trivial = np.array([_frame_cancels(skel, n, measured, c[1]) if c[2] else True for c in compiled])
        ins = np.stack([c[1] for c in compiled])
        inserts = (ins[..., 0].astype(bool), ins[..., 1].astype(bool), ins.any(axis=(0, 2, 3)))
        e0 = np.stack([np.asarray(jobs[i].e0, float) for i in members])
        e1 = np.stack([np.asarray(jobs[i].e1, float) for i in members])

        # trajectory list: (variant index, shots in this trajectory)
        traj_variant, traj_shots = [], []
        for v, i in enumerate(members):
            full, rest = divmod(jobs[i].shots, shots_per_trajectory)
            traj_variant += [v] * (full + (rest > 0))
            traj_shots += [shots_per_trajectory] * full + ([rest] if rest else [])
        traj_variant = np.array(traj_variant, dtype=np.int64)
        traj_shots = np.array(traj_shots, dtype=np.int64)

        clean_marg = None
        sim_chunk = max(1, CHUNK_AMPLITUDES // 2 ** n)
        block = max(sim_chunk, HIT_BLOCK // max(n_ops, 1))
        weights = 1 << np.arange(m)
        codes = [[] for _ in members]
        moments = np.zeros((len(members), 2, 4))
        for bi, start in enumerate(range(0, len(traj_variant), block)):
            rng = np.random.default_rng([seed, gi, bi])
            var = traj_variant[start:start + block]
            hits = rng.random((n_ops, len(var))) < rates[:, var]
            clean = trivial[var] & ~hits.any(axis=0)
            for rows_sel, is_clean in ((np.flatnonzero(clean), True), (np.flatnonzero(~clean), False)):
                step = max(len(rows_sel), 1) if is_clean else sim_chunk
                for s in range(0, len(rows_sel), step):
                    rows = rows_sel[s:s + step]
                    v_rows = var[rows]
                    if is_clean:
                        if clean_marg is None:
                            clean_marg = _noiseless_marginal(skel, n, measured)
                        marg = np.broadcast_to(clean_marg, (len(rows), 2 ** m))
                        flips = None
                    else:
                        marg, flips = _evolve(skel, n, measured, inserts, v_rows, hits[:, rows], rng)
                    bits = _sample(marg, flips, e0[v_rows] if readout else None,
                                   e1[v_rows] if readout else None, shots_per_trajectory, rng)
                    keep = np.arange(shots_per_trajectory)[None, :] < traj_shots[start + rows, None]
                    outcome = (bits * weights).sum(axis=2)
                    par = np.where(bits.sum(axis=2) % 2 == 0, 1.0, -1.0) * keep
                    zero = (outcome == 0) * keep
                    nk = keep.sum(axis=1).astype(float)
                    for v in np.unique(v_rows):
                        sel = v_rows == v
                        codes[v].append(outcome[sel][keep[sel]])
                        for j, stat in enumerate((par[sel].sum(axis=1), zero[sel].sum(axis=1))):
                            moments[v, j] += (sel.sum(), stat @ stat, stat @ nk[sel], nk[sel] @ nk[sel])
        for v, i in enumerate(members):
            vals = np.concatenate(codes[v]) if codes[v] else np.zeros(0, np.int64)
            binc = np.bincount(vals, minlength=2 ** m)
            counts = {_bits(j, m): int(k) for j, k in enumerate(binc) if k}
            mom = {"parity": tuple(moments[v, 0]), "zero": tuple(moments[v, 1])}
            results[i] = ShotTable(counts, int(binc.sum()), measured, mom)
    return results


def _bits(j: int, m: int) -> str:
    return "".join("1" if (j >> i) & 1 else "0" for i in range(m))


@dataclass(frozen=True)
class NoiseConfig:
    device: DeviceModel
    assignment: QubitAssignment
    depolarizing_on: bool = True
    readout_on: bool = True
    shots_per_trajectory: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.shots_per_trajectory < 1:
            raise ValueError("shots_per_trajectory must be >= 1")


def make_job(c: Circuit, device: DeviceModel, assignment: QubitAssignment, shots: int,
             depolarizing: bool = True, readout: bool = True, tag=None, twirl_seed: int | None = None,
             rates: np.ndarray | None = None) -> TrajectoryJob:
    """Job for ``c`` placed by ``assignment``; ``twirl_seed`` adds randomized compiling.

    ``rates`` may pass precomputed gate error rates for this placement.
    """
    if not is_basis_circuit(c):
        raise SimulationError("trajectory sampling needs a basis-gate circuit")
    if not depolarizing:
        rates = np.zeros(len(c.gates))
    elif rates is None:
        rates = gate_error_rates(device, c, assignment)
    if readout:
        e0, e1 = readout_rates(device, c, assignment)
    else:
        e0 = e1 = np.zeros(len(c.measured))
    twirl = None if twirl_seed is None else twirl_draws(c, twirl_seed)
    return TrajectoryJob(c, rates, e0, e1, shots, tag, twirl)


def sample_noisy(c: Circuit, nc: NoiseConfig, shots: int) -> ShotTable:
    """Trajectory-sample ``shots`` outcomes of ``c`` under the configured noise."""
    job = make_job(c, nc.device, nc.assignment, shots, nc.depolarizing_on, nc.readout_on)
    return run_jobs([job], nc.seed, nc.shots_per_trajectory, readout=nc.readout_on)[0]
