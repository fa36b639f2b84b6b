from __future__ import annotations

import itertools
from functools import reduce

import numpy as np
import pytest

from mitiq_forge.circuit import (AnsatzParams, Circuit, Gate, build_alt_ansatz, cnot, decompose_to_basis,
                                 enumerate_assignments, randomized_compile, ry)
from mitiq_forge.device import gate_error_rates, uniform_device
from mitiq_forge.hamiltonian import PauliTerm
from mitiq_forge.simulator import (NoiseConfig, ShotTable, SimulationError, exact_expectation, exact_state,
                                   gate_matrix, make_job, merge_tables, parity_expectation, run_jobs,
                                   sample_noisy, zero_fraction)

I2 = np.eye(2)
PAULIS = [I2, np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]


def embed(n, ops):
    return reduce(np.kron, [ops.get(q, I2) for q in reversed(range(n))])


def cnot_matrix(n, c, t):
    M = np.zeros((2 ** n, 2 ** n))
    for i in range(2 ** n):
        M[i ^ (((i >> c) & 1) << t), i] = 1
    return M


def density_matrix_distribution(c: Circuit, rates, e0, e1):
    """Outcome distribution of ``c`` under depolarizing gates and readout flips."""
    n = c.n_qubits
    rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
    rho[0, 0] = 1
    for g, p in zip(c.gates, rates):
        U = cnot_matrix(n, *g.qubits) if g.kind == "CNOT" else embed(n, {g.qubits[0]: gate_matrix(g)})
        rho = U @ rho @ U.conj().T
        if p:
            strings = [s for s in itertools.product(range(4), repeat=len(g.qubits)) if any(s)]
            mixed = sum(embed(n, dict(zip(g.qubits, (PAULIS[k] for k in s)))) @ rho
                        @ embed(n, dict(zip(g.qubits, (PAULIS[k] for k in s)))).conj().T for s in strings)
            rho = (1 - p) * rho + p / len(strings) * mixed
    probs = np.real(np.diag(rho))
    m = len(c.measured)
    out = np.zeros(2 ** m)
    for i, pr in enumerate(probs):
        out[sum(((i >> q) & 1) << j for j, q in enumerate(c.measured))] += pr
    # independent readout flips per measured bit
    for j in range(m):
        flipped = np.zeros_like(out)
        for k, pr in enumerate(out):
            bit = (k >> j) & 1
            flip = e1[j] if bit else e0[j]
            flipped[k] += (1 - flip) * pr
            flipped[k ^ (1 << j)] += flip * pr
        out = flipped
    return out


def basis_circuit(n=4, layers=1, seed=0):
    rng = np.random.default_rng(seed)
    p = AnsatzParams(layers, tuple(rng.uniform(-3, 3, n * (layers + 1))))
    return decompose_to_basis(build_alt_ansatz(n, p)).with_measured(tuple(range(n)))


def bits_key(k, m):
    return "".join(str((k >> j) & 1) for j in range(m))


class TestExact:
    def test_zero_state(self):
        c = Circuit(3, ())
        np.testing.assert_allclose(exact_state(c), np.eye(8)[0])
        assert exact_expectation(c, PauliTerm(1.0, (0, 1), "ZZ")) == 1.0
        assert exact_expectation(c, PauliTerm(1.0, (2,), "X")) == 0.0

    def test_bell_pair(self):
        c = Circuit(2, (ry(0, np.pi / 2), cnot(0, 1)))
        psi = exact_state(c)
        np.testing.assert_allclose(np.abs(psi) ** 2, [0.5, 0, 0, 0.5], atol=1e-15)
        assert exact_expectation(c, PauliTerm(1.0, (0, 1), "ZZ"), psi) == pytest.approx(1)
        assert exact_expectation(c, PauliTerm(1.0, (0,), "Z"), psi) == pytest.approx(0, abs=1e-15)

    def test_x_expectation(self):
        c = Circuit(1, (ry(0, 0.7),))
        assert exact_expectation(c, PauliTerm(1.0, (0,), "X")) == pytest.approx(np.sin(0.7))

    def test_bad_support(self):
        with pytest.raises(SimulationError):
            exact_expectation(Circuit(2, ()), PauliTerm(1.0, (2,), "Z"))


class TestShotTable:
    def test_parity_examples(self):
        s = ShotTable({"00": 50, "01": 20, "11": 30}, 100, (0, 1))
        assert parity_expectation(s, (0, 1))[0] == pytest.approx(0.6)
        assert parity_expectation(s, (0,))[0] == pytest.approx(0.4)
        assert parity_expectation(s, (1,))[0] == pytest.approx(0.0)
        assert parity_expectation(s, (0,))[1] == pytest.approx(np.sqrt(0.84 / 100))

    def test_unmeasured_qubit(self):
        with pytest.raises(ValueError):
            parity_expectation(ShotTable({"0": 1}, 1, (3,)), (2,))

    def test_validation(self):
        with pytest.raises(ValueError):
            ShotTable({"0": 2}, 3, (0,))
        with pytest.raises(ValueError):
            ShotTable({"01": 2}, 2, (0,))

    def test_merge_and_json(self):
        a = ShotTable({"0": 3, "1": 1}, 4, (5,), {"parity": (2, 4.0, 4.0, 8.0), "zero": (2, 5.0, 6.0, 8.0)})
        b = ShotTable({"1": 2}, 2, (5,), {"parity": (1, 4.0, -4.0, 4.0), "zero": (1, 0.0, 0.0, 4.0)})
        m = merge_tables([a, b, ShotTable.empty((5,))])
        assert m.counts == {"0": 3, "1": 3} and m.shots == 6
        assert m.moments["parity"] == (3, 8.0, 0.0, 12.0)
        assert ShotTable.from_json(m.to_json()) == m
        with pytest.raises(ValueError):
            a.merge(ShotTable.empty((4,)))


class TestTrajectories:
    def test_readout_only(self):
        d = uniform_device(4, 0.0, e0=0.05, e1=0.05)
        c = basis_circuit().with_gates([]).with_measured((0, 1))
        s = sample_noisy(c, NoiseConfig(d, enumerate_assignments(4)[0], seed=1), 40_000)
        f, sigma = zero_fraction(s)
        assert abs(f - 0.9025) < 4 * sigma

    @pytest.mark.parametrize("readout", [False, True])
    def test_density_matrix_oracle(self, readout):
        c = basis_circuit(4, 1, seed=3)
        d = uniform_device(4, 0.08, sq_error=0.02, e0=0.03, e1=0.07)
        a = enumerate_assignments(4)[0]
        rates = gate_error_rates(d, c, a)
        e0 = np.full(4, 0.03 if readout else 0.0)
        e1 = np.full(4, 0.07 if readout else 0.0)
        want = density_matrix_distribution(c, rates, e0, e1)
        shots = 60_000
        s = run_jobs([make_job(c, d, a, shots, readout=readout)], seed=5, shots_per_trajectory=1,
                     readout=readout)[0]
        got = np.array([s.probability(bits_key(k, 4)) for k in range(16)])
        sigma = np.sqrt(np.maximum(want * (1 - want), 1e-12) / shots)
        assert np.all(np.abs(got - want) < 4.5 * sigma)

    def test_noiseless_matches_exact(self):
        c = basis_circuit(6, 2, seed=1).with_measured((2, 3))
        d = uniform_device(6)
        s = run_jobs([make_job(c, d, enumerate_assignments(6)[0], 20_000)], seed=0)[0]
        val, sigma = parity_expectation(s, (2, 3))
        assert abs(val - exact_expectation(c, PauliTerm(1.0, (2, 3), "ZZ"))) < 4 * sigma

    def test_deterministic(self):
        c = basis_circuit()
        d = uniform_device(4, 0.05, e0=0.02, e1=0.04)
        jobs = [make_job(c, d, enumerate_assignments(4)[0], 3000)]
        assert run_jobs(jobs, 11) == run_jobs(jobs, 11)
        assert run_jobs(jobs, 11) != run_jobs(jobs, 12)

    def test_twirl_frames_match_dressed_circuit(self):
        c = basis_circuit(4, 2, seed=2).with_measured((1, 2))
        d = uniform_device(4, 0.05)
        a = enumerate_assignments(4)[0]
        dressed = randomized_compile(c, 9)
        np.testing.assert_allclose(np.abs(exact_state(dressed)), np.abs(exact_state(c)), atol=1e-12)
        framed, explicit = run_jobs([make_job(c, d, a, 40_000, twirl_seed=9),
                                     make_job(dressed, d, a, 40_000)], seed=4)
        p1, s1 = parity_expectation(framed, (1, 2))
        p2, s2 = parity_expectation(explicit, (1, 2))
        assert abs(p1 - p2) < 4 * np.hypot(s1, s2)

    def test_noisy_pauli_gate_rejected(self):
        d = uniform_device(4, 0.05)
        job = make_job(Circuit(4, (Gate("X", (0,)),), (0,)), d, enumerate_assignments(4)[0], 10)
        job.error_rates = np.array([0.1])
        with pytest.raises(SimulationError):
            run_jobs([job], 0)

    def test_requires_basis_gates(self):
        with pytest.raises(SimulationError):
            make_job(Circuit(4, (ry(0, 0.1),), (0,)), uniform_device(4), enumerate_assignments(4)[0], 10)

    def test_cluster_sigma_calibrated(self):
        # shared trajectories correlate shots; the reported error must track the seed-to-seed spread
        c = basis_circuit(4, 2, seed=4).with_measured((0, 1))
        d = uniform_device(4, 0.15, sq_error=0.02)
        job = make_job(c, d, enumerate_assignments(4)[0], 2048)
        vals, sigmas = [], []
        for seed in range(60):
            v, s = parity_expectation(run_jobs([job], seed, shots_per_trajectory=64)[0], (0, 1))
            vals.append(v)
            sigmas.append(s)
        ratio = np.std(vals, ddof=1) / np.mean(sigmas)
        assert 0.7 < ratio < 1.3
