from __future__ import annotations

import numpy as np
import pytest

from mitiq_forge.device import uniform_device
from mitiq_forge.estimator import EstimatorConfig
from mitiq_forge.hamiltonian import IsingParams, exact_spectrum
from mitiq_forge.mitigation import circuit_energy
from mitiq_forge.vqe import (AnsatzEvaluator, ExactObjective, NoisyObjective, OptimizationError, SpsaConfig,
                             classical_optimize, coordinate_descent, optimize_depths, pad_layers, spsa_gradient,
                             spsa_optimize, warm_source)


def bowl(theta):
    return float(np.sum((theta - 1.0) ** 2)), 0.0


class TestSpsa:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            SpsaConfig(c=0)
        with pytest.raises(ValueError):
            SpsaConfig(calib_evals=3)

    def test_quadratic_bowl(self):
        theta, trace = spsa_optimize(bowl, 4, SpsaConfig(max_iter=400), seed=1, theta0=np.zeros(4))
        assert bowl(theta)[0] < 0.01
        assert len(trace) == 400 and len(trace.calibration) == 25

    def test_best_so_far_non_increasing(self):
        rng = np.random.default_rng(0)

        def noisy(theta):
            return bowl(theta)[0] + 0.05 * rng.standard_normal(), 0.05

        _, trace = spsa_optimize(noisy, 3, SpsaConfig(max_iter=100), seed=2)
        assert np.all(np.diff(trace.best_so_far) <= 0)

    def test_gradient_unbiased(self):
        # for a quadratic the two-point difference is exact along delta; the cross terms average out
        A = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.0, 0.3, 3.0]])
        b = np.array([1.0, -2.0, 0.5])
        theta = np.array([0.3, -0.1, 0.7])
        rng = np.random.default_rng(0)
        draws = np.array([spsa_gradient(lambda t: 0.5 * t @ A @ t + b @ t, theta, 0.1, rng) for _ in range(20000)])
        np.testing.assert_allclose(draws.mean(axis=0), A @ theta + b, atol=4 * draws.std(axis=0).max() / 141)

    def test_fixed_gain(self):
        _, trace = spsa_optimize(bowl, 2, SpsaConfig(a=0.2, max_iter=5), seed=0)
        assert trace.a == 0.2 and trace.calibration == []

    def test_trace_csv(self):
        _, trace = spsa_optimize(bowl, 2, SpsaConfig(max_iter=3, calib_evals=2), seed=0,
                                 reference=lambda t: -1.0)
        lines = trace.to_csv().splitlines()
        assert lines[0] == "iteration,e_plus,e_minus,sigma,best_so_far,observed_damping"
        assert len(lines) == 4
        assert trace.records[0].damping == pytest.approx(-0.5 * (trace.records[0].e_plus + trace.records[0].e_minus))

    def test_objective_failure(self):
        calls = []

        def flaky(theta):
            calls.append(1)
            if len(calls) > 5:
                raise RuntimeError("device offline")
            return bowl(theta)

        with pytest.raises(OptimizationError) as info:
            spsa_optimize(flaky, 2, SpsaConfig(a=0.1, max_iter=10), seed=0)
        assert len(info.value.trace) == 2

    def test_deterministic(self):
        a = spsa_optimize(bowl, 3, SpsaConfig(max_iter=20), seed=5)[0]
        b = spsa_optimize(bowl, 3, SpsaConfig(max_iter=20), seed=5)[0]
        np.testing.assert_array_equal(a, b)


class TestEvaluator:
    @pytest.mark.parametrize("symmetric", [True, False])
    def test_matches_circuit_simulation(self, symmetric):
        h = IsingParams(6, h_x=0.8, h_z=0.2)
        ev = AnsatzEvaluator(h, 3, symmetric)
        rng = np.random.default_rng(1)
        params = rng.uniform(-np.pi, np.pi, (4, ev.n_params))
        want = [circuit_energy(ev.circuit(p), h) for p in params]
        np.testing.assert_allclose(ev.energies(params), want, atol=1e-12)

    def test_parameter_count(self):
        with pytest.raises(ValueError):
            AnsatzEvaluator(IsingParams(6), 2).energy(np.zeros(5))

    def test_coordinate_descent_monotone(self):
        ev = AnsatzEvaluator(IsingParams(6), 2)
        theta, e, hist = coordinate_descent(ev, np.random.default_rng(0).uniform(-3, 3, ev.n_params), 20)
        assert np.all(np.diff(hist) <= 1e-12)
        assert e == pytest.approx(ev.energy(theta))


class TestClassical:
    def test_below_first_excited(self):
        h = IsingParams(8)
        r = classical_optimize(h, (8, 3))
        assert r.energy < exact_spectrum(h).first_excited_energy

    def test_deep_ansatz_near_ground(self):
        r = classical_optimize(IsingParams(8), (8, 4))
        assert r.relative_error < 0.01

    def test_pad_layers_keeps_energy(self):
        h = IsingParams(6)
        theta = np.random.default_rng(3).uniform(-3, 3, 6)
        padded = pad_layers(theta, 6, True, 2)
        assert AnsatzEvaluator(h, 4).energy(padded) == pytest.approx(AnsatzEvaluator(h, 2).energy(theta))
        with pytest.raises(ValueError):
            pad_layers(theta, 6, True, 1)

    @pytest.mark.parametrize("l,src", [(1, None), (2, None), (3, 1), (16, 14), (17, 15), (50, 16), (49, 15)])
    def test_warm_source(self, l, src):
        assert warm_source(l) == src

    def test_optimize_depths(self):
        h = IsingParams(6)
        kw = dict(restarts=1, first_sweeps=50, reference_ground=False)
        ladder = optimize_depths(h, [1, 2, 3, 4, 6], **kw)
        assert all(ladder[l].energy <= ladder[l - 2].energy + 1e-12 for l in (3, 4, 6))
        alone = optimize_depths(h, [6], **kw)
        np.testing.assert_array_equal(alone[6].params, ladder[6].params)
        warm = optimize_depths(h, [6], warm={4: ladder[4].params}, **kw)
        np.testing.assert_array_equal(warm[6].params, ladder[6].params)
        assert set(optimize_depths(h, [6], keep_all=True, **kw)) == {2, 4, 6}


class TestObjectives:
    def test_exact(self):
        obj = ExactObjective(IsingParams(6), 1)
        assert obj(np.zeros(4)) == (pytest.approx(-6.6), 0.0)

    def test_noisy_seeded(self):
        h = IsingParams(6)
        d = uniform_device(6, 0.01)
        cfg = EstimatorConfig(shots_per_term=256)
        theta = np.full(4, 0.3)
        a, b = NoisyObjective(h, 1, d, cfg, seed=4), NoisyObjective(h, 1, d, cfg, seed=4)
        first = a(theta)
        assert first == b(theta)
        assert a(theta) != first
        assert a.calls == 2
