"""Acceptance criteria, one test and one printed PASS/FAIL line each.

Long-running: the full module takes tens of minutes on one core. Set
``MITIQ_FORGE_CACHE`` to a directory to keep optimized circuits and
measurements between runs.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np
import pytest

from mitiq_forge.circuit import AnsatzParams, build_alt_ansatz, light_cone_filter
from mitiq_forge.cli import main
from mitiq_forge.device import bundled_device, uniform_device
from mitiq_forge.estimator import EstimatorConfig, measure_raw, assemble_energy
from mitiq_forge.hamiltonian import IsingParams, PauliTerm, exact_spectrum, expand_terms, perturbative_energy_small_hx
from mitiq_forge.mitigation import (BenchmarkSpec, MeasurementCache, OptimizerSettings, circuit_energy, derive_seed,
                                    fit_exponential, optimized_circuits, run_benchmark)
from mitiq_forge.readout import (ReadoutRates, biased_parity_exact, confusion_propagate, parity_signs,
                                 random_distributions, residual_table)
from mitiq_forge.simulator import exact_expectation, exact_state
from mitiq_forge.vqe import ExactObjective, NoisyObjective, SpsaConfig, spsa_optimize

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    path = os.environ.get("MITIQ_FORGE_CACHE") or tmp_path_factory.mktemp("acceptance_cache")
    return MeasurementCache(path)


@pytest.fixture
def verdict(capsys):
    def emit(k: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} | {detail}", flush=True)
        assert ok, detail
    return emit


def test_criterion_1_exact_spectrum(verdict):
    t = time.perf_counter()
    r = exact_spectrum(IsingParams(20, J=1.0, h_x=1.5, h_z=0.1))
    elapsed = time.perf_counter() - t
    ok = abs(r.ground_energy + 33.90) <= 0.01 and abs(r.first_excited_energy + 32.60) <= 0.01 and elapsed < 60
    verdict(1, ok, f"ground {r.ground_energy:.5f}, first excited {r.first_excited_energy:.5f}, {elapsed:.1f} s")


def test_criterion_2_small_field_expansion(verdict):
    def rel(hx):
        p = IsingParams(12, h_x=hx)
        exact = exact_spectrum(p).ground_energy
        return abs(perturbative_energy_small_hx(p) - exact) / abs(exact)

    small = {hx: rel(hx) for hx in (0.1, 0.2, 0.3, 0.4, 0.5)}
    large = rel(1.5)
    ratio = small[0.2] / small[0.1]
    regime = max(small.values()) < 0.005 and large > 0.02
    scaling = 6 <= ratio <= 10
    verdict(2, regime and scaling,
            f"max rel error h_x<=0.5 {max(small.values()):.2e} (<5e-3: {regime}), at 1.5 {large:.3f}; "
            f"error ratio 0.2/0.1 = {ratio:.2f} (want [6, 10])")


def test_criterion_3_readout_algebra(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for N in (1, 2, 3, 4):
        signs = parity_signs(N)
        for f in random_distributions(N, 1000, rng):
            r = ReadoutRates(tuple(rng.uniform(0, 0.3, N)), tuple(rng.uniform(0, 0.3, N)))
            worst = max(worst, abs(biased_parity_exact(f, r) - signs @ confusion_propagate(f, r)))
    two = residual_table(2, 10_000, 0.05, 0.1, seed=1)
    violations = int(np.sum((two["exact"] < two["lo"]) | (two["exact"] > two["hi"])))
    rms3 = residual_table(3, 1000, 0.05, 0.1, seed=3)["rms"]
    rms10 = residual_table(10, 1000, 0.05, 0.1, seed=10)["rms"]
    elapsed = time.perf_counter() - t
    ok = worst <= 1e-12 and violations == 0 and rms10 < 0.2 * rms3 and elapsed < 10
    verdict(3, ok, f"max deviation {worst:.1e}, N=2 bound violations {violations}, "
                   f"RMS N=10/N=3 = {rms10 / rms3:.3f}, {elapsed:.1f} s")


def test_criterion_4_readout_offset(verdict, cache):
    # the symmetric ansatz is translation invariant, so angles optimized on 12 spins are optimal on 20
    # whenever the light cone (2 + 2l qubits) fits inside both rings
    layers = 3
    params = optimized_circuits(IsingParams(12), [layers], OptimizerSettings(), cache)[layers]
    angles = tuple(g.angle for g in params.gates if g.kind == "RY")
    theta = AnsatzParams(layers, tuple(np.array(angles).reshape(layers + 1, 12)[:, :2].ravel()), True)
    h = IsingParams(20)
    c = build_alt_ansatz(20, theta)
    e0, e1 = 0.05, 0.1
    d = uniform_device(20, 0.0, e0=e0, e1=e1)
    cfg = EstimatorConfig(shots_per_term=100_000, depolarizing=False)
    terms = expand_terms(h)
    psi = exact_state(c)
    expect = {t.label(): exact_expectation(c, t, psi) for t in terms}
    exact = sum(t.coefficient * expect[t.label()] for t in terms)
    raws = measure_raw(c, terms, d, cfg, seed=4)
    raw = assemble_energy(raws, mitigate=False)
    mit = assemble_energy(raws, mitigate=True)
    damped = sum(t.coefficient * (1 - e0 - e1) ** len(t.support) * expect[t.label()] for t in terms)
    offset = raw.value - damped
    want = -h.n * (h.h_x + h.h_z) * (e1 - e0)
    shift_ok = abs(offset - want) <= 4 * raw.sigma
    recover_ok = abs(mit.value - exact) <= 4 * mit.sigma
    mean_z = np.mean([v for k, v in expect.items() if k.startswith("Z") and not k.startswith("ZZ")])
    verdict(4, shift_ok and recover_ok,
            f"exact {exact:.4f}, raw {raw.value:.4f} +- {raw.sigma:.4f}, offset {offset:.4f} vs {want:.2f} "
            f"(shift {'ok' if shift_ok else 'off'}, mean <Z> {mean_z:.3f}); mitigated {mit.value:.4f} +- "
            f"{mit.sigma:.4f} (recovery {'ok' if recover_ok else 'off'})")


def test_criterion_5_light_cone(verdict):
    rng = np.random.default_rng(5)
    worst, sizes_ok = 0.0, True
    for _ in range(50):
        n = int(rng.choice([2, 4, 6, 8, 10]))
        layers = int(rng.integers(0, 4))
        c = build_alt_ansatz(n, AnsatzParams(layers, tuple(rng.uniform(-np.pi, np.pi, n * (layers + 1)))))
        psi = exact_state(c)
        for t in expand_terms(IsingParams(n, h_x=rng.uniform(0, 2), h_z=rng.uniform(0, 1))):
            f = light_cone_filter(c, t.support)
            sizes_ok &= f.n_qubits == min(len(t.support) + 2 * layers, n)
            local = exact_expectation(f, PauliTerm(1.0, f.measured, t.kind))
            worst = max(worst, abs(local - exact_expectation(c, t, psi)))
    verdict(5, worst <= 1e-12 and sizes_ok, f"max deviation {worst:.1e}, register sizes match: {sizes_ok}")


def test_criterion_6_damping_identity(verdict, cache):
    h = IsingParams(12)
    terms = expand_terms(h)
    depths = list(range(1, 16))
    circuits = optimized_circuits(h, depths, OptimizerSettings(), cache)
    d = uniform_device(12, 0.01)
    cfg = EstimatorConfig(shots_per_term=4096, readout=False)
    points, pulls = [], {}
    for l in depths:
        exact = circuit_energy(circuits[l], h)
        # the damping factor comes from a run independent of the energy it corrects
        calib = cache.energy(circuits[l], terms, d, cfg, derive_seed(6, "calibration", l))
        c, sc = calib.value / exact, calib.sigma / abs(exact)
        points.append((l, c, sc))
        if l in (3, 6, 10):
            e = cache.energy(circuits[l], terms, d, cfg, derive_seed(6, "energy", l))
            rec = e.value / c
            sigma = abs(rec) * np.hypot(e.sigma / e.value, sc / c)
            pulls[l] = (rec - exact) / sigma
    fit = fit_exponential([(l, c, 0.0) for l, c, _ in points])
    dev = max(abs(c / fit.predict(l)[0] - 1) for l, c, _ in points)
    ok = all(abs(p) <= 4 for p in pulls.values()) and dev < 0.10
    verdict(6, ok, "recovery pulls " + ", ".join(f"l={l}: {p:+.2f} sigma" for l, p in pulls.items())
            + f"; C(1..15) max deviation from exponential {dev:.3f}")


def test_criterion_7_method_benchmark(verdict, cache):
    spec = BenchmarkSpec()
    device = bundled_device(12)
    seeds = [0, 1, 2, 3, 4]
    report = run_benchmark(spec, device, seeds, cache)
    best = report.max_layers(2)
    lines, wins = [], {}
    for v in spec.variants:
        wins[v] = 0
        for s in seeds:
            z, df, fp = (best[(s, v, m)] for m in ("zne", "depth_fit", "from_pert"))
            wins[v] += df >= z and fp >= z
            lines.append(f"{v}/seed{s}: zne {z} depth_fit {df} from_pert {fp}")
    ordering = all(w >= 4 for w in wins.values())

    # the tail of the decay (light cone spanning the ring, l >= 6) extrapolated to 50 layers
    tail = []
    for r in report.rows:
        if r.seed == 0 and r.variant == "none" and r.method == "zne" and r.layers >= 6:
            tail.append((r.layers, r.c_observed, r.c_observed_sigma))
    c50, c50_sigma = fit_exponential(tail).predict(50)
    deep = run_benchmark(BenchmarkSpec(layers=(50,), fit_layers=spec.layers), device, [0], cache)
    deep_classes = {(r.variant, r.method): r.effectiveness for r in deep.rows}
    failing = all(c <= 1 for c in deep_classes.values()) and c50 + 2 * c50_sigma < 0.02
    verdict(7, ordering and failing,
            f"ordering holds in {wins} of 5 seeds [{'; '.join(lines)}]; extrapolated C(50) {c50:.4f} +- "
            f"{c50_sigma:.4f}, observed C(50) {deep.rows[0].c_observed:.3f} +- {deep.rows[0].c_observed_sigma:.3f}, "
            f"max class at l=50 {max(deep_classes.values())}")


def test_criterion_8_noisy_vqe(verdict):
    h = IsingParams(8)
    spectrum = exact_spectrum(h)
    device = uniform_device(8, 0.01)
    cfg = EstimatorConfig(shots_per_term=1024, readout=False)
    exact = ExactObjective(h, 3)
    found = []
    for seed in range(5):
        objective = NoisyObjective(h, 3, device, cfg, seed=seed)
        theta, trace = spsa_optimize(objective, exact.evaluator.n_params, SpsaConfig(max_iter=300), seed=seed)
        assert len(trace) == 300
        found.append(exact.energy(theta))
    below = sum(e < spectrum.first_excited_energy for e in found)
    verdict(8, below >= 4, f"{below}/5 below first excited {spectrum.first_excited_energy:.4f}: "
                           + ", ".join(f"{e:.4f}" for e in found))


CLI_CONFIGS = {
    "ground-state": {"hamiltonian": {"n": 8}, "h_x_sweep": [0.0, 0.3, 1.5, 4.0]},
    "optimize": {"hamiltonian": {"n": 6}, "layers": 2, "spsa": {"max_iter": 10},
                 "estimator": {"shots_per_term": 256, "readout": True}},
    "benchmark": {"benchmark": {"hamiltonian": {"n": 6}, "layers": [1, 3], "pert_h_x": [0.1, 0.3],
                                "estimator": {"shots_per_term": 512},
                                "optimizer": {"restarts": 1, "first_sweeps": 50}},
                  "device": {"kind": "synthetic", "seed": 3, "cnot_mean": 0.03}, "seeds": [0, 1]},
    "readout-study": {},
}


def test_criterion_9_cli_determinism(verdict, tmp_path):
    outcomes = {}
    for command, config in CLI_CONFIGS.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(config))
        runs = []
        for k in range(2):
            out = tmp_path / f"{command}-{k}"
            code = main([command, "--config", str(path), "--out", str(out), "--seed", "7", "--quiet"])
            runs.append((code, {p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.is_file()}))
        outcomes[command] = runs[0][0] == runs[1][0] == 0 and runs[0][1] == runs[1][1] and bool(runs[0][1])
    verdict(9, all(outcomes.values()), ", ".join(f"{c}: {'identical' if ok else 'DIFFERS'}"
                                                 for c, ok in outcomes.items()))
