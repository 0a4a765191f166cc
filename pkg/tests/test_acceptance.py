"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are
repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from kernelde import desolve, kernel
from kernelde.circuits import (
    CENTERS,
    build_logical_kernel,
    build_physical_kernel,
    kernel_closed_form,
    kernel_closed_form_dx,
    logical_p00,
    physical_p00,
)
from kernelde.code422 import prepare_logical_00
from kernelde.noise import PauliChannel, default_noise_model, pauli_twirl
from kernelde.qsim import rotation

from oracles import classify_prep, enumerate_single_faults

I2 = np.eye(2)


def test_criterion_01_closed_form_oracle(verdict):
    grid = np.linspace(0, 1, 21)
    start = time.perf_counter()
    worst = 0.0
    for x in grid:
        for a in grid:
            ref = float(kernel_closed_form(x, a))
            worst = max(
                worst,
                abs(physical_p00(build_physical_kernel(x, a), "density") - ref),
                abs(logical_p00(build_logical_kernel(x, a), "density") - ref),
            )
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 60
    assert verdict(1, ok, f"max |error| {worst:.2e} over 21x21 physical+logical, {elapsed:.1f} s")


def test_criterion_02_unit_peaks(verdict):
    worst = max(
        abs(f(build(a, a), "density") - 1.0)
        for a in CENTERS
        for f, build in ((physical_p00, build_physical_kernel), (logical_p00, build_logical_kernel))
    )
    assert verdict(2, worst < 1e-10, f"max |kappa(a,a) - 1| {worst:.2e}")


def test_criterion_03_single_fault_preparation(verdict):
    start = time.perf_counter()
    circ = prepare_logical_00()
    counts = {"flagged": 0, "detected": 0, "harmless": 0, "harmful": 0}
    for *_, state in enumerate_single_faults(circ, range(5)):
        counts[classify_prep(state)] += 1
    elapsed = time.perf_counter() - start
    ok = counts["harmful"] == 0 and elapsed < 300
    detail = ", ".join(f"{k} {v}" for k, v in counts.items())
    assert verdict(3, ok, f"{sum(counts.values())} single faults: {detail}; {elapsed:.1f} s")


def test_criterion_04_injected_discards(verdict):
    start = time.perf_counter()
    injection = kernel.Injection.rotation("-Y", 0.6283)
    grid = np.linspace(0, 1, 21)
    # about 1e5 records in total across the 63 sweep points
    curves = kernel.sweep_curves("logical", CENTERS, grid, shots=1100, injection=injection, backend="trajectory")
    stats = kernel.pooled_postselection(curves)
    elapsed = time.perf_counter() - start
    ok = (
        abs(stats.flag_reject_rate - 0.17) <= 0.02
        and abs(stats.parity_reject_rate - 0.17) <= 0.02
        and abs(stats.total_discard_rate - 0.32) <= 0.02
        and stats.total >= 100_000
        and elapsed < 600
    )
    detail = (
        f"flag {stats.flag_reject_rate:.4f}, parity {stats.parity_reject_rate:.4f}, "
        f"total {stats.total_discard_rate:.4f} over {stats.total} records; {elapsed:.1f} s"
    )
    assert verdict(4, ok, detail)


def test_criterion_05_distortion_ordering(verdict):
    noise = default_noise_model()
    shots = 100_000
    ratios, low = [], []
    for seed in range(5):
        phys = kernel.median_distortion(kernel.sweep_curves("physical", shots=shots, noise=noise, seed=seed))
        log = kernel.median_distortion(kernel.sweep_curves("logical", shots=shots, noise=noise, seed=seed))
        ratios.append((phys, log))
        small_p = kernel.median_distortion(kernel.sweep_curves("physical", noise=noise, seed=seed))
        small_l = kernel.median_distortion(kernel.sweep_curves("logical", noise=noise, seed=seed))
        low.append((small_p, small_l))
    ok = all(log < phys and (phys - log) / phys >= 0.15 for phys, log in ratios)
    pairs = "; ".join(f"{p:.4f}/{l:.4f}" for p, l in ratios)
    info = "; ".join(f"{p:.4f}/{l:.4f}" for p, l in low)
    print(f"  at 100 shots per point (physical/logical): {info}")
    assert verdict(5, ok, f"physical/logical median RMSE at {shots} shots per point: {pairs}")


def test_criterion_06_benchmark_ordering(verdict):
    start = time.perf_counter()
    noise = default_noise_model()
    problems = desolve.benchmark_problems(100, seed=0)
    bases = {
        mode: desolve.SplineBasis.from_curves(kernel.sweep_curves(mode, shots=100, noise=noise, seed=0))
        for mode in ("physical", "logical")
    }
    summary = desolve.summarize(desolve.run_benchmark(problems, bases))
    phys, log = summary["physical"]["mean"], summary["logical"]["mean"]
    elapsed = time.perf_counter() - start
    gain = (phys - log) / phys
    ok = gain >= 0.30 and elapsed < 1800
    detail = f"mean residual physical {phys:.4f}, logical {log:.4f}, reduction {100 * gain:.1f}% (need >= 30%); {elapsed:.1f} s"
    assert verdict(6, ok, detail)


def test_criterion_07_exact_recovery(verdict):
    seeds = np.random.default_rng(20240607).integers(0, 2**31 - 1, 50)
    basis = desolve.ClosedFormBasis()
    worst_param = worst_res = 0.0
    for s in seeds:
        prob = desolve.generate_benchmark_de(int(s))
        model, _ = desolve.solve_linear(prob, basis)
        worst_param = max(worst_param, float(np.max(np.abs(model.params - np.array(prob.generating_params)))))
        worst_res = max(worst_res, desolve.residual(model, prob.exact))
    ok = worst_param < 1e-6 and worst_res < 1e-6
    assert verdict(7, ok, f"50 seeds: max parameter error {worst_param:.2e}, max residual {worst_res:.2e}")


def test_criterion_08_affine_absorption(verdict):
    rng = np.random.default_rng(8)
    spline = desolve.SplineBasis.from_curves(kernel.exact_curves("physical", noise=default_noise_model()))
    bases = [desolve.ClosedFormBasis(), spline]
    pairs = [(0.3, -0.2), (0.3, 0.2), (1.0, -0.2), (1.0, 0.2)] + [tuple(v) for v in np.column_stack([rng.uniform(0.3, 1, 20), rng.uniform(-0.2, 0.2, 20)])]
    worst = 0.0
    for i in range(10):
        prob = desolve.generate_benchmark_de(i, 0)
        for basis in bases:
            base, _ = desolve.solve_linear(prob, basis)
            ref = desolve.residual(base, prob.exact)
            for s, t in pairs:
                model, _ = desolve.solve_linear(prob, desolve.AffineBasis(basis, s, t))
                worst = max(worst, abs(desolve.residual(model, prob.exact) - ref))
    assert verdict(8, worst < 1e-9, f"max residual change {worst:.2e} over {10 * len(bases) * len(pairs)} solves")


def test_criterion_09_spline_derivative(verdict):
    grid = np.linspace(0, 1, 41)
    t = np.linspace(0, 1, 1001)
    h = 1e-6
    worst = 0.0
    against_kernel = 0.0
    for a in CENTERS:
        sp = desolve.fit_spline(grid, kernel_closed_form(grid, a), lam=1e-3)
        fd = (sp(t + h) - sp(t - h)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(sp.derivative(t) - fd))))
        against_kernel = max(against_kernel, float(np.max(np.abs(sp.derivative(t) - kernel_closed_form_dx(t, a)))))
    print(f"  smoothed-spline slope vs exact kernel slope: max {against_kernel:.3f}")
    assert verdict(9, worst < 1e-2, f"analytic vs central-difference spline slope: max {worst:.2e}")


def test_criterion_10_twirl(verdict):
    mix = PauliChannel.from_errors({"X": 0.013, "Y": 0.004, "Z": 0.021}, 1)
    twirled = pauli_twirl(mix.to_kraus((0,)), I2)
    mix_err = max(abs(twirled.prob(p) - mix.prob(p)) for p in "IXYZ")
    rx_err = 0.0
    for eps in np.linspace(0.01, 1.0, 10):
        out = pauli_twirl([rotation("X", eps)], I2)
        rx_err = max(rx_err, abs(out.prob("X") - math.sin(eps / 2) ** 2))
    ok = mix_err < 1e-10 and rx_err < 1e-9
    assert verdict(10, ok, f"Pauli mixture error {mix_err:.2e}; RX(eps) p_X error {rx_err:.2e} over 10 angles")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
