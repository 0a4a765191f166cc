import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernelde.circuits import (
    CENTERS,
    KernelParams,
    build_logical_kernel,
    build_logical_reference,
    build_physical_kernel,
    build_reference_kernel,
    build_u,
    check_native,
    kernel_closed_form,
    kernel_closed_form_dx,
    logical_p00,
    noiseless_distribution,
    physical_p00,
    verify_compilation,
)
from kernelde.code422 import decoded_distribution
from kernelde.ir import Circuit, CircuitBuilder, CircuitError, Measure, Move
from kernelde.qsim import Gate, run_pure

GOLDEN = Path(__file__).parent / "golden"
GRID21 = np.linspace(0, 1, 21)


def rx(t):
    return np.array([[math.cos(t / 2), -1j * math.sin(t / 2)], [-1j * math.sin(t / 2), math.cos(t / 2)]])


Z = np.diag([1.0, -1.0])
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])


def feature_state(x):
    """|psi(x)> by direct 4x4 matrix products."""
    u = np.kron(rx(2 * math.pi * x), np.eye(2)) @ CNOT @ np.kron(rx(2 * math.pi * x**2), np.eye(2))
    return u @ np.array([1, 0, 0, 0], dtype=complex)


def qubit_amplitudes(state):
    return state.data[[0, 1, 3, 4]]


# ---------------------------------------------------------------- params


def test_kernel_params_angles():
    p = KernelParams(0.3, 0.5)
    assert p.angles == pytest.approx((2 * math.pi * 0.09, 2 * math.pi * -0.2, -2 * math.pi * 0.25))


def test_closed_form_derivative_matches_finite_differences():
    x = np.linspace(0.01, 0.99, 99)
    h = 1e-6
    for a in CENTERS:
        fd = (kernel_closed_form(x + h, a) - kernel_closed_form(x - h, a)) / (2 * h)
        assert np.max(np.abs(kernel_closed_form_dx(x, a) - fd)) < 1e-6


# --------------------------------------------------------------- build_u


def test_u_at_zero():
    c = build_u(0.0)
    assert all(ins.angle == 0 for ins in c.instructions if ins.kind == "RX")
    np.testing.assert_allclose(qubit_amplitudes(run_pure(c)), [1, 0, 0, 0], atol=1e-15)


def test_u_at_half():
    amps = qubit_amplitudes(run_pure(build_u(0.5)))
    np.testing.assert_allclose(amps, feature_state(0.5), atol=1e-12)
    np.testing.assert_allclose(amps, [0, -1 / math.sqrt(2), -1j / math.sqrt(2), 0], atol=1e-12)


def test_u_normalised():
    for x in np.random.default_rng(3).uniform(-2, 2, 100):
        psi = run_pure(build_u(x)).data
        assert abs(np.vdot(psi, psi) - 1) < 1e-12


def test_cnot_decomposition_matches():
    for x in (0.1, 0.45, 0.8):
        np.testing.assert_allclose(run_pure(build_u(x, True)).data, run_pure(build_u(x)).data, atol=1e-12)


# ------------------------------------------------------ physical kernel


def test_physical_kernel_at_center():
    assert physical_p00(build_physical_kernel(0.25, 0.25)) == pytest.approx(1.0, abs=1e-12)


def test_physical_kernel_values():
    assert physical_p00(build_physical_kernel(0.0, 0.25)) == pytest.approx(0.48097, abs=5e-6)
    assert physical_p00(build_physical_kernel(0.0, 0.5)) == pytest.approx(0.0, abs=1e-12)


def test_physical_matches_overlap_oracle():
    for x in GRID21[::4]:
        for a in GRID21[::5]:
            overlap = abs(np.vdot(feature_state(a), feature_state(x))) ** 2
            assert physical_p00(build_physical_kernel(x, a)) == pytest.approx(overlap, abs=1e-9)
            assert kernel_closed_form(x, a) == pytest.approx(overlap, abs=1e-12)


def test_physical_native_sequence():
    c = build_physical_kernel(0.3, 0.5)
    alpha, beta, gamma = KernelParams(0.3, 0.5).angles
    expected = [
        Gate("GlobalRX", (0,), alpha),
        Gate("Z", (0,)),
        Gate("GlobalH", (0,)),
        Move(1, True),
        Gate("GlobalH", (0, 1)),
        Gate("GlobalZ", (0, 1)),
        Gate("CZ", (0, 1)),
        Gate("GlobalRX", (0, 1), beta / 2),
        Gate("Z", (1,)),
        Gate("GlobalRX", (0, 1), beta / 2),
        Gate("CZ", (0, 1)),
        Gate("GlobalH", (0, 1)),
        Move(1, False),
        Gate("GlobalH", (0,)),
        Gate("GlobalRX", (0,), gamma),
        Measure((0, 1)),
    ]
    assert list(c.instructions) == expected


def test_physical_dump_golden():
    assert build_physical_kernel(0.3, 0.5).dump() == (GOLDEN / "physical_kernel_x0.3_a0.5.txt").read_text()


def test_logical_dump_golden():
    assert build_logical_kernel(0.3, 0.5).dump() == (GOLDEN / "logical_kernel_x0.3_a0.5.txt").read_text()


def test_middle_block_identities():
    for beta in np.linspace(-2 * math.pi, 2 * math.pi, 13):
        np.testing.assert_allclose(rx(beta / 2) @ Z @ rx(beta / 2), Z, atol=1e-12)
        np.testing.assert_allclose(rx(beta / 2) @ rx(beta / 2), rx(beta), atol=1e-12)


def test_symmetry_and_range():
    vals = np.array([[physical_p00(build_physical_kernel(x, a), "pure") for a in GRID21] for x in GRID21])
    assert np.max(np.abs(vals - vals.T)) < 1e-9
    assert vals.min() >= -1e-12 and vals.max() <= 1 + 1e-12


def test_compiled_circuits_are_native():
    assert check_native(build_physical_kernel(0.2, 0.3)) == []
    assert check_native(build_logical_kernel(0.2, 0.3)) == []
    assert check_native(build_reference_kernel(0.2, 0.3)) != []


# ------------------------------------------------------- logical kernel


def test_logical_noiseless_flag_and_acceptance():
    for x, a in [(0.0, 0.25), (0.35, 0.5), (0.9, 0.75)]:
        probs = noiseless_distribution(build_logical_kernel(x, a))
        flag_one = sum(p for i, p in enumerate(probs) if (i >> 1) & 1)
        assert flag_one == pytest.approx(0.0, abs=1e-12)
        _, acc = decoded_distribution(probs)
        assert acc == pytest.approx(1.0, abs=1e-12)


def test_logical_value_at_point():
    # cos^2(0.1 pi) cos^2(0.11 pi)
    assert logical_p00(build_logical_kernel(0.6, 0.5)) == pytest.approx(0.80072, abs=5e-6)


@pytest.mark.parametrize("a", CENTERS)
def test_logical_equals_physical(a):
    dev = max(abs(logical_p00(build_logical_kernel(x, a)) - physical_p00(build_physical_kernel(x, a))) for x in GRID21)
    assert dev < 1e-9


def test_logical_matches_unoptimised_encoding():
    report = verify_compilation(build_logical_kernel, build_logical_reference)
    assert report.ok()


# --------------------------------------------------- verify_compilation


def test_physical_compiled_vs_reference():
    report = verify_compilation(build_physical_kernel, build_reference_kernel)
    assert report.n_points == 25
    assert report.max_deviation < 1e-9


def test_circuit_against_itself():
    c = build_physical_kernel(0.4, 0.1)
    assert verify_compilation(c, c).max_deviation == 0


def test_mutant_is_detected():
    z_indices = [i for i, ins in enumerate(build_physical_kernel(0, 0).instructions) if getattr(ins, "kind", "") == "Z"]
    for idx in z_indices:
        report = verify_compilation(lambda x, a: build_physical_kernel(x, a, drop=[idx]), build_reference_kernel)
        assert report.max_deviation > 0.01


# ------------------------------------------------------------------- IR


def test_zone_discipline():
    b = CircuitBuilder(2, zone=[0])
    b.gate("RX", 1, angle=0.1)
    with pytest.raises(CircuitError):
        b.build()
    with pytest.raises(CircuitError):
        Circuit(2, (Gate("GlobalH", (0, 1)),), frozenset({0})).validate()
    with pytest.raises(CircuitError):
        Circuit(2, (Move(0, True),), frozenset({0})).validate()


def test_global_gates_follow_zone():
    b = CircuitBuilder(3, zone=[0])
    b.gate("GlobalH").move_in(2).gate("GlobalH").move_out(0).gate("GlobalH")
    c = b.build()
    assert [ins.targets for ins in c.instructions if isinstance(ins, Gate)] == [(0,), (0, 2), (2,)]


def test_insert_keeps_original_and_shifts_anchors():
    c = build_physical_kernel(0.1, 0.2)
    c2 = c.insert(2, Gate("Z", (0,)))
    assert len(c2) == len(c) + 1 and len(c) == 16
    assert c2.anchor("mid_beta") == c.anchor("mid_beta") + 1
    assert c2.anchor("after_prep") == 0


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_kernel_in_unit_interval(x, a):
    p = physical_p00(build_physical_kernel(x, a), "pure")
    assert -1e-12 <= p <= 1 + 1e-12
    assert p == pytest.approx(float(kernel_closed_form(x, a)), abs=1e-9)
