import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernelde.ir import CircuitBuilder
from kernelde.noise import bit_flip, depolarizing, loss_channel, phase_flip
from kernelde.qsim import (
    D,
    LOSS,
    Gate,
    KrausChannel,
    QuditState,
    SimulationError,
    apply_channel,
    apply_gate,
    embed,
    measure_all,
    qubit_matrix,
    record_distribution,
    run_density,
    run_pure,
    sample_records,
    sample_trajectory,
)

S2 = 1 / math.sqrt(2)


def basis(n, *digits):
    vec = np.zeros(D**n, dtype=complex)
    vec[int(np.ravel_multi_index(digits, (D,) * n))] = 1
    return QuditState(n, vec)


def random_state(n, seed):
    g = np.random.default_rng(seed)
    v = g.normal(size=D**n) + 1j * g.normal(size=D**n)
    return QuditState(n, v / np.linalg.norm(v))


def rx(t):
    return np.array([[math.cos(t / 2), -1j * math.sin(t / 2)], [-1j * math.sin(t / 2), math.cos(t / 2)]])


# ------------------------------------------------------------- apply_gate


def test_rx_zero_is_identity():
    psi = random_state(2, 1)
    out = apply_gate(psi, Gate("RX", (1,), 0.0))
    np.testing.assert_allclose(out.data, psi.data, atol=1e-15)


def test_feature_map_product_state_amplitude():
    # RX(2 pi 0.25) on q0, CNOT, RX(2 pi 0.5) on q0 from |00>
    psi = basis(2, 0, 0)
    for g in (Gate("RX", (0,), 2 * math.pi * 0.25), Gate("CNOT", (0, 1)), Gate("RX", (0,), 2 * math.pi * 0.5)):
        psi = apply_gate(psi, g)
    cnot = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    ref = np.kron(rx(math.pi), np.eye(2)) @ cnot @ np.kron(rx(math.pi / 2), np.eye(2)) @ np.array([1, 0, 0, 0])
    assert abs(ref[0]) ** 2 == pytest.approx(0.0, abs=1e-15)
    probs = measure_all(psi)
    assert probs["00"] == pytest.approx(0.0, abs=1e-15)
    qubit_amps = psi.data[[0, 1, 3, 4]]
    np.testing.assert_allclose(qubit_amps, ref, atol=1e-12)


def test_hadamard_on_zero():
    out = apply_gate(basis(1, 0), Gate("H", (0,)))
    np.testing.assert_allclose(out.data, [S2, S2, 0], atol=1e-12)


def test_gates_leave_loss_level_alone():
    psi = basis(2, LOSS, 1)
    for g in (Gate("H", (0,)), Gate("RX", (0,), 0.3), Gate("CZ", (0, 1)), Gate("CNOT", (0, 1)), Gate("SWAP", (0, 1))):
        np.testing.assert_allclose(apply_gate(psi, g).data, psi.data, atol=1e-15)


def test_cz_with_lost_partner_is_identity_on_survivor():
    plus = np.zeros(9, dtype=complex)
    plus[[6, 7]] = S2  # |L>(|0>+|1>)/sqrt2
    out = apply_gate(QuditState(2, plus), Gate("CZ", (0, 1)))
    np.testing.assert_allclose(out.data, plus, atol=1e-15)


@pytest.mark.parametrize("gate", [Gate("RX", (2,), 0.1), Gate("CZ", (0, 3))])
def test_target_out_of_range(gate):
    with pytest.raises(SimulationError):
        apply_gate(basis(2, 0, 0), gate)


def test_repeated_targets_rejected():
    with pytest.raises(SimulationError):
        Gate("CZ", (1, 1))
    with pytest.raises(SimulationError):
        Gate("GlobalH", (0, 0))


def test_rotation_needs_angle():
    with pytest.raises(SimulationError):
        Gate("RX", (0,))


@pytest.mark.parametrize("kind", ["RX", "RY", "RZ", "X", "Y", "Z", "H", "CZ", "CNOT", "SWAP", "GlobalRX", "GlobalH", "GlobalZ"])
def test_gate_matrices_unitary(kind):
    u = qubit_matrix(kind, 0.731)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.sampled_from(["RX", "RY", "RZ", "H", "CZ", "CNOT", "SWAP"]), st.floats(-7, 7), st.permutations([0, 1, 2])),
        min_size=1,
        max_size=8,
    ),
    st.integers(0, 2**32 - 1),
)
def test_norm_preserved(ops, seed):
    psi = random_state(3, seed)
    rho = psi.to_density()
    for kind, angle, perm in ops:
        targets = tuple(perm[:2]) if kind in ("CZ", "CNOT", "SWAP") else (perm[0],)
        g = Gate(kind, targets, angle if kind.startswith("R") else None)
        psi = apply_gate(psi, g)
        rho = apply_gate(rho, g)
        assert abs(np.vdot(psi.data, psi.data) - 1) < 1e-9
    rho.check(1e-9)
    np.testing.assert_allclose(rho.data, np.outer(psi.data, psi.data.conj()), atol=1e-10)


# ---------------------------------------------------------- apply_channel


def test_identity_channel():
    rho = random_state(2, 4).to_density()
    ch = KrausChannel((np.eye(3),), (1,))
    np.testing.assert_allclose(apply_channel(rho, ch).data, rho.data, atol=1e-15)


def test_full_loss_sends_zero_to_loss_state():
    rho = apply_channel(basis(1, 0).to_density(), loss_channel(1.0, 0))
    expected = np.zeros((3, 3))
    expected[LOSS, LOSS] = 1
    np.testing.assert_allclose(rho.data, expected, atol=1e-15)


def test_depolarizing_on_zero():
    p = 0.1
    rho = basis(1, 0).to_density().data
    # (1 - p) rho + p/3 (X rho X + Y rho Y + Z rho Z) restricted to the qubit block
    q = rho[:2, :2]
    paulis = [qubit_matrix(k) for k in "XYZ"]
    ref = (1 - p) * q + p / 3 * sum(P @ q @ P.conj().T for P in paulis)
    out = apply_channel(QuditState(1, rho), depolarizing(p).to_kraus((0,))).data
    np.testing.assert_allclose(np.diag(out).real, [1 - 2 * p / 3, 2 * p / 3, 0], atol=1e-15)
    np.testing.assert_allclose(out[:2, :2], ref, atol=1e-15)


def test_non_cptp_rejected():
    with pytest.raises(SimulationError):
        KrausChannel((0.5 * np.eye(3),), (0,))


def test_channel_needs_density_state():
    with pytest.raises(SimulationError):
        apply_channel(basis(1, 0), bit_flip(0.1).to_kraus((0,)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_channels_preserve_trace(p, q, seed):
    rho = random_state(2, seed).to_density()
    for ch in (depolarizing(p, 2).to_kraus((0, 1)), loss_channel(q, 1), phase_flip(p).to_kraus((0,))):
        rho = apply_channel(rho, ch)
        assert abs(np.trace(rho.data) - 1) < 1e-9
    rho.check(1e-9)


def test_loss_state_is_absorbing():
    b = CircuitBuilder(2)
    b.channel(loss_channel(1.0, 0))
    b.gate("H", 0).gate("RX", 0, angle=0.4).gate("CZ", 0, 1).gate("GlobalRY", angle=1.1).gate("H", 1)
    rho = run_density(b.build())
    # reduced state of site 0 is |L><L|
    red = np.einsum("aibi->ab", rho.data.reshape(3, 3, 3, 3))
    expected = np.zeros((3, 3))
    expected[LOSS, LOSS] = 1
    np.testing.assert_allclose(red, expected, atol=1e-12)


# ----------------------------------------------------------- measurement


def test_readout_of_one_and_loss():
    assert measure_all(basis(1, 1))["1"] == pytest.approx(1.0)
    assert measure_all(basis(1, LOSS))["1"] == pytest.approx(1.0)


def test_readout_of_superposition():
    psi = QuditState(1, np.array([S2, S2, 0], dtype=complex))
    assert measure_all(psi)["0"] == pytest.approx(0.5)


def test_record_order_follows_sites():
    psi = basis(3, 1, 0, LOSS)
    assert measure_all(psi)["101"] == pytest.approx(1.0)
    assert measure_all(psi, [2, 1])["10"] == pytest.approx(1.0)
    np.testing.assert_allclose(record_distribution(psi, [2, 1]), [0, 0, 1, 0])


# ---------------------------------------------------------- trajectories


def _circuit(n, build, measure=None):
    b = CircuitBuilder(n)
    build(b)
    b.measure(*(range(n) if measure is None else measure))
    return b.build()


def test_trajectory_zero_state_reads_zero():
    circ = _circuit(1, lambda b: None)
    assert {sample_trajectory(circ, s) for s in range(50)} == {"0"}


def test_trajectory_born_rule():
    circ = _circuit(1, lambda b: b.gate("H", 0))
    recs = sample_records(circ, 11, 100_000)
    assert recs.count("0") / 1e5 == pytest.approx(0.5, abs=0.01)


def test_trajectory_loss_rate():
    circ = _circuit(1, lambda b: b.channel(loss_channel(0.3, 0)))
    recs = sample_records(circ, 5, 100_000)
    assert recs.count("1") / 1e5 == pytest.approx(0.3, abs=0.01)


def test_trajectory_rejects_general_channel():
    amp = np.diag([1, math.sqrt(0.5), 1]).astype(complex)
    jump = np.zeros((3, 3), dtype=complex)
    jump[0, 1] = math.sqrt(0.5)
    circ = _circuit(1, lambda b: b.gate("X", 0).channel(KrausChannel((amp, jump), (0,))))
    with pytest.raises(SimulationError):
        sample_trajectory(circ, 0)
    assert measure_all(run_density(circ))["0"] == pytest.approx(0.5)


def test_shot_streams_independent_of_count():
    circ = _circuit(2, lambda b: b.gate("H", 0).channel(depolarizing(0.3, 2).to_kraus((0, 1))))
    long = sample_records(circ, 9, 40)
    assert sample_records(circ, 9, 15) == long[:15]
    assert sample_records(circ, 9, 10, start=25) == long[25:35]
    assert sample_trajectory(circ, 9, shot=7) == long[7]


def test_trajectory_matches_density():
    def build(b):
        b.gate("H", 0).gate("CNOT", 0, 1)
        b.channel(depolarizing(0.2, 2).to_kraus((1, 2)))
        b.channel(loss_channel(0.15, 2))
        b.gate("RY", 2, angle=0.7).gate("CZ", 0, 2)
        b.channel(phase_flip(0.1).to_kraus((0,)))
        b.gate("H", 0)
        b.channel(loss_channel(0.05, 0))

    circ = _circuit(3, build)
    exact = record_distribution(run_density(circ))
    n = 100_000
    recs = sample_records(circ, 2024, n)
    counts = np.bincount([int(r, 2) for r in recs], minlength=8) / n
    sigma = np.sqrt(np.maximum(exact * (1 - exact), 1e-12) / n)
    assert np.all(np.abs(counts - exact) <= 4 * sigma + 1e-12), (counts, exact)


# -------------------------------------------------------------- backends


def test_block_backend_matches_dense():
    from kernelde.circuits import build_logical_kernel
    from kernelde.noise import apply_noise, default_noise_model

    circ = apply_noise(build_logical_kernel(0.35, 0.5), default_noise_model())
    fast = run_density(circ)
    dense = run_density(circ, backend="dense")
    np.testing.assert_allclose(fast.data, dense.data, atol=1e-12)
    dense.check(1e-7)


def test_pure_and_density_agree():
    circ = _circuit(2, lambda b: b.gate("RX", 0, angle=1.2).gate("CNOT", 0, 1).gate("RY", 1, angle=0.4))
    np.testing.assert_allclose(
        record_distribution(run_pure(circ)), record_distribution(run_density(circ)), atol=1e-14
    )


def test_site_caps():
    with pytest.raises(SimulationError):
        QuditState.zeros(9, "density")
    with pytest.raises(SimulationError):
        QuditState.zeros(13)
    with pytest.raises(SimulationError):
        run_density(CircuitBuilder(9).build())


def test_embed_is_identity_on_loss_subspace():
    m = embed(qubit_matrix("CNOT"))
    for idx in range(9):
        digits = np.unravel_index(idx, (3, 3))
        if LOSS in digits:
            row = np.zeros(9)
            row[idx] = 1
            np.testing.assert_allclose(m[:, idx], row)
