import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kernelde.code422 import (
    CODE,
    N_DATA,
    RecordError,
    all_data_pairs,
    decode,
    decoded_distribution,
    postselection_stats,
    prepare_logical_00,
    prepare_logical_00_reference,
    proxy_phase,
    rejection_split,
    stats_from_counts,
)
from kernelde.qsim import Gate, QuditState, run_pure

from oracles import (
    LOGICAL_WORDS,
    classify_prep,
    code_state,
    enumerate_double_faults,
    enumerate_single_faults,
    qubit_amplitudes,
)

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Z": np.diag([1.0, -1.0]),
}


def pauli_string(s):
    out = np.ones((1, 1))
    for c in s:
        out = np.kron(out, PAULI[c])
    return out


def embed_data(vec16, extra_sites=1):
    """Place a 4-qubit data vector into the qutrit space with ``extra_sites`` sites in |0>."""
    n = N_DATA + extra_sites
    out = np.zeros(3**n, dtype=complex)
    for idx, amp in enumerate(vec16):
        bits = [int(c) for c in format(idx, "04b")] + [0] * extra_sites
        out[sum(b * 3 ** (n - 1 - i) for i, b in enumerate(bits))] = amp
    return QuditState.from_amplitudes(out)


def data_branch(state):
    """Data amplitudes with the trailing ancilla in |0>."""
    return qubit_amplitudes(state)[..., 0].reshape(16)


def logical_amplitudes(vec16):
    return np.array([np.vdot(code_state(b), vec16) for b in sorted(LOGICAL_WORDS)])


def rx(t):
    return np.array([[math.cos(t / 2), -1j * math.sin(t / 2)], [-1j * math.sin(t / 2), math.cos(t / 2)]])


# ----------------------------------------------------------------- code


def test_stabilizers_and_logicals_algebra():
    for s in CODE.stabilizers:
        for p in CODE.stabilizers + CODE.logical_x + CODE.logical_z:
            assert CODE.commutes(s, p)
    for i, z in enumerate(CODE.logical_z):
        for j, x in enumerate(CODE.logical_x):
            assert CODE.commutes(z, x) == (i != j)


def test_basis_states_are_stabilised():
    for bits in LOGICAL_WORDS:
        v = CODE.basis_state(bits)
        for s in CODE.stabilizers:
            np.testing.assert_allclose(pauli_string(s) @ v, v, atol=1e-12)
        for k, z in enumerate(CODE.logical_z):
            np.testing.assert_allclose(pauli_string(z) @ v, (-1) ** bits[k] * v, atol=1e-12)


def test_prepared_state_is_logical_zero_zero():
    for circ in (prepare_logical_00(), prepare_logical_00_reference()):
        amps = qubit_amplitudes(run_pure(circ))
        assert np.sum(np.abs(amps[..., 1]) ** 2) == pytest.approx(0, abs=1e-12)
        assert abs(np.vdot(code_state((0, 0)), amps[..., 0].reshape(16))) ** 2 == pytest.approx(1, abs=1e-12)


# ---------------------------------------------------------------- faults


def test_every_single_prep_fault_is_caught_or_harmless():
    circ = prepare_logical_00()
    outcomes = {}
    for idx, site, p, state in enumerate_single_faults(circ, range(5)):
        outcomes[(idx, site, p)] = classify_prep(state)
    assert "harmful" not in outcomes.values()
    # the flag actually does some work
    assert "flagged" in outcomes.values()


def test_two_faults_can_defeat_preparation():
    circ = prepare_logical_00()
    found = next(
        (pair for *pair, state in enumerate_double_faults(circ, range(5), "X") if classify_prep(state) == "harmful"),
        None,
    )
    assert found is not None


# ----------------------------------------------------------- proxy phase


def test_proxy_phase_zero_angle_is_identity():
    start = embed_data(code_state((0, 1)))
    out = run_pure(proxy_phase((0, 2), 0.0), start)
    np.testing.assert_allclose(out.data, start.data, atol=1e-12)


def test_proxy_phase_quarter_turn():
    theta = 2 * math.pi * 0.25
    out = run_pure(proxy_phase((0, 2), theta), embed_data(code_state((0, 0))))
    branch = data_branch(out)
    assert np.vdot(branch, branch).real == pytest.approx(1, abs=1e-12)
    expected = np.kron(rx(theta), np.eye(2)) @ np.array([1, 0, 0, 0])
    np.testing.assert_allclose(logical_amplitudes(branch), expected, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2 * math.pi, 2 * math.pi), st.sampled_from(all_data_pairs()))
def test_proxy_phase_equals_two_body_rotation(theta, pair):
    rng = np.random.default_rng(abs(hash((theta, pair))) % 2**32)
    vec = rng.normal(size=16) + 1j * rng.normal(size=16)
    vec /= np.linalg.norm(vec)
    label = "".join("X" if i in pair else "I" for i in range(4))
    target = (math.cos(theta / 2) * np.eye(16) - 1j * math.sin(theta / 2) * pauli_string(label)) @ vec
    out = run_pure(proxy_phase(pair, theta), embed_data(vec))
    np.testing.assert_allclose(data_branch(out), target, atol=1e-10)


def test_ancilla_x_in_window_becomes_logical_flip():
    theta = 0.7
    circ = proxy_phase((0, 2), theta)
    faulty = circ.insert(circ.anchor("window"), Gate("X", (4,)))
    clean = data_branch(run_pure(circ, embed_data(code_state((0, 0)))))
    bad = data_branch(run_pure(faulty, embed_data(code_state((0, 0)))))
    # ancilla returns to |0>, so the fault passes the ancilla check
    assert np.vdot(bad, bad).real == pytest.approx(1, abs=1e-12)
    np.testing.assert_allclose(bad, pauli_string("XIXI") @ clean, atol=1e-12)


def test_proxy_phase_rejects_bad_support():
    for targets in [(0,), (0, 0), (1, 4), (0, 1, 2)]:
        with pytest.raises(ValueError):
            proxy_phase(targets, 0.1)


# --------------------------------------------------------------- decoding


@pytest.mark.parametrize(
    "record,accepted,bits,reason",
    [
        ("000000", True, (0, 0), None),
        ("010100", True, (1, 0), None),
        ("000100", False, None, "parity"),
        ("000010", False, None, "flag"),
        ("000001", False, None, "ancilla"),
        ("111110", False, None, "flag"),
    ],
)
def test_decode_examples(record, accepted, bits, reason):
    res = decode(record)
    assert (res.accepted, res.logical_bits, res.reject_reason) == (accepted, bits, reason)


def test_decode_rejects_malformed():
    for bad in ["0000", "0000000", "00002a", "000020"]:
        with pytest.raises(RecordError):
            decode(bad)


def test_both_codewords_decode_alike():
    for bits, words in LOGICAL_WORDS.items():
        for w in words:
            assert decode(w + "00").logical_bits == bits
        # logical Z_L parities agree with the decoded bits
        for k, z in enumerate(CODE.logical_z):
            word = words[0]
            parity = sum(int(c) for c, p in zip(word, z) if p == "Z") % 2
            assert parity == bits[k]


def test_decode_sequence_input():
    assert decode([0, 1, 1, 0, 0, 0]).logical_bits == (1, 1)


# ----------------------------------------------------------- statistics


def test_postselection_empty():
    with pytest.raises(RecordError):
        postselection_stats([])


def test_postselection_all_flagged():
    s = postselection_stats(["000010"] * 5)
    assert s.flag_reject_rate == 1 and s.accepted_count == 0 and s.parity_reject_rate == 0


def test_postselection_sequential_rates():
    recs = ["000010", "000011"] + ["100000", "000100"] + ["000000"] * 6
    s = postselection_stats(recs)
    assert s.flag_reject_rate == pytest.approx(0.2)
    assert s.parity_reject_rate == pytest.approx(0.25)
    assert s.total_discard_rate == pytest.approx(0.4)
    assert s == stats_from_counts(2, 2, 6)


def test_noiseless_distribution_has_no_discards():
    probs = np.zeros(64)
    probs[int("000000", 2)] = 0.5
    probs[int("011000", 2)] = 0.5
    dist, acc = decoded_distribution(probs)
    assert acc == 1 and dist[(0, 0)] == 0.5 and dist[(1, 1)] == 0.5
    assert rejection_split(probs)["total_discard_rate"] == 0


def test_rejection_split_matches_counts():
    probs = np.zeros(64)
    probs[int("000010", 2)] = 0.2
    probs[int("000100", 2)] = 0.2
    probs[0] = 0.6
    split = rejection_split(probs)
    assert split["flag_reject_rate"] == pytest.approx(0.2)
    assert split["parity_reject_rate"] == pytest.approx(0.25)
    assert split["total_discard_rate"] == pytest.approx(0.4)
