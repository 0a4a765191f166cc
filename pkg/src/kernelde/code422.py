"""The [[4,2,2]] error-detecting code.

Data sites 0..3 hold two logical qubits.  Stabilisers are ``XXXX`` and
``ZZZZ``; the logical basis is

    |00>_L = (|0000> + |1111>)/sqrt2      |01>_L = (|0011> + |1100>)/sqrt2
    |10>_L = (|0101> + |1010>)/sqrt2      |11>_L = (|0110> + |1001>)/sqrt2

so ``Z0 Z1`` reads the first logical bit and ``Z0 Z2`` the second.  The
readout of a kernel shot is six bits: four data sites, the preparation flag
and the rotation ancilla.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from kernelde.ir import Circuit, CircuitBuilder

N_DATA = 4
FLAG = 4
ANCILLA = 5
N_SITES = 6
ANCILLA_NOMINAL = 0


@dataclass(frozen=True)
class CodeSpec:
    """Pauli strings over the four data sites."""

    stabilizers: tuple[str, ...] = ("XXXX", "ZZZZ")
    logical_z: tuple[str, ...] = ("ZZII", "ZIZI")
    logical_x: tuple[str, ...] = ("XIXI", "XXII")

    @staticmethod
    def commutes(p: str, q: str) -> bool:
        clashes = sum(a != "I" and b != "I" and a != b for a, b in zip(p, q))
        return clashes % 2 == 0

    def basis_state(self, bits: tuple[int, int]) -> np.ndarray:
        """Amplitudes of ``|b1 b2>_L`` over the 16 qubit basis states."""
        vec = np.zeros(16)
        for word in LOGICAL_WORDS[bits]:
            vec[int(word, 2)] = 1 / np.sqrt(2)
        return vec


LOGICAL_WORDS = {
    (0, 0): ("0000", "1111"),
    (0, 1): ("0011", "1100"),
    (1, 0): ("0101", "1010"),
    (1, 1): ("0110", "1001"),
}

CODE = CodeSpec()


# -------------------------------------------------------------- fragments


def prepare_logical_00() -> Circuit:
    """Flagged preparation of ``|00>_L`` in the native gate set.

    Sites 0..3 are data and site 4 the flag; all start in the computation
    zone.  The flag is parked in storage at the end and must read 0.
    """
    b = CircuitBuilder(N_DATA + 1, zone=range(N_DATA + 1), name="prep00")
    b.gate("GlobalH")
    for d in range(N_DATA):
        b.gate("CZ", d, FLAG)
    b.gate("GlobalH")
    b.gate("CZ", 0, FLAG)
    b.gate("GlobalH")
    b.move_out(FLAG)
    b.gate("GlobalH")
    b.mark("after_prep")
    return b.build()


def prepare_logical_00_reference() -> Circuit:
    """Textbook form: flag in |+>, CNOTs flag -> data, CNOT data0 -> flag."""
    b = CircuitBuilder(N_DATA + 1, name="prep00_reference")
    b.gate("H", FLAG)
    for d in range(N_DATA):
        b.gate("CNOT", FLAG, d)
    b.gate("CNOT", 0, FLAG)
    return b.build()


def is_logical_x_support(targets: Sequence[int]) -> bool:
    """Every weight-two X string on the data sites is a nontrivial logical X."""
    return len(targets) == 2 and len(set(targets)) == 2 and all(0 <= t < N_DATA for t in targets)


def proxy_phase(targets: Sequence[int], theta: float, n_data: int = N_DATA) -> Circuit:
    """``exp(-i theta/2 X_a X_b)`` on data sites ``targets`` via one ancilla.

    The ancilla (site ``n_data``) is put in |+>, coupled by CNOTs from the
    ancilla onto the targets, rotated by ``RX(theta)``, uncoupled and
    returned to |0>.
    """
    if not is_logical_x_support(targets):
        raise ValueError(f"{tuple(targets)} is not the support of a logical X operator")
    anc = n_data
    b = CircuitBuilder(n_data + 1, name="proxy_phase")
    b.gate("H", anc)
    for t in targets:
        b.gate("CNOT", anc, t)
    b.mark("window")
    b.gate("RX", anc, angle=theta)
    b.mark("window_end")
    for t in reversed(targets):
        b.gate("CNOT", anc, t)
    b.gate("H", anc)
    return b.build()


# ----------------------------------------------------------------- decoding


class RecordError(ValueError):
    pass


@dataclass(frozen=True)
class DecodeResult:
    accepted: bool
    logical_bits: tuple[int, int] | None = None
    reject_reason: str | None = None


def decode(record: str | Sequence[int]) -> DecodeResult:
    """Postselect and decode a six-bit kernel record ``d0 d1 d2 d3 flag ancilla``."""
    try:
        bits = [int(c) for c in record]
    except (TypeError, ValueError):
        raise RecordError(f"expected 6 readout bits, got {record!r}") from None
    if len(bits) != N_SITES or any(b not in (0, 1) for b in bits):
        raise RecordError(f"expected 6 readout bits, got {record!r}")
    d = bits[:N_DATA]
    if bits[FLAG] == 1:
        return DecodeResult(False, reject_reason="flag")
    if bits[ANCILLA] != ANCILLA_NOMINAL:
        return DecodeResult(False, reject_reason="ancilla")
    if sum(d) % 2:
        return DecodeResult(False, reject_reason="parity")
    return DecodeResult(True, (d[0] ^ d[1], d[0] ^ d[2]))


FLAG_REASONS = ("flag", "ancilla")
_DECODE_TABLE = [decode(format(i, "06b")) for i in range(64)]


def decode_index(index: int) -> DecodeResult:
    return _DECODE_TABLE[index]


def decoded_distribution(record_probs: np.ndarray) -> tuple[dict[tuple[int, int], float], float]:
    """Logical distribution conditioned on acceptance, and the acceptance probability."""
    acc = 0.0
    out = {bits: 0.0 for bits in LOGICAL_WORDS}
    for idx, p in enumerate(record_probs):
        res = _DECODE_TABLE[idx]
        if res.accepted:
            out[res.logical_bits] += p
            acc += p
    if acc > 0:
        out = {k: v / acc for k, v in out.items()}
    return out, acc


def rejection_split(record_probs: np.ndarray) -> dict[str, float]:
    """Exact sequential discard rates for a record distribution."""
    flag = sum(p for i, p in enumerate(record_probs) if _DECODE_TABLE[i].reject_reason in FLAG_REASONS)
    parity = sum(p for i, p in enumerate(record_probs) if _DECODE_TABLE[i].reject_reason == "parity")
    passing = 1.0 - flag
    return {
        "flag_reject_rate": float(flag),
        "parity_reject_rate": float(parity / passing) if passing > 0 else 0.0,
        "total_discard_rate": float(flag + parity),
    }


@dataclass(frozen=True)
class PostselectionStats:
    flag_reject_rate: float
    parity_reject_rate: float
    total_discard_rate: float
    accepted_count: int
    total: int

    def as_dict(self) -> dict:
        return {
            "flag_reject_rate": self.flag_reject_rate,
            "parity_reject_rate": self.parity_reject_rate,
            "total_discard_rate": self.total_discard_rate,
            "accepted_count": self.accepted_count,
            "total": self.total,
        }


def stats_from_counts(flagged: int, parity: int, accepted: int) -> PostselectionStats:
    """Sequential discard rates from counts of flag/ancilla rejects, parity rejects and accepts."""
    total = flagged + parity + accepted
    if total == 0:
        raise RecordError("no records")
    survivors = total - flagged
    return PostselectionStats(
        flag_reject_rate=flagged / total,
        parity_reject_rate=parity / survivors if survivors else 0.0,
        total_discard_rate=(flagged + parity) / total,
        accepted_count=accepted,
        total=total,
    )


def postselection_stats(records: Iterable[str]) -> PostselectionStats:
    """Sequential discard accounting.

    Records rejected by either ancilla (prep flag or rotation ancilla) count
    toward ``flag_reject_rate``; ``parity_reject_rate`` is the fraction of
    the remaining records with odd data parity.
    """
    reasons = Counter(decode(rec).reject_reason for rec in records)
    return stats_from_counts(reasons["flag"] + reasons["ancilla"], reasons["parity"], reasons[None])


def all_data_pairs() -> list[tuple[int, int]]:
    return list(combinations(range(N_DATA), 2))
