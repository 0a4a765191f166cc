"""Exact simulation of circuits on three-level sites.

Every site carries the levels ``|0>, |1>, |L>`` where ``|L>`` is the loss
state of an atom that left its trap.  Gates act on the qubit span
``{|0>, |1>}`` and as identity on ``|L>``.  Basis indices are big-endian:
site 0 is the most significant base-3 digit.

Two evolution modes are offered.  Density mode propagates a density operator
and gives exact outcome probabilities; trajectory mode propagates a pure
state and unravels stochastic channels with a seeded random stream, one
stream per shot.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np

from kernelde import rng as _rng

D = 3
LOSS = 2
MAX_DENSITY_SITES = 8
MAX_TRAJECTORY_SITES = 12

SINGLE_KINDS = {"RX", "RY", "RZ", "X", "Y", "Z", "H", "I"}
GLOBAL_KINDS = {"GlobalRX", "GlobalRY", "GlobalRZ", "GlobalX", "GlobalH", "GlobalZ"}
TWO_KINDS = {"CZ", "CNOT", "SWAP"}
ROTATIONS = {"RX", "RY", "RZ", "GlobalRX", "GlobalRY", "GlobalRZ"}


class SimulationError(ValueError):
    pass


# ---------------------------------------------------------------- matrices

I2 = np.eye(2, dtype=complex)
X2 = np.array([[0, 1], [1, 0]], dtype=complex)
Y2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z2 = np.array([[1, 0], [0, -1]], dtype=complex)
H2 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI2 = {"I": I2, "X": X2, "Y": Y2, "Z": Z2}


def rotation(axis: str, theta: float) -> np.ndarray:
    """``exp(-i theta/2 P)`` for ``P`` in ``X, Y, Z``."""
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * PAULI2[axis]


def qubit_matrix(kind: str, angle: float | None = None) -> np.ndarray:
    """Return the 2^k x 2^k unitary of a gate kind on its qubit subspace.

    Global kinds map to their single-site matrix.  Two-site matrices use the
    target order ``(first, second)``; for ``CNOT`` the first target is the
    control.
    """
    base = kind[6:] if kind.startswith("Global") else kind
    if base in ("RX", "RY", "RZ"):
        if angle is None:
            raise SimulationError(f"{kind} needs an angle")
        return rotation(base[1], angle)
    if base in PAULI2:
        return PAULI2[base].copy()
    if base == "H":
        return H2.copy()
    if base == "CZ":
        return np.diag([1, 1, 1, -1]).astype(complex)
    if base == "CNOT":
        return np.array(
            [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
        )
    if base == "SWAP":
        return np.array(
            [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
        )
    raise SimulationError(f"unknown gate kind {kind!r}")


def embed(qubit_op: np.ndarray, *, loss_block: complex | None = 1.0) -> np.ndarray:
    """Embed a k-qubit operator into k three-level sites.

    Basis states containing ``|L>`` on any site are mapped to themselves
    times ``loss_block`` (identity by default).  With ``loss_block=None`` the
    operator is zero outside the qubit subspace.
    """
    k = int(round(np.log2(qubit_op.shape[0])))
    out = np.zeros((D**k, D**k), dtype=complex)
    qubit_idx = []
    for bits in itertools.product((0, 1), repeat=k):
        qubit_idx.append(int(np.ravel_multi_index(bits, (D,) * k)) if k else 0)
    qubit_idx = np.array(qubit_idx)
    out[np.ix_(qubit_idx, qubit_idx)] = qubit_op
    if loss_block is not None:
        for idx in range(D**k):
            if idx not in qubit_idx:
                out[idx, idx] = loss_block
    return out


# ------------------------------------------------------------------- types


@lru_cache(maxsize=4096)
def _site_matrix(kind: str, angle: float | None) -> np.ndarray:
    mat = embed(qubit_matrix(kind, angle))
    mat.setflags(write=False)
    return mat


@dataclass(frozen=True)
class Gate:
    """A unitary instruction acting on one or two sites."""

    kind: str
    targets: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.kind not in SINGLE_KINDS | GLOBAL_KINDS | TWO_KINDS:
            raise SimulationError(f"unknown gate kind {self.kind!r}")
        if self.kind in TWO_KINDS:
            if len(self.targets) != 2:
                raise SimulationError(f"{self.kind} needs exactly two targets")
            if self.targets[0] == self.targets[1]:
                raise SimulationError(f"{self.kind} targets must be distinct")
        elif self.kind in SINGLE_KINDS and len(self.targets) != 1:
            raise SimulationError(f"{self.kind} acts on exactly one site")
        if len(set(self.targets)) != len(self.targets):
            raise SimulationError("repeated targets")
        if self.kind in ROTATIONS and self.angle is None:
            raise SimulationError(f"{self.kind} needs an angle")

    @property
    def is_global(self) -> bool:
        return self.kind in GLOBAL_KINDS

    def site_matrix(self) -> np.ndarray:
        """Matrix on the three-level sites of one application (read-only)."""
        return _site_matrix(self.kind, self.angle)

    def applications(self) -> list[tuple[np.ndarray, tuple[int, ...]]]:
        """Split into (matrix, sites) pairs; global gates act site by site."""
        mat = self.site_matrix()
        if self.kind in TWO_KINDS:
            return [(mat, self.targets)]
        return [(mat, (t,)) for t in self.targets]


@dataclass(frozen=True, eq=False)
class KrausChannel:
    """A CPTP map given by Kraus operators on ``len(targets)`` sites.

    ``kind`` tells trajectory mode how the channel may be unravelled:
    ``"unitary"`` and ``"mixture"`` (probabilistic mixture of unitaries) and
    ``"loss"`` (jumps into ``|L>``) are supported there; ``"general"`` only
    in density mode.
    """

    operators: tuple[np.ndarray, ...]
    targets: tuple[int, ...]
    kind: str = "general"
    label: str = ""

    def __post_init__(self):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.operators)
        object.__setattr__(self, "operators", ops)
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        dim = D ** len(self.targets)
        if not ops:
            raise SimulationError("channel needs at least one Kraus operator")
        for k in ops:
            if k.shape != (dim, dim):
                raise SimulationError(f"Kraus operator shape {k.shape}, expected {(dim, dim)}")
        total = sum(k.conj().T @ k for k in ops)
        if not np.allclose(total, np.eye(dim), atol=1e-9, rtol=0):
            raise SimulationError("Kraus operators are not trace preserving")
        if len(set(self.targets)) != len(self.targets):
            raise SimulationError("repeated targets")

    def retarget(self, targets: Sequence[int]) -> "KrausChannel":
        return KrausChannel(self.operators, tuple(targets), self.kind, self.label)

    @cached_property
    def superoperator(self) -> np.ndarray:
        """Liouville matrix acting on ``vec(rho)`` with row-major vectorisation."""
        return sum(np.kron(k, k.conj()) for k in self.operators)

    @cached_property
    def block_superoperator(self) -> np.ndarray | None:
        return block_superop(self.superoperator)

    @cached_property
    def mixture(self) -> tuple[np.ndarray, np.ndarray]:
        """(probabilities, unitaries) for a mixture-of-unitaries channel."""
        probs, units = [], []
        for k in self.operators:
            p = float(np.real(np.trace(k.conj().T @ k))) / k.shape[0]
            if p <= 0:
                continue
            probs.append(p)
            units.append(k / np.sqrt(p))
        return np.array(probs), np.array(units)


@dataclass
class QuditState:
    """State of ``n_sites`` three-level sites.

    ``data`` holds either an amplitude vector of length 3^n (pure mode) or a
    3^n x 3^n density matrix (density mode).
    """

    n_sites: int
    data: np.ndarray = field(repr=False)

    @classmethod
    def zeros(cls, n_sites: int, mode: str = "pure") -> "QuditState":
        if n_sites < 1:
            raise SimulationError("n_sites must be positive")
        if mode == "density" and n_sites > MAX_DENSITY_SITES:
            raise SimulationError(f"density mode is capped at {MAX_DENSITY_SITES} sites")
        if n_sites > MAX_TRAJECTORY_SITES:
            raise SimulationError(f"simulation is capped at {MAX_TRAJECTORY_SITES} sites")
        dim = D**n_sites
        if mode == "pure":
            vec = np.zeros(dim, dtype=complex)
            vec[0] = 1.0
            return cls(n_sites, vec)
        if mode == "density":
            rho = np.zeros((dim, dim), dtype=complex)
            rho[0, 0] = 1.0
            return cls(n_sites, rho)
        raise SimulationError(f"unknown mode {mode!r}")

    @classmethod
    def from_amplitudes(cls, amplitudes) -> "QuditState":
        vec = np.asarray(amplitudes, dtype=complex)
        n = int(round(np.log(vec.size) / np.log(D)))
        if D**n != vec.size:
            raise SimulationError("amplitude vector length must be a power of 3")
        return cls(n, vec)

    @property
    def is_density(self) -> bool:
        return self.data.ndim == 2

    def copy(self) -> "QuditState":
        return QuditState(self.n_sites, self.data.copy())

    def to_density(self) -> "QuditState":
        if self.is_density:
            return self.copy()
        return QuditState(self.n_sites, np.outer(self.data, self.data.conj()))

    def populations(self) -> np.ndarray:
        if self.is_density:
            return np.real(np.diag(self.data)).copy()
        return np.abs(self.data) ** 2

    def check(self, atol: float = 1e-10) -> None:
        """Raise if the state violates its invariants."""
        if self.is_density:
            rho = self.data
            if not np.allclose(rho, rho.conj().T, atol=atol, rtol=0):
                raise SimulationError("density matrix not Hermitian")
            if abs(np.trace(rho) - 1) > atol:
                raise SimulationError(f"trace {np.trace(rho).real} != 1")
            if np.linalg.eigvalsh(rho).min() < -1e-9:
                raise SimulationError("density matrix not positive semidefinite")
        elif abs(np.vdot(self.data, self.data).real - 1) > atol:
            raise SimulationError("state not normalised")


# ---------------------------------------------------------- tensor kernels


def _check_targets(n_sites: int, targets: Sequence[int]) -> None:
    for t in targets:
        if not 0 <= t < n_sites:
            raise SimulationError(f"target {t} out of range for {n_sites} sites")
    if len(set(targets)) != len(targets):
        raise SimulationError("repeated targets")


def _apply_left(tensor: np.ndarray, op: np.ndarray, axes: Sequence[int], n_axes: int, d: int = D) -> np.ndarray:
    """Contract ``op`` into legs ``axes`` of a flattened tensor with ``n_axes`` legs of size ``d``."""
    k = len(axes)
    if k == 1:
        view = tensor.reshape(d ** axes[0], d, -1)
        return np.matmul(op, view).reshape(tensor.shape)
    shaped = tensor.reshape((d,) * n_axes)
    op_t = op.reshape((d,) * (2 * k))
    out = np.tensordot(op_t, shaped, axes=(list(range(k, 2 * k)), list(axes)))
    out = np.moveaxis(out, list(range(k)), list(axes))
    return np.ascontiguousarray(out).reshape(tensor.shape)


def _diag_phase(op: np.ndarray) -> np.ndarray | None:
    d = np.diag(op)
    if np.count_nonzero(op - np.diag(d)) == 0:
        return d
    return None


def _apply_unitary(data: np.ndarray, n: int, mat: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    diag = _diag_phase(mat) if len(sites) > 1 else None
    if data.ndim == 1:
        if diag is not None:
            return data * _broadcast_diag(diag, sites, n).reshape(-1)
        return _apply_left(data, mat, sites, n)
    if diag is not None:
        vec = _broadcast_diag(diag, sites, n).reshape(-1)
        return data * vec[:, None] * vec.conj()[None, :]
    flat = data.reshape(-1)
    out = _apply_left(flat, mat, sites, 2 * n)
    out = _apply_left(out, mat.conj(), [n + s for s in sites], 2 * n)
    return out.reshape(data.shape)


def _broadcast_diag(diag: np.ndarray, sites: Sequence[int], n: int, d: int = D) -> np.ndarray:
    k = len(sites)
    shape = [1] * n
    for s in sites:
        shape[s] = d
    t = diag.reshape((d,) * k)
    # order the diag legs to increasing site index before reshaping
    order = np.argsort(sites)
    t = np.transpose(t, order)
    return np.broadcast_to(t.reshape(shape), (d,) * n)


def _apply_superop(rho: np.ndarray, n: int, sup: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    k = len(sites)
    shaped = rho.reshape((D,) * (2 * n))
    sup_t = sup.reshape((D,) * (4 * k))
    # sup index order: (out_row..., out_col..., in_row..., in_col...)
    in_axes = list(sites) + [n + s for s in sites]
    out = np.tensordot(sup_t, shaped, axes=(list(range(2 * k, 4 * k)), in_axes))
    out = np.moveaxis(out, list(range(2 * k)), in_axes)
    return out.reshape(rho.shape)


# --------------------------------------------------------------- operations


def apply_gate(state: QuditState, gate: Gate) -> QuditState:
    """Apply a gate to the qubit subspace of its targets."""
    _check_targets(state.n_sites, gate.targets)
    data = state.data
    for mat, sites in gate.applications():
        data = _apply_unitary(data, state.n_sites, mat, sites)
    return QuditState(state.n_sites, data)


def apply_matrix(state: QuditState, mat: np.ndarray, sites: Sequence[int]) -> QuditState:
    """Apply an arbitrary site-level unitary."""
    _check_targets(state.n_sites, sites)
    return QuditState(state.n_sites, _apply_unitary(state.data, state.n_sites, mat, sites))


def apply_channel(state: QuditState, ch: KrausChannel) -> QuditState:
    """Apply ``rho -> sum_i K_i rho K_i^dag`` in density mode."""
    if not state.is_density:
        raise SimulationError("apply_channel needs a density-mode state; use trajectories for pure states")
    _check_targets(state.n_sites, ch.targets)
    if len(ch.operators) == 1:
        return apply_matrix(state, ch.operators[0], ch.targets)
    data = _apply_superop(state.data, state.n_sites, ch.superoperator, ch.targets)
    return QuditState(state.n_sites, data)


def _jump(psi: np.ndarray, n: int, ch: KrausChannel, u: float) -> np.ndarray:
    """Pick one Kraus branch by the Born rule and renormalise."""
    if ch.kind == "unitary":
        return _apply_unitary(psi, n, ch.operators[0], ch.targets)
    if ch.kind == "mixture":
        probs, units = ch.mixture
        idx = min(int(np.searchsorted(np.cumsum(probs), u, side="right")), len(probs) - 1)
        return _apply_unitary(psi, n, units[idx], ch.targets)
    if ch.kind == "loss":
        acc = 0.0
        branches = [_apply_left(psi, k, ch.targets, n) for k in ch.operators]
        weights = [float(np.vdot(b, b).real) for b in branches]
        for b, w in zip(branches, weights):
            acc += w
            if u < acc and w > 0:
                return b / np.sqrt(w)
        b, w = max(zip(branches, weights), key=lambda bw: bw[1])
        return b / np.sqrt(w)
    raise SimulationError(f"channel {ch.label or ch.kind!r} is not a mixture of unitaries or loss jumps")


# ------------------------------------------------------------- measurement


@lru_cache(maxsize=None)
def site_bits(n_sites: int) -> np.ndarray:
    """Readout bit of every site for every basis index, shape (3^n, n)."""
    digits = np.array(list(itertools.product(range(D), repeat=n_sites)), dtype=np.int8)
    bits = (digits != 0).astype(np.int8)
    bits.setflags(write=False)
    return bits


def measure_all(state: QuditState, sites: Sequence[int] | None = None) -> dict[str, float]:
    """Probability of each readout record.

    A site reads ``0`` (atom present) from ``|0>`` and ``1`` (absent) from
    both ``|1>`` and ``|L>``.  Records are bitstrings over ``sites`` in the
    given order (all sites by default).
    """
    probs = record_distribution(state, sites)
    width = state.n_sites if sites is None else len(sites)
    return {format(i, f"0{width}b"): float(p) for i, p in enumerate(probs)}


def record_distribution(state: QuditState, sites: Sequence[int] | None = None) -> np.ndarray:
    """Probabilities indexed by the integer value of the record bitstring."""
    sites = list(range(state.n_sites)) if sites is None else list(sites)
    keys = _record_keys(state.n_sites, tuple(sites))
    return np.bincount(keys, weights=state.populations(), minlength=2 ** len(sites))


@lru_cache(maxsize=None)
def _record_keys(n_sites: int, sites: tuple[int, ...]) -> np.ndarray:
    weights = 1 << np.arange(len(sites) - 1, -1, -1)
    return site_bits(n_sites)[:, list(sites)] @ weights


# ------------------------------------------------------------ block density
#
# Gates, Pauli noise and loss never create coherence between the qubit span
# and |L> of a site.  The density operator then lives in the span of the five
# local operators |0><0|, |0><1|, |1><0|, |1><1|, |L><L| per site, a
# 5^n-dimensional space instead of 9^n.  Channels that leave this space go
# through the dense path.

BLOCK_PAIRS = ((0, 0), (0, 1), (1, 0), (1, 1), (LOSS, LOSS))
B = len(BLOCK_PAIRS)


@lru_cache(maxsize=None)
def _block_index(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the block coordinates inside a row-major k-site Liouville vector."""
    inside = []
    for combo in itertools.product(BLOCK_PAIRS, repeat=k):
        rows = [p[0] for p in combo]
        cols = [p[1] for p in combo]
        inside.append(int(np.ravel_multi_index(rows + cols, (D,) * (2 * k))) if k else 0)
    inside = np.array(inside)
    outside = np.setdiff1d(np.arange(D ** (2 * k)), inside)
    return inside, outside


def block_superop(sup: np.ndarray, atol: float = 1e-12) -> np.ndarray | None:
    """Restrict a Liouville matrix to the block space, or ``None`` if it leaks out of it."""
    k = int(round(np.log(sup.shape[0]) / np.log(D * D)))
    inside, outside = _block_index(k)
    if outside.size and np.abs(sup[np.ix_(outside, inside)]).max() > atol:
        return None
    return np.ascontiguousarray(sup[np.ix_(inside, inside)])


@lru_cache(maxsize=4096)
def _gate_block(kind: str, angle: float | None) -> np.ndarray:
    mat = embed(qubit_matrix(kind, angle))
    return block_superop(np.kron(mat, mat.conj()))


@lru_cache(maxsize=None)
def _block_coordinates(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense (row, column) index of every block coordinate for n sites."""
    pairs = np.array(BLOCK_PAIRS)
    grid = np.indices((B,) * n).reshape(n, -1)
    weights = D ** np.arange(n - 1, -1, -1)
    rows = (pairs[grid, 0] * weights[:, None]).sum(axis=0)
    cols = (pairs[grid, 1] * weights[:, None]).sum(axis=0)
    return rows, cols


def _to_block(rho: np.ndarray, n: int) -> np.ndarray | None:
    rows, cols = _block_coordinates(n)
    vec = rho[rows, cols]
    mask = np.ones(rho.shape, dtype=bool)
    mask[rows, cols] = False
    if np.abs(rho[mask]).max(initial=0.0) > 1e-12:
        return None
    return vec.astype(complex)


def _from_block(vec: np.ndarray, n: int) -> np.ndarray:
    rows, cols = _block_coordinates(n)
    rho = np.zeros((D**n, D**n), dtype=complex)
    rho[rows, cols] = vec
    return rho


def _block_apply(vec: np.ndarray, n: int, sup: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    if len(sites) > 1:
        diag = _diag_phase(sup)
        if diag is not None:
            return vec * _broadcast_diag(diag, sites, n, B).reshape(-1)
    return _apply_left(vec, sup, sites, n, B)


def _block_program(circuit) -> list | None:
    """Block superoperators of every instruction, or ``None`` if one leaks."""
    from kernelde.ir import ChannelRef, Move, Measure

    n = circuit.n_sites
    program = []
    for ins in circuit.instructions:
        if isinstance(ins, Gate):
            _check_targets(n, ins.targets)
            sup = _gate_block(ins.kind, ins.angle)
            if ins.kind in TWO_KINDS:
                program.append((sup, ins.targets))
            else:
                program.extend((sup, (t,)) for t in ins.targets)
        elif isinstance(ins, ChannelRef):
            ch = ins.channel
            _check_targets(n, ch.targets)
            sup = ch.block_superoperator
            if sup is None:
                return None
            program.append((sup, ch.targets))
        elif isinstance(ins, (Move, Measure)):
            continue
        else:
            raise SimulationError(f"unsupported instruction {ins!r}")
    return program


def _run_block(program, n: int, vec: np.ndarray) -> np.ndarray:
    for sup, sites in program:
        vec = _block_apply(vec, n, sup, sites)
    return vec


# ---------------------------------------------------------------- circuits


def run_density(circuit, initial: QuditState | None = None, backend: str = "auto") -> QuditState:
    """Evolve ``|0...0><0...0|`` (or ``initial``) through a circuit in density mode.

    ``backend="auto"`` uses the block representation when every channel keeps
    qubit levels and ``|L>`` incoherent, and the full density matrix
    otherwise; ``"dense"`` forces the latter.
    """
    from kernelde.ir import ChannelRef, Move, Measure

    n = circuit.n_sites
    if n > MAX_DENSITY_SITES:
        raise SimulationError(f"density mode is capped at {MAX_DENSITY_SITES} sites")
    if backend not in ("auto", "dense"):
        raise SimulationError(f"unknown backend {backend!r}")
    state = initial.to_density() if initial is not None else QuditState.zeros(n, "density")
    if backend == "auto":
        program = _block_program(circuit)
        vec = _to_block(state.data, n) if program is not None else None
        if vec is not None:
            return QuditState(n, _from_block(_run_block(program, n, vec), n))
    data = state.data
    for ins in circuit.instructions:
        if isinstance(ins, Gate):
            _check_targets(n, ins.targets)
            for mat, sites in ins.applications():
                data = _apply_unitary(data, n, mat, sites)
        elif isinstance(ins, ChannelRef):
            ch = ins.channel
            _check_targets(n, ch.targets)
            if len(ch.operators) == 1:
                data = _apply_unitary(data, n, ch.operators[0], ch.targets)
            else:
                data = _apply_superop(data, n, ch.superoperator, ch.targets)
        elif isinstance(ins, (Move, Measure)):
            continue
        else:
            raise SimulationError(f"unsupported instruction {ins!r}")
    return QuditState(n, data)


def run_pure(circuit, initial: QuditState | None = None) -> QuditState:
    """Evolve a pure state through a circuit that contains no stochastic channels."""
    from kernelde.ir import ChannelRef, Move, Measure

    state = initial.copy() if initial is not None else QuditState.zeros(circuit.n_sites)
    n = circuit.n_sites
    psi = state.data
    for ins in circuit.instructions:
        if isinstance(ins, Gate):
            _check_targets(n, ins.targets)
            for mat, sites in ins.applications():
                psi = _apply_unitary(psi, n, mat, sites)
        elif isinstance(ins, ChannelRef):
            if ins.channel.kind != "unitary":
                raise SimulationError("run_pure cannot apply a stochastic channel")
            psi = _apply_unitary(psi, n, ins.channel.operators[0], ins.channel.targets)
        elif isinstance(ins, (Move, Measure)):
            continue
        else:
            raise SimulationError(f"unsupported instruction {ins!r}")
    return QuditState(n, psi)


def is_deterministic(circuit) -> bool:
    from kernelde.ir import ChannelRef

    return not any(isinstance(i, ChannelRef) and i.channel.kind != "unitary" for i in circuit.instructions)


def _sample_index(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(probs) - 1)


def sample_trajectory(circuit, seed: int, shot: int = 0, labels: Sequence[int] = ()) -> str:
    """Sample one measurement record by Monte-Carlo unravelling.

    The random stream depends only on ``(seed, *labels, shot)``.  The record
    lists the measured sites in circuit order.
    """
    from kernelde.ir import ChannelRef, Move, Measure

    if circuit.n_sites > MAX_TRAJECTORY_SITES:
        raise SimulationError(f"trajectory mode is capped at {MAX_TRAJECTORY_SITES} sites")
    gen = _rng.stream(seed, *labels, shot)
    n = circuit.n_sites
    psi = QuditState.zeros(n).data
    for ins in circuit.instructions:
        if isinstance(ins, Gate):
            _check_targets(n, ins.targets)
            for mat, sites in ins.applications():
                psi = _apply_unitary(psi, n, mat, sites)
        elif isinstance(ins, ChannelRef):
            psi = _jump(psi, n, ins.channel, gen.random())
        elif isinstance(ins, (Move, Measure)):
            continue
        else:
            raise SimulationError(f"unsupported instruction {ins!r}")
    sites = circuit.measured_sites
    probs = record_distribution(QuditState(n, psi), sites)
    idx = _sample_index(probs, gen.random())
    return format(idx, f"0{len(sites)}b")


def sample_records(circuit, seed: int, shots: int, start: int = 0, labels: Sequence[int] = ()) -> list[str]:
    """Sample ``shots`` records for shot indices ``start .. start+shots-1``.

    Circuits without stochastic channels are evolved once and the readout is
    drawn per shot from the final state with the same per-shot streams.
    """
    if not is_deterministic(circuit):
        return [sample_trajectory(circuit, seed, start + i, labels) for i in range(shots)]
    sites = circuit.measured_sites
    probs = record_distribution(run_pure(circuit), sites)
    out = []
    for i in range(shots):
        u = _rng.stream(seed, *labels, start + i).random()
        out.append(format(_sample_index(probs, u), f"0{len(sites)}b"))
    return out
