"""Noise channels, Pauli twirling and the circuit-level noise model.

Every noisy operation is lowered to three steps: the ideal (or coherently
biased) unitary, a Pauli channel on the qubit span of its sites, and an
atom-loss channel that moves population into ``|L>``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, fields, replace
from functools import reduce
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from kernelde.ir import ChannelRef, Circuit, CircuitError, Measure, Move
from kernelde.qsim import (
    D,
    GLOBAL_KINDS,
    LOSS,
    PAULI2,
    Gate,
    KrausChannel,
    embed,
    qubit_matrix,
    rotation,
)

SCHEMA_VERSION = 1


class NoiseError(ValueError):
    pass


# ------------------------------------------------------------------ paulis


def pauli_labels(arity: int) -> list[str]:
    """All Pauli strings of length ``arity`` in I, X, Y, Z order."""
    return ["".join(p) for p in itertools.product("IXYZ", repeat=arity)]


def pauli_matrix(label: str) -> np.ndarray:
    return reduce(np.kron, (PAULI2[c] for c in label), np.eye(1, dtype=complex))


@dataclass(frozen=True)
class PauliChannel:
    """Probabilistic Pauli error ``rho -> sum_P p_P P rho P`` on 1 or 2 qubits."""

    probs: Mapping[str, float]

    def __post_init__(self):
        probs = {str(k): float(v) for k, v in self.probs.items()}
        if not probs:
            raise NoiseError("empty Pauli channel")
        arities = {len(k) for k in probs}
        if len(arities) != 1 or arities.pop() not in (1, 2):
            raise NoiseError("Pauli strings must all have length 1 or 2")
        for k, v in probs.items():
            if set(k) - set("IXYZ"):
                raise NoiseError(f"bad Pauli string {k!r}")
            if not 0 <= v <= 1:
                raise NoiseError(f"probability of {k} is {v}, outside [0, 1]")
        if abs(sum(probs.values()) - 1) > 1e-12:
            raise NoiseError(f"Pauli probabilities sum to {sum(probs.values())!r}")
        object.__setattr__(self, "probs", probs)

    @property
    def arity(self) -> int:
        return len(next(iter(self.probs)))

    @classmethod
    def identity(cls, arity: int = 1) -> "PauliChannel":
        return cls({"I" * arity: 1.0})

    @classmethod
    def from_errors(cls, errors: Mapping[str, float], arity: int) -> "PauliChannel":
        """Fill in the identity probability from the non-identity ones."""
        errors = {k: float(v) for k, v in errors.items() if k != "I" * arity and v}
        return cls({"I" * arity: 1.0 - sum(errors.values()), **errors})

    def prob(self, label: str) -> float:
        return self.probs.get(label, 0.0)

    @property
    def error_probability(self) -> float:
        return 1.0 - self.prob("I" * self.arity)

    def is_identity(self) -> bool:
        return self.error_probability == 0.0

    def full(self) -> dict[str, float]:
        return {p: self.prob(p) for p in pauli_labels(self.arity)}

    def to_kraus(self, targets: Sequence[int] | None = None) -> KrausChannel:
        """Mixture-of-unitaries channel on three-level sites; ``|L>`` is untouched."""
        targets = tuple(range(self.arity)) if targets is None else tuple(targets)
        if len(targets) != self.arity:
            raise NoiseError(f"{self.arity}-qubit channel on {len(targets)} targets")
        ops = [math.sqrt(p) * embed(pauli_matrix(k)) for k, p in self.probs.items() if p > 0]
        return KrausChannel(tuple(ops), targets, kind="mixture", label="pauli")

    def qubit_kraus(self) -> list[np.ndarray]:
        return [math.sqrt(p) * pauli_matrix(k) for k, p in self.probs.items() if p > 0]


def depolarizing(p: float, arity: int = 1, form: str = "pauli") -> PauliChannel:
    """Depolarizing channel in one of two common parameterisations.

    ``form="pauli"``: ``(1-p) rho + p/(4^k-1) sum_{P != I} P rho P``.
    ``form="mixing"``: ``(1-p) rho + p I/2^k``, i.e. every Pauli including the
    identity gets weight ``p/4^k`` on top of ``1-p`` for the identity.
    """
    if not 0 <= p <= 1:
        raise NoiseError("depolarizing probability outside [0, 1]")
    labels = pauli_labels(arity)
    if form == "pauli":
        each = p / (len(labels) - 1)
        return PauliChannel({k: (1 - p if k == labels[0] else each) for k in labels})
    if form == "mixing":
        each = p / len(labels)
        return PauliChannel({k: (1 - p + each if k == labels[0] else each) for k in labels})
    raise NoiseError(f"unknown depolarizing form {form!r}")


def phase_flip(p: float) -> PauliChannel:
    return PauliChannel.from_errors({"Z": p}, 1)


def bit_flip(p: float) -> PauliChannel:
    return PauliChannel.from_errors({"X": p}, 1)


def loss_channel(p: float, site: int = 0) -> KrausChannel:
    """Each qubit level decays to ``|L>`` with probability ``p``."""
    if not 0 <= p <= 1:
        raise NoiseError("loss probability outside [0, 1]")
    keep = np.diag([math.sqrt(1 - p), math.sqrt(1 - p), 1.0]).astype(complex)
    ops = [keep]
    if p > 0:
        for level in (0, 1):
            jump = np.zeros((D, D), dtype=complex)
            jump[LOSS, level] = math.sqrt(p)
            ops.append(jump)
    return KrausChannel(tuple(ops), (site,), kind="loss", label="loss")


def unitary_channel(qubit_op: np.ndarray, targets: Sequence[int], label: str = "") -> KrausChannel:
    return KrausChannel((embed(qubit_op),), tuple(targets), kind="unitary", label=label)


# -------------------------------------------------------------- chi matrix


@dataclass(frozen=True, eq=False)
class ChiMatrix:
    """Process matrix in the Pauli basis: ``rho -> sum_mn chi_mn P_m rho P_n^dag``."""

    arity: int
    entries: np.ndarray

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise NoiseError("chi matrices are supported for 1 and 2 qubits")
        ent = np.asarray(self.entries, dtype=complex)
        if ent.shape != (4**self.arity,) * 2:
            raise NoiseError(f"chi matrix shape {ent.shape} does not match arity {self.arity}")
        object.__setattr__(self, "entries", ent)

    @property
    def labels(self) -> list[str]:
        return pauli_labels(self.arity)

    def is_hermitian(self, atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.entries, self.entries.conj().T, atol=atol, rtol=0))

    def diagonal(self) -> dict[str, float]:
        return {k: float(v) for k, v in zip(self.labels, np.real(np.diag(self.entries)))}

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Rebuild the channel action on a qubit density matrix."""
        paulis = [pauli_matrix(k) for k in self.labels]
        out = np.zeros_like(rho, dtype=complex)
        for m, pm in enumerate(paulis):
            for n, pn in enumerate(paulis):
                if self.entries[m, n] != 0:
                    out += self.entries[m, n] * pm @ rho @ pn.conj().T
        return out


def _qubit_block(op: np.ndarray) -> np.ndarray:
    k = int(round(math.log(op.shape[0], D)))
    idx = [int(np.ravel_multi_index(b, (D,) * k)) for b in itertools.product((0, 1), repeat=k)]
    return op[np.ix_(idx, idx)]


def _as_qubit_kraus(ch) -> list[np.ndarray]:
    if isinstance(ch, KrausChannel):
        if len(ch.targets) > 2:
            raise NoiseError("chi extraction is limited to two sites")
        return [_qubit_block(k) for k in ch.operators]
    if isinstance(ch, PauliChannel):
        return ch.qubit_kraus()
    ops = [np.asarray(k, dtype=complex) for k in ch]
    if ops and ops[0].shape[0] not in (2, 4):
        raise NoiseError("chi extraction is limited to two qubits")
    return ops


def channel_to_chi(ch) -> ChiMatrix:
    """Pauli-basis process matrix of a channel on its qubit span.

    ``ch`` may be a :class:`KrausChannel` on three-level sites (restricted to
    the qubit block), a :class:`PauliChannel`, or a list of 2^k x 2^k Kraus
    matrices.  Each Kraus operator is expanded as ``sum_m c_m P_m`` and
    ``chi = sum_i c_i c_i^dag``.
    """
    ops = _as_qubit_kraus(ch)
    dim = ops[0].shape[0]
    arity = int(round(math.log2(dim)))
    if arity not in (1, 2):
        raise NoiseError("chi extraction is limited to two qubits")
    paulis = np.array([pauli_matrix(k) for k in pauli_labels(arity)])
    chi = np.zeros((4**arity, 4**arity), dtype=complex)
    for k in ops:
        coeffs = np.einsum("mji,ji->m", paulis.conj(), k) / dim
        chi += np.outer(coeffs, coeffs.conj())
    return ChiMatrix(arity, chi)


def _ideal_matrix(ideal) -> np.ndarray:
    if isinstance(ideal, Gate):
        return qubit_matrix(ideal.kind, ideal.angle)
    return np.asarray(ideal, dtype=complex)


def pauli_twirl(ch, ideal) -> PauliChannel:
    """Pauli channel from the chi diagonal of the error ``ch o ideal^-1``.

    ``ideal`` is a :class:`Gate` (its single-application matrix) or a qubit
    unitary.  Loss out of the qubit span is divided out, so the result is
    the error channel conditioned on the atoms staying in the qubit span.
    """
    ops = _as_qubit_kraus(ch)
    u = _ideal_matrix(ideal)
    if u.shape != ops[0].shape:
        raise NoiseError(f"ideal gate acts on dimension {u.shape[0]}, channel on {ops[0].shape[0]}")
    err = [k @ u.conj().T for k in ops]
    diag = channel_to_chi(err).diagonal()
    if min(diag.values()) < -1e-9:
        raise NoiseError("negative chi diagonal: channel is not physical")
    total = sum(diag.values())
    if total <= 1e-12:
        raise NoiseError("channel leaves no population in the qubit span")
    return PauliChannel({k: max(v, 0.0) / total for k, v in diag.items()})


def process_fidelity(ch, ideal) -> float:
    """``|Tr(U^dag K_i)|^2 / d^2`` summed over Kraus operators."""
    ops = _as_qubit_kraus(ch)
    u = _ideal_matrix(ideal)
    d = u.shape[0]
    return float(sum(abs(np.trace(u.conj().T @ k)) ** 2 for k in ops) / d**2)


# --------------------------------------------------------------- injection


def inject_error(circuit: Circuit, location: int | str, err: Gate) -> Circuit:
    """Insert ``err`` before instruction ``location`` (index or anchor name).

    A global gate given with no targets acts on the sites in the computation
    zone at that point.  The input circuit is not modified.
    """
    index = circuit.anchor(location) if isinstance(location, str) else int(location)
    return circuit.insert(index, err)


def axis_rotation(axis: str, angle: float, targets: Sequence[int] = ()) -> Gate:
    """Rotation about ``X``, ``Y``, ``Z`` or their negatives; empty targets mean global."""
    sign = -1.0 if axis.startswith("-") else 1.0
    name = axis.lstrip("+-").upper()
    if name not in ("X", "Y", "Z"):
        raise NoiseError(f"unknown rotation axis {axis!r}")
    kind = f"R{name}" if targets else f"GlobalR{name}"
    return Gate(kind, tuple(targets), sign * angle)


# ------------------------------------------------------------- noise model


OP_CLASSES = ("single_qubit_global", "single_qubit_local_Z", "CZ", "move", "idle", "state_prep", "readout")


@dataclass(frozen=True)
class OpNoise:
    """Noise attached to one operation class."""

    pauli: PauliChannel = field(default_factory=PauliChannel.identity)
    loss: float = 0.0
    coherent_bias_rad: float = 0.0

    def __post_init__(self):
        if not 0 <= self.loss <= 1:
            raise NoiseError(f"loss probability {self.loss} outside [0, 1]")
        if not math.isfinite(self.coherent_bias_rad):
            raise NoiseError("coherent bias must be finite")

    def to_dict(self) -> dict:
        return {
            "pauli": {k: v for k, v in self.pauli.probs.items() if v},
            "loss": self.loss,
            "coherent_bias_rad": self.coherent_bias_rad,
        }

    @classmethod
    def from_dict(cls, data: Mapping, arity: int) -> "OpNoise":
        unknown = set(data) - {"pauli", "loss", "coherent_bias_rad"}
        if unknown:
            raise NoiseError(f"unknown keys {sorted(unknown)}")
        pauli = data.get("pauli") or {"I" * arity: 1.0}
        if any(len(k) != arity for k in pauli):
            raise NoiseError(f"expected {arity}-qubit Pauli strings, got {sorted(pauli)}")
        if "I" * arity not in pauli:
            pauli = PauliChannel.from_errors(pauli, arity)
        else:
            pauli = PauliChannel(pauli)
        return cls(pauli, float(data.get("loss", 0.0)), float(data.get("coherent_bias_rad", 0.0)))


def _arity(op_class: str) -> int:
    return 2 if op_class == "CZ" else 1


@dataclass(frozen=True)
class NoiseModel:
    """Per-class channel parameters plus the residual single-atom phase after CZ."""

    single_qubit_global: OpNoise = field(default_factory=OpNoise)
    single_qubit_local_Z: OpNoise = field(default_factory=OpNoise)
    CZ: OpNoise = field(default_factory=lambda: OpNoise(PauliChannel.identity(2)))
    move: OpNoise = field(default_factory=OpNoise)
    idle: OpNoise = field(default_factory=OpNoise)
    state_prep: OpNoise = field(default_factory=OpNoise)
    readout: OpNoise = field(default_factory=OpNoise)
    cz_residual_phase_rad: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        for name in OP_CLASSES:
            if getattr(self, name).pauli.arity != _arity(name):
                raise NoiseError(f"{name} needs a {_arity(name)}-qubit Pauli channel")

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls()

    def is_zero(self) -> bool:
        return all(
            op.pauli.is_identity() and op.loss == 0 and op.coherent_bias_rad == 0
            for op in (getattr(self, n) for n in OP_CLASSES)
        ) and self.cz_residual_phase_rad == 0

    def op(self, name: str) -> OpNoise:
        if name not in OP_CLASSES:
            raise NoiseError(f"unknown operation class {name!r}")
        return getattr(self, name)

    def with_op(self, name: str, **changes) -> "NoiseModel":
        return replace(self, **{name: replace(self.op(name), **changes)})

    def to_dict(self) -> dict:
        out = {"schema": SCHEMA_VERSION}
        for name in OP_CLASSES:
            out[name] = getattr(self, name).to_dict()
        out["cz_residual_phase_rad"] = self.cz_residual_phase_rad
        out["seed"] = self.seed
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseModel":
        if data.get("schema") != SCHEMA_VERSION:
            raise NoiseError(f"unsupported noise schema {data.get('schema')!r}, expected {SCHEMA_VERSION}")
        unknown = set(data) - set(OP_CLASSES) - {"schema", "cz_residual_phase_rad", "seed"}
        if unknown:
            raise NoiseError(f"unknown keys {sorted(unknown)}")
        kwargs = {}
        for name in OP_CLASSES:
            if name in data:
                try:
                    kwargs[name] = OpNoise.from_dict(data[name], _arity(name))
                except (TypeError, AttributeError) as exc:
                    raise NoiseError(f"{name}: {exc}") from None
        seed = data.get("seed")
        return cls(
            **kwargs,
            cz_residual_phase_rad=float(data.get("cz_residual_phase_rad", 0.0)),
            seed=None if seed is None else int(seed),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "NoiseModel":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise NoiseError(f"noise file is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise NoiseError("noise file must hold a JSON object")
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NoiseModel":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------- calibration


@dataclass(frozen=True)
class Calibration:
    """Measured gate fidelities and the assumed split of each error budget.

    Each ``*_weight`` group is normalised, so only ratios matter.  The CZ
    budget covers Pauli error and loss only: the randomized benchmarking
    that measures it does not see the single-atom phase a CZ leaves
    behind, which is carried separately by ``cz_residual_phase_rad``.
    """

    single_qubit_fidelity: float = 0.9996
    cz_fidelity: float = 0.987
    local_z_fidelity: float = 0.992
    state_prep_fidelity: float = 0.994
    readout_survival: float = 0.997
    t2_s: float = 1.49
    move_duration_s: float = 0.002
    single_depolarizing_weight: float = 0.7
    single_coherent_weight: float = 0.3
    cz_depolarizing_weight: float = 0.4
    cz_loss_weight: float = 0.3
    cz_coherent_weight: float = 0.0
    local_z_dephasing_weight: float = 0.5
    local_z_loss_weight: float = 0.5
    cz_residual_phase_rad: float = 0.05

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise NoiseError(f"{f.name} must be finite and non-negative")
        for f in ("single_qubit_fidelity", "cz_fidelity", "local_z_fidelity", "state_prep_fidelity", "readout_survival"):
            if getattr(self, f) > 1:
                raise NoiseError(f"{f} above 1")


def _shares(*weights: float) -> list[float]:
    total = sum(weights)
    if total <= 0:
        raise NoiseError("error-budget weights must not all be zero")
    return [w / total for w in weights]


def dephasing_probability(duration_s: float, t2_s: float) -> float:
    """Phase-flip probability of free evolution for ``duration_s`` at coherence time ``t2_s``."""
    return (1 - math.exp(-2 * duration_s / t2_s)) / 2


def over_rotation_for_infidelity(infidelity: float) -> float:
    """Rotation error ``b`` whose process infidelity ``sin^2(b/2)`` equals ``infidelity``."""
    return 2 * math.asin(math.sqrt(infidelity))


def conditional_phase_for_infidelity(infidelity: float) -> float:
    """Extra phase ``b`` on ``|11>`` with process infidelity ``3(1 - cos b)/8``."""
    return math.acos(1 - 8 * infidelity / 3)


def from_calibration(cal: Calibration) -> NoiseModel:
    eps1 = 1 - cal.single_qubit_fidelity
    eps2 = 1 - cal.cz_fidelity
    eps_z = 1 - cal.local_z_fidelity
    s_dep, s_coh = _shares(cal.single_depolarizing_weight, cal.single_coherent_weight)
    c_dep, c_loss, c_coh = _shares(cal.cz_depolarizing_weight, cal.cz_loss_weight, cal.cz_coherent_weight)
    z_dep, z_loss = _shares(cal.local_z_dephasing_weight, cal.local_z_loss_weight)
    p_move = dephasing_probability(cal.move_duration_s, cal.t2_s)
    return NoiseModel(
        single_qubit_global=OpNoise(depolarizing(s_dep * eps1), 0.0, over_rotation_for_infidelity(s_coh * eps1)),
        single_qubit_local_Z=OpNoise(phase_flip(z_dep * eps_z), z_loss * eps_z),
        CZ=OpNoise(
            depolarizing(c_dep * eps2, arity=2),
            c_loss * eps2 / 2,
            conditional_phase_for_infidelity(c_coh * eps2),
        ),
        move=OpNoise(phase_flip(p_move)),
        idle=OpNoise(phase_flip(p_move)),
        state_prep=OpNoise(bit_flip(1 - cal.state_prep_fidelity)),
        readout=OpNoise(loss=1 - cal.readout_survival),
        cz_residual_phase_rad=cal.cz_residual_phase_rad,
    )


def default_noise_model() -> NoiseModel:
    return from_calibration(Calibration())


def error_budget(model: NoiseModel, op_class: str) -> dict[str, float]:
    """First-order error contributions of one operation class.

    Pauli error is ``1 - p_I``; loss counts once per atom the class acts on;
    coherent error is the process infidelity of the bias rotation.
    """
    op = model.op(op_class)
    atoms = _arity(op_class)
    if op_class == "CZ":
        coherent = 3 * (1 - math.cos(op.coherent_bias_rad)) / 8
    else:
        coherent = math.sin(op.coherent_bias_rad / 2) ** 2
    budget = {"pauli": op.pauli.error_probability, "loss": atoms * op.loss, "coherent": coherent}
    budget["total"] = sum(budget.values())
    return budget


# ---------------------------------------------------------------- lowering

_FIXED_AXES = {
    "X": PAULI2["X"],
    "Y": PAULI2["Y"],
    "Z": PAULI2["Z"],
    "H": (PAULI2["X"] + PAULI2["Z"]) / math.sqrt(2),
}


def _axis_rotation_matrix(axis_op: np.ndarray, theta: float) -> np.ndarray:
    return math.cos(theta / 2) * np.eye(2) - 1j * math.sin(theta / 2) * axis_op


def biased_single(kind: str, angle: float | None, bias: float) -> np.ndarray:
    """Qubit unitary of a single-site gate with a systematic over-rotation.

    Rotations turn by ``angle + bias * sign(angle)`` (zero angles stay
    exact); fixed gates pick up an extra rotation by ``bias`` about their
    own axis.
    """
    base = kind[6:] if kind.startswith("Global") else kind
    if base in ("RX", "RY", "RZ"):
        return rotation(base[1], angle + bias * float(np.sign(angle)))
    if base in _FIXED_AXES:
        return _axis_rotation_matrix(_FIXED_AXES[base], bias) @ qubit_matrix(base)
    if base == "I":
        return np.eye(2, dtype=complex)
    raise NoiseError(f"no single-site bias rule for {kind}")


def biased_cz(phase_bias: float) -> np.ndarray:
    return np.diag([1, 1, 1, -np.exp(1j * phase_bias)]).astype(complex)


class _Lowering:
    def __init__(self, circuit: Circuit, model: NoiseModel):
        self.circuit = circuit
        self.model = model
        self.out: list = []
        self.anchors: dict[int, list[str]] = {}

    def emit(self, ch: KrausChannel) -> None:
        self.out.append(ChannelRef(ch))

    def pauli_and_loss(self, op: OpNoise, sites: Sequence[int]) -> None:
        if not op.pauli.is_identity():
            if op.pauli.arity == len(sites):
                self.emit(op.pauli.to_kraus(sites))
            else:
                for s in sites:
                    self.emit(op.pauli.to_kraus((s,)))
        if op.loss > 0:
            for s in sites:
                self.emit(loss_channel(op.loss, s))

    def extra_rotation(self, axis: str, theta: float, sites: Sequence[int], label: str) -> None:
        if theta == 0:
            return
        for s in sites:
            self.emit(unitary_channel(rotation(axis, theta), (s,), label))

    def gate(self, g: Gate) -> None:
        m = self.model
        if g.kind in GLOBAL_KINDS:
            op = m.single_qubit_global
            if op.coherent_bias_rad and (g.angle is None or g.angle != 0):
                mat = biased_single(g.kind, g.angle, op.coherent_bias_rad)
                for t in g.targets:
                    self.emit(unitary_channel(mat, (t,), f"biased {g.kind}"))
            else:
                self.out.append(g)
            self.pauli_and_loss(op, g.targets)
        elif g.kind == "Z":
            op = m.single_qubit_local_Z
            self.out.append(g)
            self.extra_rotation("Z", op.coherent_bias_rad, g.targets, "Z bias")
            self.pauli_and_loss(op, g.targets)
        elif g.kind == "CZ":
            op = m.CZ
            if op.coherent_bias_rad:
                self.emit(unitary_channel(biased_cz(op.coherent_bias_rad), g.targets, "biased CZ"))
            else:
                self.out.append(g)
            self.extra_rotation("Z", m.cz_residual_phase_rad, g.targets, "CZ residual phase")
            self.pauli_and_loss(op, g.targets)
        else:
            raise NoiseError(f"noise lowering expects native gates; got {g.kind}")

    def move(self, mv: Move) -> None:
        m = self.model
        self.extra_rotation("Z", m.move.coherent_bias_rad, (mv.site,), "move bias")
        self.pauli_and_loss(m.move, (mv.site,))
        others = [s for s in range(self.circuit.n_sites) if s != mv.site]
        self.extra_rotation("Z", m.idle.coherent_bias_rad, others, "idle bias")
        self.pauli_and_loss(m.idle, others)

    def measure(self, ms: Measure) -> None:
        op = self.model.readout
        self.extra_rotation("X", op.coherent_bias_rad, ms.sites, "readout bias")
        self.pauli_and_loss(op, ms.sites)
        self.out.append(ms)

    def run(self) -> Circuit:
        sites = range(self.circuit.n_sites)
        op = self.model.state_prep
        self.extra_rotation("X", op.coherent_bias_rad, sites, "prep bias")
        self.pauli_and_loss(op, sites)
        by_index: dict[int, list[str]] = {}
        for name, idx in self.circuit.anchors:
            by_index.setdefault(idx, []).append(name)
        new_anchors = []
        for idx, ins in enumerate(self.circuit.instructions):
            for name in by_index.get(idx, ()):
                new_anchors.append((name, len(self.out)))
            if isinstance(ins, Gate):
                self.gate(ins)
            elif isinstance(ins, Move):
                self.out.append(ins)
                self.move(ins)
            elif isinstance(ins, Measure):
                self.measure(ins)
            elif isinstance(ins, ChannelRef):
                self.out.append(ins)
            else:
                raise CircuitError(f"unsupported instruction {ins!r}")
        for name in by_index.get(len(self.circuit.instructions), ()):
            new_anchors.append((name, len(self.out)))
        return replace(
            self.circuit,
            instructions=tuple(self.out),
            anchors=tuple(new_anchors),
            name=f"{self.circuit.name}+noise" if self.circuit.name else "noisy",
        )


def apply_noise(circuit: Circuit, model: NoiseModel) -> Circuit:
    """Lower a native-gate circuit to one with explicit noise channels.

    State-preparation noise acts on every site first.  Each gate is
    followed by its Pauli and loss channels; a move dephases the moved atom
    (class ``move``) and every other atom (class ``idle``); readout noise
    acts just before measurement.  Anchors keep pointing at the same
    logical position.
    """
    return _Lowering(circuit, model).run()
