"""Kernel circuit builders and compilation checks.

The feature map is ``U(x) = RX_0(2 pi x) CNOT_{0->1} RX_0(2 pi x^2)`` and the
kernel circuit is ``U(a)^dag U(x)`` read out as the probability of ``00``.
Compiled circuits use only global single-site gates, local ``Z``, ``CZ`` and
moves between the computation and storage zones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from kernelde import code422
from kernelde.code422 import ANCILLA, FLAG, N_SITES as LOGICAL_SITES
from kernelde.ir import Circuit, CircuitBuilder, Measure
from kernelde.qsim import Gate, record_distribution, run_density, run_pure

NATIVE_KINDS = {"GlobalRX", "GlobalRY", "GlobalRZ", "GlobalX", "GlobalH", "GlobalZ", "Z", "CZ"}
CENTERS = (0.25, 0.5, 0.75)


@dataclass(frozen=True)
class KernelParams:
    x: float
    a: float

    @property
    def alpha(self) -> float:
        return 2 * np.pi * self.x**2

    @property
    def beta(self) -> float:
        return 2 * np.pi * (self.x - self.a)

    @property
    def gamma(self) -> float:
        return -2 * np.pi * self.a**2

    @property
    def angles(self) -> tuple[float, float, float]:
        return self.alpha, self.beta, self.gamma


def kernel_closed_form(x, a):
    """cos^2(pi (x - a)) cos^2(pi (x^2 - a^2)); broadcasts over arrays."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.cos(np.pi * (x - a)) ** 2 * np.cos(np.pi * (x**2 - a**2)) ** 2


def kernel_closed_form_dx(x, a):
    """Analytic derivative of :func:`kernel_closed_form` in ``x``."""
    x = np.asarray(x, dtype=float)
    u = np.pi * (x - a)
    v = np.pi * (x**2 - a**2)
    return -np.pi * np.sin(2 * u) * np.cos(v) ** 2 - 2 * np.pi * x * np.cos(u) ** 2 * np.sin(2 * v)


# ------------------------------------------------------------- references


def _cnot(b: CircuitBuilder, control: int, target: int, decompose: bool) -> None:
    if decompose:
        b.gate("H", target).gate("CZ", control, target).gate("H", target)
    else:
        b.gate("CNOT", control, target)


def build_u(x: float, decompose_cnot: bool = False) -> Circuit:
    """Feature-map circuit preparing ``|psi(x)>`` on two sites."""
    b = CircuitBuilder(2, name="U")
    b.gate("RX", 0, angle=2 * np.pi * x**2)
    _cnot(b, 0, 1, decompose_cnot)
    b.gate("RX", 0, angle=2 * np.pi * x)
    return b.build()


def build_reference_kernel(x: float, a: float, decompose_cnot: bool = True) -> Circuit:
    """Uncompiled ``U(a)^dag U(x)`` with both sites measured."""
    b = CircuitBuilder(2, name="kernel_reference")
    b.mark("after_prep")
    b.gate("RX", 0, angle=2 * np.pi * x**2)
    _cnot(b, 0, 1, decompose_cnot)
    b.gate("RX", 0, angle=2 * np.pi * x)
    b.mark("between_U")
    b.gate("RX", 0, angle=-2 * np.pi * a)
    _cnot(b, 0, 1, decompose_cnot)
    b.gate("RX", 0, angle=-2 * np.pi * a**2)
    b.mark("before_measure")
    b.measure(0, 1)
    return b.build()


# --------------------------------------------------------------- compiled


def build_physical_kernel(x: float, a: float, drop: Sequence[int] = ()) -> Circuit:
    """Native-gate physical kernel circuit.

    Site 0 starts in the computation zone, site 1 in storage.  ``drop``
    removes instructions by index, which is only meant for mutation tests.
    """
    alpha, beta, gamma = KernelParams(x, a).angles
    b = CircuitBuilder(2, zone=[0], name="physical_kernel")
    b.mark("after_prep")
    b.gate("GlobalRX", angle=alpha)
    b.gate("Z", 0)
    b.gate("GlobalH")
    b.mark("before_move_in")
    b.move_in(1)
    b.gate("GlobalH")
    b.gate("GlobalZ")
    b.gate("CZ", 0, 1)
    b.gate("GlobalRX", angle=beta / 2)
    b.gate("Z", 1)
    b.mark("mid_beta")
    b.gate("GlobalRX", angle=beta / 2)
    b.gate("CZ", 0, 1)
    b.gate("GlobalH")
    b.move_out(1)
    b.gate("GlobalH")
    b.gate("GlobalRX", angle=gamma)
    b.mark("before_measure")
    b.measure(0, 1)
    circ = b.build()
    if drop:
        keep = [ins for i, ins in enumerate(circ.instructions) if i not in set(drop)]
        circ = circ.with_instructions(keep, anchors=())
    return circ


def build_logical_kernel(x: float, a: float) -> Circuit:
    """Native-gate [[4,2,2]] kernel circuit on six sites.

    Sites 0..3 are data, 4 the preparation flag and 5 the proxy-phasing
    ancilla.  The three logical rotations are ``alpha`` and ``gamma`` about
    ``X0 X2`` and ``beta`` about ``X1 X2``; the logical CNOTs of the
    reference circuit are absorbed into the choice of parity.
    """
    alpha, beta, gamma = KernelParams(x, a).angles
    b = CircuitBuilder(LOGICAL_SITES, zone=range(5), name="logical_kernel")
    b.extend(code422.prepare_logical_00())
    b.move_out(3)
    b.gate("GlobalX")
    b.move_in(ANCILLA)
    b.mark("before_U")
    b.gate("GlobalH")
    b.gate("GlobalZ")
    b.gate("CZ", 0, ANCILLA).gate("CZ", 2, ANCILLA)
    b.gate("GlobalRX", angle=-alpha / 2)
    b.gate("Z", ANCILLA)
    b.mark("mid_proxy_alpha")
    b.gate("GlobalRX", angle=alpha / 2)
    b.gate("CZ", 0, ANCILLA).gate("CZ", 1, ANCILLA)
    b.gate("GlobalRX", angle=beta / 2)
    b.gate("Z", ANCILLA)
    b.mark("mid_proxy_beta")
    b.gate("GlobalRX", angle=-beta / 2)
    b.gate("CZ", 1, ANCILLA).gate("CZ", 0, ANCILLA)
    b.gate("GlobalRX", angle=-gamma / 2)
    b.gate("Z", ANCILLA)
    b.mark("mid_proxy_gamma")
    b.gate("GlobalRX", angle=gamma / 2)
    b.gate("CZ", 2, ANCILLA).gate("CZ", 0, ANCILLA)
    b.gate("GlobalH")
    b.mark("before_measure")
    b.measure(*range(LOGICAL_SITES))
    return b.build()


def build_logical_reference(x: float, a: float) -> Circuit:
    """Unoptimised encoded circuit: flagged prep, proxy rotations and data SWAPs."""
    alpha, beta, gamma = KernelParams(x, a).angles
    b = CircuitBuilder(LOGICAL_SITES, name="logical_reference")
    b.extend(code422.prepare_logical_00_reference())
    b.mark("after_prep")
    to_anc = [0, 1, 2, 3, ANCILLA]
    for i, theta in enumerate((alpha, beta, gamma)):
        if i:
            b.gate("SWAP", 0, 1)
        b.extend(code422.proxy_phase((0, 2), theta), site_map=to_anc)
    b.measure(*range(LOGICAL_SITES))
    return b.build()


# ------------------------------------------------------------- evaluation


def noiseless_distribution(circuit: Circuit, mode: str = "density") -> np.ndarray:
    """Record probabilities on the measured sites (index = record as binary)."""
    state = run_density(circuit) if mode == "density" else run_pure(circuit)
    return record_distribution(state, circuit.measured_sites)


def physical_p00(circuit: Circuit, mode: str = "density") -> float:
    return float(noiseless_distribution(circuit, mode)[0])


def logical_p00(circuit: Circuit, mode: str = "density") -> float:
    dist, _ = code422.decoded_distribution(noiseless_distribution(circuit, mode))
    return dist[(0, 0)]


def check_native(circuit: Circuit) -> list[int]:
    """Indices of gates outside the native set (empty when conformant)."""
    return [i for i, ins in enumerate(circuit.instructions) if isinstance(ins, Gate) and ins.kind not in NATIVE_KINDS]


@dataclass(frozen=True)
class CompilationReport:
    max_deviation: float
    worst_point: tuple[float, float] | None
    n_points: int

    def ok(self, tol: float = 1e-9) -> bool:
        return self.max_deviation < tol


CircuitSource = Circuit | Callable[[float, float], Circuit]


def verify_compilation(
    compiled: CircuitSource,
    reference: CircuitSource,
    grid: Sequence[tuple[float, float]] | None = None,
    mode: str = "pure",
) -> CompilationReport:
    """Compare noiseless outcome distributions on the measured sites.

    Either argument may be a fixed circuit or a builder ``f(x, a)``; with
    builders the comparison runs over ``grid`` (default: 5 x 5 on [0, 1]).
    Global phases never enter outcome distributions.
    """
    if isinstance(compiled, Circuit) and isinstance(reference, Circuit):
        points = [None]
    else:
        points = list(grid) if grid is not None else [(x, a) for x in np.linspace(0, 1, 5) for a in np.linspace(0, 1, 5)]
    worst, worst_pt = 0.0, None
    for pt in points:
        c = compiled if isinstance(compiled, Circuit) else compiled(*pt)
        r = reference if isinstance(reference, Circuit) else reference(*pt)
        if len(c.measured_sites) != len(r.measured_sites):
            raise ValueError("circuits measure different numbers of sites")
        dev = float(np.max(np.abs(noiseless_distribution(c, mode) - noiseless_distribution(r, mode))))
        if dev > worst or worst_pt is None:
            worst, worst_pt = dev, pt
    return CompilationReport(worst, worst_pt, len(points))


def anchor_names(mode: str) -> list[str]:
    circ = build_physical_kernel(0.0, 0.0) if mode == "physical" else build_logical_kernel(0.0, 0.0)
    return sorted(circ.anchor_map)


__all__ = [
    "CENTERS",
    "CompilationReport",
    "KernelParams",
    "Measure",
    "build_logical_kernel",
    "build_logical_reference",
    "build_physical_kernel",
    "build_reference_kernel",
    "build_u",
    "check_native",
    "kernel_closed_form",
    "kernel_closed_form_dx",
    "logical_p00",
    "noiseless_distribution",
    "physical_p00",
    "verify_compilation",
    "FLAG",
]
