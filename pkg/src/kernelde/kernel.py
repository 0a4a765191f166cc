"""Kernel estimation over grids of x for fixed centers.

Sampling is driven by exact outcome distributions: every point's noisy
circuit is evolved once in density mode, and shots are drawn from the
resulting record distribution with a counter-based stream keyed by the
seed, the mode and the bit patterns of ``(x, a)``.  Shot ``i`` therefore
reads the same uniform no matter how many shots are requested or which
worker handles the point.  A trajectory backend that unravels the noise
shot by shot is available for cross-checks.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from kernelde import code422, rng
from kernelde.circuits import CENTERS, build_logical_kernel, build_physical_kernel, kernel_closed_form
from kernelde.ir import Circuit
from kernelde.noise import NoiseModel, apply_noise, axis_rotation
from kernelde.qsim import Gate, record_distribution, run_density, sample_records

MODES = ("ideal", "physical", "logical")
DEFAULT_GRID_POINTS = 41
DEFAULT_SHOTS = 100
MAX_OVERSAMPLING = 100
DOCUMENTED_ANCHORS = {"physical": "mid_beta", "logical": "mid_proxy_beta"}
CSV_HEADER = ("mode", "a", "x", "kappa", "shots_requested", "shots_accepted")

_MODE_IDS = {"ideal": 0, "physical": 1, "logical": 2}


class KernelError(RuntimeError):
    pass


def default_grid(n: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


# --------------------------------------------------------------- circuits


@dataclass(frozen=True)
class Injection:
    """An extra gate inserted at a named anchor after noise lowering.

    ``anchor=None`` picks the documented landmark of each mode.
    """

    gate: Gate
    anchor: str | None = None

    @classmethod
    def rotation(cls, axis: str, angle: float, anchor: str | None = None) -> "Injection":
        return cls(axis_rotation(axis, angle), anchor)

    def anchor_for(self, mode: str) -> str:
        return self.anchor or DOCUMENTED_ANCHORS[mode]


def kernel_circuit(mode: str, x: float, a: float, noise: NoiseModel | None = None, injection: Injection | None = None) -> Circuit:
    if mode == "physical":
        circ = build_physical_kernel(x, a)
    elif mode == "logical":
        circ = build_logical_kernel(x, a)
    else:
        raise KernelError(f"no circuit for mode {mode!r}")
    if noise is not None and not noise.is_zero():
        circ = apply_noise(circ, noise)
    if injection is not None:
        circ = circ.insert(circ.anchor(injection.anchor_for(mode)), injection.gate)
    return circ


@lru_cache(maxsize=4096)
def _cached_distribution(mode: str, x: float, a: float, noise_json: str | None, injection: Injection | None) -> np.ndarray:
    noise = NoiseModel.loads(noise_json) if noise_json is not None else None
    circ = kernel_circuit(mode, x, a, noise, injection)
    probs = record_distribution(run_density(circ), circ.measured_sites)
    probs = np.clip(probs.real, 0.0, None)
    probs /= probs.sum()
    probs.setflags(write=False)
    return probs


def outcome_distribution(mode: str, x: float, a: float, noise: NoiseModel | None = None, injection: Injection | None = None) -> np.ndarray:
    """Exact record probabilities (index = record read as a binary number)."""
    key = None if noise is None or noise.is_zero() else noise.dumps()
    return _cached_distribution(mode, float(x), float(a), key, injection)


def exact_kernel(mode: str, x: float, a: float, noise: NoiseModel | None = None, injection: Injection | None = None) -> float:
    """Infinite-shot kernel estimate; logical mode conditions on acceptance."""
    if mode == "ideal":
        return float(kernel_closed_form(x, a))
    probs = outcome_distribution(mode, x, a, noise, injection)
    if mode == "physical":
        return float(probs[0])
    dist, acc = code422.decoded_distribution(probs)
    if acc <= 0:
        raise KernelError(f"no accepted records at x={x}, a={a}")
    return float(dist[(0, 0)])


# --------------------------------------------------------------- sampling


@dataclass(frozen=True)
class PointEstimate:
    x: float
    a: float
    kappa: float
    shots_requested: int
    shots_accepted: int
    flagged: int = 0
    parity_rejected: int = 0


def _float_label(v: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(v)))[0]


def point_stream(seed: int, mode: str, x: float, a: float) -> np.random.Generator:
    return rng.stream(seed, _MODE_IDS[mode], _float_label(a), _float_label(x))


_ACCEPT = np.array([r.accepted for r in code422._DECODE_TABLE])
_LOGICAL00 = np.array([r.accepted and r.logical_bits == (0, 0) for r in code422._DECODE_TABLE])
_FLAGGED = np.array([r.reject_reason in code422.FLAG_REASONS for r in code422._DECODE_TABLE])
_PARITY = np.array([r.reject_reason == "parity" for r in code422._DECODE_TABLE])


def _draw(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)


def _records_exact(probs: np.ndarray, gen: np.random.Generator, n: int) -> np.ndarray:
    return _draw(np.cumsum(probs), gen.random(n))


def _records_trajectory(circ: Circuit, seed: int, start: int, n: int, labels: tuple[int, ...]) -> np.ndarray:
    return np.array([int(r, 2) for r in sample_records(circ, seed, n, start, labels)], dtype=np.int64)


def estimate_kernel(
    mode: str,
    x: float,
    a: float,
    shots: int = DEFAULT_SHOTS,
    noise: NoiseModel | None = None,
    seed: int = 0,
    injection: Injection | None = None,
    backend: str = "exact",
) -> PointEstimate:
    """Sampled kernel value at one point.

    Physical mode reports the fraction of ``00`` records over ``shots``.
    Logical mode keeps drawing records until ``shots`` of them pass
    postselection and reports the fraction decoding to logical ``00``.
    """
    if mode not in MODES:
        raise KernelError(f"unknown mode {mode!r}; expected one of {MODES}")
    if shots <= 0:
        raise KernelError("shots must be positive")
    if backend not in ("exact", "trajectory"):
        raise KernelError(f"unknown backend {backend!r}")
    if mode == "ideal":
        return PointEstimate(x, a, float(kernel_closed_form(x, a)), 0, 0)
    if backend == "exact":
        probs = outcome_distribution(mode, x, a, noise, injection)
        gen = point_stream(seed, mode, x, a)

        def draw(start, n):
            return _records_exact(probs, gen, n)

    else:
        circ = kernel_circuit(mode, x, a, noise, injection)
        labels = (_MODE_IDS[mode], _float_label(a), _float_label(x))

        def draw(start, n):
            return _records_trajectory(circ, seed, start, n, labels)

    if mode == "physical":
        recs = draw(0, shots)
        return PointEstimate(x, a, float(np.mean(recs == 0)), shots, shots)

    accepted = hits = flagged = parity = drawn = 0
    limit = MAX_OVERSAMPLING * shots
    while accepted < shots:
        if drawn >= limit:
            rate = accepted / drawn
            raise KernelError(
                f"acceptance rate {rate:.4f} at x={x:.6g}, a={a:.6g}: only {accepted} of {shots} "
                f"accepted after {drawn} records"
            )
        need = shots - accepted
        batch = min(limit - drawn, max(need, int(need * 1.5) + 16))
        recs = draw(drawn, batch)
        acc_mask = _ACCEPT[recs]
        cum = np.cumsum(acc_mask)
        if cum[-1] >= need:
            cut = int(np.searchsorted(cum, need)) + 1
            recs, acc_mask = recs[:cut], acc_mask[:cut]
        drawn += len(recs)
        accepted += int(acc_mask.sum())
        hits += int(_LOGICAL00[recs].sum())
        flagged += int(_FLAGGED[recs].sum())
        parity += int(_PARITY[recs].sum())
    return PointEstimate(x, a, hits / accepted, drawn, accepted, flagged, parity)


# ------------------------------------------------------------------ curves


@dataclass(frozen=True)
class KernelCurve:
    mode: str
    a: float
    grid: tuple[float, ...]
    values: tuple[float, ...]
    shots_requested: tuple[int, ...]
    shots_accepted: tuple[int, ...]
    flagged: tuple[int, ...] = ()
    parity_rejected: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.grid)
        for name in ("values", "shots_requested", "shots_accepted"):
            if len(getattr(self, name)) != n:
                raise KernelError(f"{name} has {len(getattr(self, name))} entries for {n} grid points")
        if any(not 0 <= v <= 1 for v in self.values):
            raise KernelError("kernel values must lie in [0, 1]")
        if any(acc > req for acc, req in zip(self.shots_accepted, self.shots_requested)):
            raise KernelError("more accepted shots than requested")

    @classmethod
    def from_points(cls, mode: str, a: float, points: Sequence[PointEstimate]) -> "KernelCurve":
        return cls(
            mode,
            float(a),
            tuple(p.x for p in points),
            tuple(p.kappa for p in points),
            tuple(p.shots_requested for p in points),
            tuple(p.shots_accepted for p in points),
            tuple(p.flagged for p in points),
            tuple(p.parity_rejected for p in points),
        )

    @property
    def x(self) -> np.ndarray:
        return np.asarray(self.grid)

    @property
    def kappa(self) -> np.ndarray:
        return np.asarray(self.values)

    def ideal(self) -> np.ndarray:
        return kernel_closed_form(self.x, self.a)

    def acceptance(self) -> float:
        req = sum(self.shots_requested)
        return sum(self.shots_accepted) / req if req else 1.0

    def postselection(self) -> code422.PostselectionStats:
        if not self.flagged:
            raise KernelError("curve carries no postselection counts")
        return code422.stats_from_counts(sum(self.flagged), sum(self.parity_rejected), sum(self.shots_accepted))


def pooled_postselection(curves: Sequence[KernelCurve]) -> code422.PostselectionStats:
    return code422.stats_from_counts(
        sum(sum(c.flagged) for c in curves),
        sum(sum(c.parity_rejected) for c in curves),
        sum(sum(c.shots_accepted) for c in curves),
    )


def _point_task(args):
    mode, x, a, shots, noise_json, seed, injection, backend = args
    noise = NoiseModel.loads(noise_json) if noise_json is not None else None
    return estimate_kernel(mode, x, a, shots, noise, seed, injection, backend)


def sweep_curves(
    mode: str,
    centers: Sequence[float] = CENTERS,
    grid: Sequence[float] | None = None,
    shots: int = DEFAULT_SHOTS,
    noise: NoiseModel | None = None,
    seed: int = 0,
    injection: Injection | None = None,
    backend: str = "exact",
    jobs: int = 1,
) -> list[KernelCurve]:
    """One curve per center; results do not depend on ``jobs``."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(grid > 1):
        raise KernelError("grid points must lie in [0, 1]")
    noise_json = None if noise is None or noise.is_zero() else noise.dumps()
    tasks = [(mode, float(x), float(a), shots, noise_json, seed, injection, backend) for a in centers for x in grid]
    if jobs > 1 and mode != "ideal":
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_point_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        points = [_point_task(t) for t in tasks]
    n = len(grid)
    return [KernelCurve.from_points(mode, a, points[i * n : (i + 1) * n]) for i, a in enumerate(centers)]


def exact_curves(
    mode: str,
    centers: Sequence[float] = CENTERS,
    grid: Sequence[float] | None = None,
    noise: NoiseModel | None = None,
    injection: Injection | None = None,
) -> list[KernelCurve]:
    """Infinite-shot curves (no shot counts)."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    out = []
    for a in centers:
        vals = tuple(min(max(exact_kernel(mode, float(x), float(a), noise, injection), 0.0), 1.0) for x in grid)
        zeros = (0,) * len(grid)
        out.append(KernelCurve(mode, float(a), tuple(float(x) for x in grid), vals, zeros, zeros))
    return out


# -------------------------------------------------------------- distortion


@dataclass(frozen=True)
class DistortionReport:
    """Best affine map ``scale * estimate + shift`` onto the ideal curve."""

    rmse_after_rescale: float
    scale: float
    shift: float
    degenerate: bool = False


def fit_affine(estimate: Sequence[float], ideal: Sequence[float]) -> DistortionReport:
    est = np.asarray(estimate, dtype=float)
    ref = np.asarray(ideal, dtype=float)
    if est.shape != ref.shape:
        raise KernelError("estimate and ideal curves differ in length")
    if est.size < 3:
        raise KernelError("distortion needs at least 3 points")
    centred = est - est.mean()
    var = float(centred @ centred)
    if var <= 1e-24 * est.size:
        shift = float(ref.mean())
        rmse = float(np.sqrt(np.mean((ref - shift) ** 2)))
        return DistortionReport(rmse, 0.0, shift, degenerate=True)
    scale = float(centred @ (ref - ref.mean()) / var)
    shift = float(ref.mean() - scale * est.mean())
    rmse = float(np.sqrt(np.mean((scale * est + shift - ref) ** 2)))
    return DistortionReport(rmse, scale, shift)


def distortion(curve: KernelCurve) -> DistortionReport:
    """Residual RMSE after the least-squares rescale and shift onto the closed form."""
    return fit_affine(curve.values, curve.ideal())


def median_distortion(curves: Sequence[KernelCurve]) -> float:
    return float(np.median([distortion(c).rmse_after_rescale for c in curves]))


# -------------------------------------------------------------------- CSV


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def curves_to_csv(curves: Sequence[KernelCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in curves:
        for x, v, req, acc in zip(c.grid, c.values, c.shots_requested, c.shots_accepted):
            w.writerow([c.mode, _fmt(c.a), _fmt(x), _fmt(v), req, acc])
    return buf.getvalue()


def write_curves_csv(path: str | Path, curves: Sequence[KernelCurve]) -> None:
    Path(path).write_text(curves_to_csv(curves), encoding="utf-8", newline="")


def read_curves_csv(path: str | Path) -> list[KernelCurve]:
    """Parse a curve CSV back into curves grouped by ``(mode, a)`` in file order."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise KernelError(f"{path}: expected header {','.join(CSV_HEADER)}")
    groups: dict[tuple[str, float], list] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise KernelError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
        try:
            mode, a, x, k, req, acc = row[0], float(row[1]), float(row[2]), float(row[3]), int(row[4]), int(row[5])
        except ValueError as exc:
            raise KernelError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in (a, x, k)):
            raise KernelError(f"{path}:{lineno}: non-finite value")
        groups.setdefault((mode, a), []).append((x, k, req, acc))
    curves = []
    for (mode, a), pts in groups.items():
        pts.sort()
        xs, ks, reqs, accs = zip(*pts)
        curves.append(KernelCurve(mode, a, xs, ks, reqs, accs))
    return curves
