"""Differential-equation solving with kernel regression bases.

A trial function is ``f(x) = c + sum_i w_i k_i(x)`` where ``k_i`` are kernel
curves centred at ``a_i``.  Parameters are chosen to minimise the mean
squared operator residual on collocation points plus a weighted boundary
penalty.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.interpolate import BSpline, make_interp_spline, make_smoothing_spline

from kernelde import expr, rng
from kernelde.circuits import CENTERS, kernel_closed_form, kernel_closed_form_dx

BOUNDARY_WEIGHT = 10.0
DEFAULT_LAM = 1e-3
DEFAULT_COLLOCATION = 100
RESIDUAL_GRID = 201
DIVERGENCE_LOSS = 1e6
MIN_BASIS_POINTS = 10


class SolveError(RuntimeError):
    pass


class ProblemError(ValueError):
    pass


# ----------------------------------------------------------------- splines


@dataclass(frozen=True, eq=False)
class SmoothingSpline:
    """Cubic spline through sampled data with its analytic derivative.

    ``lam > 0`` minimises ``sum (y_j - s(x_j))^2 + lam * int s''^2``;
    ``lam == 0`` interpolates with not-a-knot ends, which reproduces cubic
    polynomials exactly.
    """

    knots: np.ndarray
    spline: BSpline
    lam: float

    def __call__(self, x):
        return self.spline(np.asarray(x, dtype=float))

    def derivative(self, x):
        return self._deriv(np.asarray(x, dtype=float))

    @property
    def _deriv(self) -> BSpline:
        d = self.__dict__.get("_d")
        if d is None:
            d = self.spline.derivative()
            object.__setattr__(self, "_d", d)
        return d


def fit_spline(x: Sequence[float], y: Sequence[float], lam: float = DEFAULT_LAM) -> SmoothingSpline:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if x.size < 4:
        raise ValueError("a cubic spline needs at least 4 samples")
    steps = np.diff(x)
    if np.any(steps == 0):
        raise ValueError("duplicate x values")
    if np.any(steps < 0):
        raise ValueError("x values must be strictly increasing")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite sample values")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if lam == 0:
        spl = make_interp_spline(x, y, k=3)
    else:
        spl = make_smoothing_spline(x, y, lam=lam)
    return SmoothingSpline(x.copy(), spl, float(lam))


# ------------------------------------------------------------------- bases


class Basis(Protocol):
    centers: tuple[float, ...]

    def values(self, x: np.ndarray) -> np.ndarray: ...

    def derivatives(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ClosedFormBasis:
    """Exact kernel functions ``k(x, a_i)``."""

    centers: tuple[float, ...] = CENTERS

    def values(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([kernel_closed_form(x, a) for a in self.centers], axis=-1)

    def derivatives(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([kernel_closed_form_dx(x, a) for a in self.centers], axis=-1)


@dataclass(frozen=True, eq=False)
class SplineBasis:
    """Splines fitted to sampled kernel curves, one per center."""

    centers: tuple[float, ...]
    splines: tuple[SmoothingSpline, ...]

    @classmethod
    def from_samples(cls, grid, samples: Sequence[Sequence[float]], centers: Sequence[float] = CENTERS, lam: float = DEFAULT_LAM) -> "SplineBasis":
        grid = np.asarray(grid, dtype=float)
        if grid.size < MIN_BASIS_POINTS:
            raise ProblemError(f"basis grid has {grid.size} points; at least {MIN_BASIS_POINTS} needed")
        if len(samples) != len(centers):
            raise ProblemError("one sample curve per center is required")
        return cls(tuple(float(a) for a in centers), tuple(fit_spline(grid, s, lam) for s in samples))

    @classmethod
    def from_curves(cls, curves, lam: float = DEFAULT_LAM) -> "SplineBasis":
        """Build from :class:`kernelde.kernel.KernelCurve` objects sharing one grid."""
        curves = sorted(curves, key=lambda c: c.a)
        grids = {tuple(c.grid) for c in curves}
        if len(grids) != 1:
            raise ProblemError("kernel curves must share one x grid")
        grid = np.asarray(curves[0].grid)
        if grid[0] > 1e-9 or grid[-1] < 1 - 1e-9:
            raise ProblemError("kernel curves must cover [0, 1]")
        return cls.from_samples(grid, [c.values for c in curves], [c.a for c in curves], lam)

    def values(self, x):
        return np.stack([s(x) for s in self.splines], axis=-1)

    def derivatives(self, x):
        return np.stack([s.derivative(x) for s in self.splines], axis=-1)


@dataclass(frozen=True)
class AffineBasis:
    """``scale * k_i + shift`` for every function of an inner basis."""

    inner: Basis
    scale: float
    shift: float

    @property
    def centers(self):
        return self.inner.centers

    def values(self, x):
        return self.scale * self.inner.values(x) + self.shift

    def derivatives(self, x):
        return self.scale * self.inner.derivatives(x)


# ------------------------------------------------------------ trial model


@dataclass(frozen=True)
class TrialModel:
    """``f(x) = offset + sum_i weights[i] * basis_i(x)``."""

    weights: tuple[float, ...]
    offset: float
    basis: Basis = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != len(self.basis.centers):
            raise ValueError(f"{len(self.weights)} weights for {len(self.basis.centers)} basis functions")

    @property
    def params(self) -> np.ndarray:
        return np.array([*self.weights, self.offset])

    @classmethod
    def from_params(cls, params: Sequence[float], basis: Basis) -> "TrialModel":
        params = np.asarray(params, dtype=float)
        return cls(tuple(params[:-1]), float(params[-1]), basis)

    def __call__(self, x):
        return self.offset + self.basis.values(x) @ np.asarray(self.weights)

    def derivative(self, x):
        return self.basis.derivatives(x) @ np.asarray(self.weights)


# ----------------------------------------------------------------- problem

Operator = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class DEProblem:
    """First-order problem ``op(x, f, f') = 0`` on [0, 1] with ``f(x0) = f0``."""

    operator: Operator
    x0: float
    f0: float
    collocation: np.ndarray
    operator_source: str | None = None
    exact: Callable[[np.ndarray], np.ndarray] | None = None
    exact_source: str | None = None
    seed: int | None = None
    generating_params: tuple[float, ...] | None = None

    def __post_init__(self):
        pts = np.asarray(self.collocation, dtype=float)
        if pts.ndim != 1 or pts.size == 0:
            raise ProblemError("collocation points must be a non-empty 1-D array")
        if np.any(pts <= 0) or np.any(pts >= 1):
            raise ProblemError("collocation points must lie in (0, 1)")
        if not 0 <= self.x0 <= 1:
            raise ProblemError("boundary point must lie in [0, 1]")
        object.__setattr__(self, "collocation", pts)

    def with_boundary(self, f0: float) -> "DEProblem":
        """Same operator with a new boundary value; the exact solution no longer applies."""
        return DEProblem(
            self.operator, self.x0, float(f0), self.collocation, self.operator_source, None, None, self.seed,
            self.generating_params,
        )

    def to_dict(self) -> dict:
        if self.operator_source is None:
            raise ProblemError("only problems defined by an expression can be saved")
        out = {
            "operator": self.operator_source,
            "x0": self.x0,
            "f0": self.f0,
            "collocation_n": int(self.collocation.size),
            "seed": self.seed,
        }
        if self.exact_source is not None:
            out["exact"] = self.exact_source
        if self.generating_params is not None:
            out["generating_params"] = list(self.generating_params)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "DEProblem":
        if not isinstance(data, dict) or "operator" not in data:
            raise ProblemError("problem file needs an 'operator' expression")
        op = expr.parse(data["operator"], ("x", "f", "df"))
        exact_src = data.get("exact")
        exact = None
        if exact_src is not None:
            ex = expr.parse(exact_src, ("x",))
            exact = lambda x, _e=ex: np.broadcast_to(_e(x=x), np.shape(x)).astype(float)
        n = int(data.get("collocation_n", DEFAULT_COLLOCATION))
        if n < 1:
            raise ProblemError("collocation_n must be positive")
        params = data.get("generating_params")
        try:
            x0, f0 = float(data.get("x0", 0.0)), float(data["f0"])
        except (KeyError, TypeError, ValueError):
            raise ProblemError("problem file needs numeric 'x0' and 'f0'") from None
        return cls(
            operator=lambda x, f, df, _op=op: _op(x=x, f=f, df=df),
            x0=x0,
            f0=f0,
            collocation=collocation_points(n),
            operator_source=data["operator"],
            exact=exact,
            exact_source=exact_src,
            seed=data.get("seed"),
            generating_params=tuple(float(p) for p in params) if params is not None else None,
        )

    @classmethod
    def loads(cls, text: str) -> "DEProblem":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ProblemError(f"problem file is not valid JSON: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "DEProblem":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def collocation_points(n: int = DEFAULT_COLLOCATION) -> np.ndarray:
    """``n`` evenly spaced interior points of (0, 1)."""
    return np.linspace(0.0, 1.0, n + 2)[1:-1]


# ------------------------------------------------------------------- loss


def operator_residuals(model: TrialModel, problem: DEProblem) -> np.ndarray:
    x = problem.collocation
    return np.asarray(problem.operator(x, model(x), model.derivative(x)), dtype=float)


def loss(model: TrialModel, problem: DEProblem) -> float:
    """Mean squared operator residual plus ``10 * (f(x0) - f0)^2``."""
    r = operator_residuals(model, problem)
    bc = float(model(np.array([problem.x0]))[0]) - problem.f0
    return float(np.mean(r**2) + BOUNDARY_WEIGHT * bc**2)


@dataclass(frozen=True)
class SolveInfo:
    loss: float
    rank: int
    singular_values: tuple[float, ...]
    rank_deficient: bool


def _linear_system(problem: DEProblem, basis: Basis) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Affine form ``r(theta) = A theta + r0`` of the collocation residuals.

    The operator is probed at the zero parameter vector and at each unit
    vector; a random probe confirms it is affine in ``(f, f')``.
    """
    x = problem.collocation
    vals, ders = basis.values(x), basis.derivatives(x)
    n_par = vals.shape[1] + 1
    cols_f = np.column_stack([vals, np.ones(len(x))])
    cols_df = np.column_stack([ders, np.zeros(len(x))])

    def resid(theta):
        return np.asarray(problem.operator(x, cols_f @ theta, cols_df @ theta), dtype=float) * np.ones(len(x))

    r0 = resid(np.zeros(n_par))
    a_mat = np.column_stack([resid(e) - r0 for e in np.eye(n_par)])
    probe = rng.uniforms(0, n_par, 0x11AE) * 2 - 1
    if not np.allclose(resid(probe), a_mat @ probe + r0, rtol=1e-7, atol=1e-9):
        raise SolveError("operator is not linear in (f, df); use solve_gradient")
    b_row = np.append(basis.values(np.array([problem.x0]))[0], 1.0)
    return a_mat, r0, b_row, cols_f


def solve_linear(problem: DEProblem, basis: Basis) -> tuple[TrialModel, SolveInfo]:
    """Exact minimiser of the quadratic loss.

    The stacked least-squares system ``[A/sqrt(N); sqrt(10) b] theta =
    [-r0/sqrt(N); sqrt(10) f0]`` has the same normal equations as the loss;
    a rank-deficient system returns the minimum-norm minimiser.
    """
    a_mat, r0, b_row, _ = _linear_system(problem, basis)
    n = len(r0)
    lhs = np.vstack([a_mat / math.sqrt(n), math.sqrt(BOUNDARY_WEIGHT) * b_row])
    rhs = np.append(-r0 / math.sqrt(n), math.sqrt(BOUNDARY_WEIGHT) * problem.f0)
    theta, _, rank, sv = np.linalg.lstsq(lhs, rhs, rcond=None)
    model = TrialModel.from_params(theta, basis)
    info = SolveInfo(loss(model, problem), int(rank), tuple(float(s) for s in sv), int(rank) < lhs.shape[1])
    return model, info


def loss_gradient(problem: DEProblem, basis: Basis, params: Sequence[float]) -> np.ndarray:
    """Analytic gradient of the quadratic loss of a linear operator."""
    a_mat, r0, b_row, _ = _linear_system(problem, basis)
    theta = np.asarray(params, dtype=float)
    r = a_mat @ theta + r0
    bc = b_row @ theta - problem.f0
    return 2 * a_mat.T @ r / len(r) + 2 * BOUNDARY_WEIGHT * bc * b_row


@dataclass(frozen=True)
class DescentTrace:
    losses: tuple[float, ...]
    best_step: int


class DivergenceError(SolveError):
    def __init__(self, message: str, trace: DescentTrace):
        super().__init__(message)
        self.trace = trace


def solve_gradient(
    problem: DEProblem,
    basis: Basis,
    init: Sequence[float] | None = None,
    steps: int = 10_000,
    rate: float = 0.05,
    fd_step: float = 1e-6,
    tol: float = 1e-10,
) -> tuple[TrialModel, DescentTrace]:
    """Gradient descent with central finite-difference gradients.

    Returns the lowest-loss iterate.  Stops early once the gradient norm
    drops below ``tol``; raises :class:`DivergenceError` if the loss
    exceeds 1e6.
    """
    n_par = len(basis.centers) + 1
    theta = np.zeros(n_par) if init is None else np.asarray(init, dtype=float).copy()
    if theta.shape != (n_par,):
        raise ValueError(f"init must have {n_par} entries")

    def f(p):
        return loss(TrialModel.from_params(p, basis), problem)

    losses = [f(theta)]
    best, best_theta, best_step = losses[0], theta.copy(), 0
    eye = np.eye(n_par) * fd_step
    for step in range(1, steps + 1):
        grad = np.array([(f(theta + e) - f(theta - e)) / (2 * fd_step) for e in eye])
        if tol and np.linalg.norm(grad) < tol:
            break
        theta = theta - rate * grad
        cur = f(theta)
        losses.append(cur)
        if not math.isfinite(cur) or cur > DIVERGENCE_LOSS:
            raise DivergenceError(f"loss {cur:.3g} at step {step}; lower the rate", DescentTrace(tuple(losses), best_step))
        if cur < best:
            best, best_theta, best_step = cur, theta.copy(), step
    return TrialModel.from_params(best_theta, basis), DescentTrace(tuple(losses), best_step)


# --------------------------------------------------------------- benchmark


def _num(v: float) -> str:
    return repr(float(v))


def _kernel_expr(a: float) -> str:
    return f"cos(pi*(x - {_num(a)}))^2*cos(pi*(x^2 - {_num(a * a)}))^2"


def _kernel_dx_expr(a: float) -> str:
    return (
        f"(-pi*sin(2*pi*(x - {_num(a)}))*cos(pi*(x^2 - {_num(a * a)}))^2"
        f" - 2*pi*x*cos(pi*(x - {_num(a)}))^2*sin(2*pi*(x^2 - {_num(a * a)})))"
    )


def benchmark_solution(weights: Sequence[float], offset: float, centers: Sequence[float] = CENTERS):
    """The generating function and its derivative as numpy callables."""
    basis = ClosedFormBasis(tuple(centers))
    model = TrialModel(tuple(weights), offset, basis)
    return model, model.derivative


def generate_benchmark_de(
    seed: int, index: int = 0, collocation_n: int = DEFAULT_COLLOCATION, f0: float | None = None
) -> DEProblem:
    """Random member of the benchmark family ``f'/5 + f - g = 0``.

    ``w_i, c ~ U(-1, 1)``; ``h = c + sum w_i k(x, a_i)``; ``g = h'/5 + h``
    so ``h`` solves the problem exactly with ``f(0) = h(0)``.  A different
    ``f0`` adds ``(f0 - h(0)) exp(-5x)`` to the exact solution, which then
    leaves the span of the kernel basis.
    """
    draws = rng.uniforms(seed, 4, 0xDE, index) * 2 - 1
    weights, offset = tuple(float(v) for v in draws[:3]), float(draws[3])
    h, _ = benchmark_solution(weights, offset)
    h_src = " + ".join([_num(offset)] + [f"{_num(w)}*{_kernel_expr(a)}" for w, a in zip(weights, CENTERS)])
    dh_src = " + ".join(f"{_num(w)}*{_kernel_dx_expr(a)}" for w, a in zip(weights, CENTERS))
    g_src = f"({dh_src})/5 + {h_src}"
    operator_src = f"df/5 + f - ({g_src})"
    h0 = float(h(np.array([0.0]))[0])
    if f0 is not None and f0 != h0:
        h_src = f"{h_src} + {_num(f0 - h0)}*exp(-5*x)"
    data = {
        "operator": operator_src,
        "x0": 0.0,
        "f0": h0 if f0 is None else float(f0),
        "collocation_n": collocation_n,
        "seed": seed,
        "exact": h_src,
        "generating_params": [*weights, offset],
    }
    return DEProblem.from_dict(data)


def residual(model: TrialModel | Callable, exact: Callable, n: int = RESIDUAL_GRID) -> float:
    """RMSE against ``exact`` on ``n`` uniform points of [0, 1] over the range of ``exact``.

    Returns NaN when ``exact`` is constant on the grid.
    """
    x = np.linspace(0.0, 1.0, n)
    ref = np.asarray(exact(x), dtype=float)
    span = float(ref.max() - ref.min())
    if span <= 0:
        return math.nan
    return float(np.sqrt(np.mean((np.asarray(model(x)) - ref) ** 2)) / span)


@dataclass(frozen=True)
class BenchmarkRow:
    index: int
    mode: str
    residual: float
    error: str = ""


def benchmark_problems(n: int, seed: int, f0: float | None = None) -> list[DEProblem]:
    return [generate_benchmark_de(seed, i, f0=f0) for i in range(n)]


def run_benchmark(problems: Sequence[DEProblem], bases: dict[str, Basis]) -> list[BenchmarkRow]:
    """Solve every problem with every basis; solver failures are recorded, not raised."""
    rows = []
    for i, prob in enumerate(problems):
        for mode, basis in bases.items():
            try:
                model, _ = solve_linear(prob, basis)
                rows.append(BenchmarkRow(i, mode, residual(model, prob.exact)))
            except (SolveError, np.linalg.LinAlgError, FloatingPointError) as exc:
                rows.append(BenchmarkRow(i, mode, math.nan, str(exc) or type(exc).__name__))
    return rows


def summarize(rows: Sequence[BenchmarkRow]) -> dict[str, dict]:
    out = {}
    for mode in dict.fromkeys(r.mode for r in rows):
        vals = np.array([r.residual for r in rows if r.mode == mode and not r.error])
        vals = vals[np.isfinite(vals)]
        out[mode] = {
            "n": int(sum(1 for r in rows if r.mode == mode)),
            "failed": int(sum(1 for r in rows if r.mode == mode and r.error)),
            "mean": float(vals.mean()) if vals.size else math.nan,
            "median": float(np.median(vals)) if vals.size else math.nan,
        }
    return out
