"""Command-line entry point.

Every command resolves its flags into a JSON configuration, runs from that
configuration alone and records it in ``manifest.json`` next to its
outputs, so ``kernelde rerun`` can repeat a run byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from kernelde import desolve, expr, kernel, svg
from kernelde.circuits import CENTERS, anchor_names
from kernelde.code422 import RecordError
from kernelde.desolve import DEProblem, ProblemError, SolveError
from kernelde.noise import NoiseError, NoiseModel, default_noise_model

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
MANIFEST = "manifest.json"
SEED_ENV = "KERNELDE_SEED"


class UsageError(Exception):
    pass


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ----------------------------------------------------------- config helpers


def _resolve_noise(spec: str | None, default: str) -> dict | None:
    spec = default if spec is None else spec
    if spec == "none":
        return None
    if spec == "default":
        return default_noise_model().to_dict()
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"noise file not found: {spec}")
    try:
        return NoiseModel.load(path).to_dict()
    except (NoiseError, ValueError, KeyError) as exc:
        raise UsageError(f"{spec}: {exc}") from None


def _resolve_seed(flag: int | None, noise: dict | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if noise is not None and noise.get("seed") is not None:
        return int(noise["seed"])
    return 0


def _noise(cfg: dict) -> NoiseModel | None:
    return None if cfg["noise"] is None else NoiseModel.from_dict(cfg["noise"])


def _grid(cfg: dict) -> np.ndarray:
    if cfg["grid"] < 2:
        raise UsageError("--grid needs at least 2 points")
    return kernel.default_grid(cfg["grid"])


def _modes(text: str, allowed=kernel.MODES) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in allowed]
    if not modes or bad:
        raise UsageError(f"modes must be a comma list drawn from {','.join(allowed)}")
    return list(dict.fromkeys(modes))


def _dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else format(float(v), ".9g")


class _Output:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []

    def write(self, name: str, text: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        path.write_text(text, encoding="utf-8", newline="")
        self.files.append(name)
        return path

    def manifest(self, command: str, cfg: dict) -> None:
        data = {
            "command": command,
            "config": cfg,
            "seed": cfg.get("seed"),
            "version": _version(),
            "timestamp_utc": _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "outputs": sorted(self.files),
        }
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / MANIFEST).write_text(_dump_json(data), encoding="utf-8", newline="")


# ------------------------------------------------------------------- plots


def _curve_panels(curves_by_mode: dict[str, list[kernel.KernelCurve]]) -> str:
    """One panel per center: markers are estimates, lines the closed form mapped onto them."""
    centers = sorted({c.a for cs in curves_by_mode.values() for c in cs})
    fine = np.linspace(0.0, 1.0, 201)
    panels = []
    for a in centers:
        p = svg.Panel(f"a = {a:g}")
        for i, (mode, curves) in enumerate(curves_by_mode.items()):
            color = svg.PALETTE[i % len(svg.PALETTE)]
            for c in curves:
                if c.a != a:
                    continue
                fit = kernel.fit_affine(c.ideal(), c.values)
                ideal = kernel.kernel_closed_form(fine, a)
                line = ideal if fit.degenerate else fit.scale * ideal + fit.shift
                p.series.append(svg.Series(f"{mode} ideal (rescaled)", fine, line, "line", color))
                p.series.append(svg.Series(f"{mode} estimate", c.x, c.kappa, "markers", color))
        panels.append(p)
    return svg.panels(panels)


# ---------------------------------------------------------------- commands


def _sweep(cfg: dict, mode: str, injection=None) -> list[kernel.KernelCurve]:
    return kernel.sweep_curves(
        mode,
        CENTERS,
        _grid(cfg),
        cfg["shots"],
        _noise(cfg),
        cfg["seed"],
        injection,
        cfg.get("backend", "exact"),
        cfg.get("jobs", 1),
    )


def _curve_summary(curves: list[kernel.KernelCurve]) -> dict:
    out = {"curves": []}
    for c in curves:
        d = kernel.distortion(c)
        out["curves"].append({
            "a": c.a,
            "rmse_after_rescale": d.rmse_after_rescale,
            "scale": d.scale,
            "shift": d.shift,
            "acceptance": c.acceptance(),
        })
    out["median_rmse_after_rescale"] = kernel.median_distortion(curves)
    if curves and curves[0].mode == "logical":
        out["postselection"] = kernel.pooled_postselection(curves).as_dict()
    return out


def run_kernel(cfg: dict, out: _Output) -> None:
    by_mode, summary = {}, {}
    for mode in cfg["modes"]:
        curves = _sweep(cfg, mode)
        by_mode[mode] = curves
        out.write(f"kernel_{mode}.csv", kernel.curves_to_csv(curves))
        summary[mode] = _curve_summary(curves)
    out.write("kernel_summary.json", _dump_json(summary))
    out.write("kernel.svg", _curve_panels(by_mode))


def _benchmark_bases(cfg: dict, out: _Output) -> dict[str, desolve.Basis]:
    bases = {}
    for mode in cfg["modes"]:
        if mode == "ideal":
            bases[mode] = desolve.ClosedFormBasis()
            continue
        curves = _sweep(cfg, mode)
        out.write(f"kernel_{mode}.csv", kernel.curves_to_csv(curves))
        bases[mode] = desolve.SplineBasis.from_curves(curves, cfg["lam"])
    return bases


def run_bench(cfg: dict, out: _Output) -> None:
    if cfg["n"] < 1:
        raise UsageError("--n must be at least 1")
    problems = desolve.benchmark_problems(cfg["n"], cfg["seed"], cfg.get("f0"))
    rows = desolve.run_benchmark(problems, _benchmark_bases(cfg, out))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("index", "mode", "residual", "error"))
    for r in rows:
        w.writerow((r.index, r.mode, _fmt(r.residual), r.error))
    out.write("bench_residuals.csv", buf.getvalue())
    out.write("bench_summary.json", _dump_json(desolve.summarize(rows)))
    groups = {m: [r.residual for r in rows if r.mode == m] for m in cfg["modes"]}
    out.write("bench_hist.svg", svg.histogram("residual", groups))


def run_inject(cfg: dict, out: _Output) -> None:
    by_mode, discard = {}, {}
    for mode in cfg["modes"]:
        injection = kernel.Injection.rotation(cfg["axis"], cfg["angle_rad"], cfg["location"])
        curves = _sweep(cfg, mode, injection)
        by_mode[mode] = curves
        out.write(f"inject_{mode}.csv", kernel.curves_to_csv(curves))
        entry = {"anchor": injection.anchor_for(mode), "median_rmse_after_rescale": kernel.median_distortion(curves)}
        entry["peaks"] = {format(c.a, "g"): float(c.grid[int(np.argmax(c.values))]) for c in curves}
        if mode == "logical":
            entry.update(kernel.pooled_postselection(curves).as_dict())
        discard[mode] = entry
    out.write("discard.json", _dump_json(discard))
    out.write("inject.svg", _curve_panels(by_mode))


def _load_basis(spec: str, lam: float) -> desolve.Basis:
    if spec == "ideal":
        return desolve.ClosedFormBasis()
    if not spec.startswith("csv:"):
        raise UsageError("--basis must be 'ideal' or 'csv:<path>'")
    path = Path(spec[4:])
    if not path.is_file():
        raise UsageError(f"basis file not found: {path}")
    try:
        curves = kernel.read_curves_csv(path)
    except kernel.KernelError as exc:
        raise UsageError(str(exc)) from None
    modes = {c.mode for c in curves}
    if len(modes) != 1:
        raise UsageError(f"{path}: basis CSV must hold one mode, found {sorted(modes)}")
    try:
        return desolve.SplineBasis.from_curves(curves, lam)
    except (ProblemError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def run_solve(cfg: dict, out: _Output) -> None:
    try:
        problem = DEProblem.from_dict(cfg["problem"])
    except (ProblemError, expr.ExpressionError) as exc:
        raise UsageError(str(exc)) from None
    if cfg.get("f0") is not None:
        problem = problem.with_boundary(cfg["f0"])
    basis = _load_basis(cfg["basis"], cfg["lam"])
    if cfg["solver"] == "linear":
        model, info = desolve.solve_linear(problem, basis)
        diag = {"rank": info.rank, "rank_deficient": info.rank_deficient, "singular_values": list(info.singular_values)}
    else:
        model, trace = desolve.solve_gradient(problem, basis, steps=cfg["steps"], rate=cfg["rate"])
        diag = {"steps_run": len(trace.losses) - 1, "best_step": trace.best_step}
    x = np.linspace(0.0, 1.0, desolve.RESIDUAL_GRID)
    f, df = model(x), model.derivative(x)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("x", "f", "df"))
    for row in zip(x, f, df):
        w.writerow([_fmt(v) for v in row])
    out.write("solution.csv", buf.getvalue())
    result = {
        "weights": list(model.weights),
        "offset": model.offset,
        "centers": list(basis.centers),
        "loss": desolve.loss(model, problem),
        "solver": cfg["solver"],
        **diag,
    }
    exact = problem.exact
    if cfg.get("exact"):
        try:
            ex = expr.parse(cfg["exact"], ("x",))
        except expr.ExpressionError as exc:
            raise UsageError(str(exc)) from None
        exact = lambda xs: np.broadcast_to(ex(x=xs), np.shape(xs))
    if exact is not None:
        result["residual"] = desolve.residual(model, exact)
    out.write("params.json", _dump_json(result))


def run_noise(cfg: dict, out: _Output) -> None:
    out.write(cfg["name"], NoiseModel.from_dict(cfg["noise"]).dumps())


def run_generate(cfg: dict, out: _Output) -> None:
    problem = desolve.generate_benchmark_de(cfg["seed"], cfg["index"], f0=cfg.get("f0"))
    out.write(cfg["name"], problem.dumps())


RUNNERS = {
    "kernel": run_kernel,
    "bench": run_bench,
    "inject": run_inject,
    "solve": run_solve,
    "noise": run_noise,
    "generate": run_generate,
}
NO_MANIFEST = ("noise", "generate")


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser, noise_default: str) -> None:
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help=f"overrides ${SEED_ENV} and the noise file seed")
    p.add_argument("--noise", default=None, help=f"noise JSON path, 'default' or 'none' (default: {noise_default})")
    p.add_argument("--ideal", action="store_true", help="same as --noise none")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--grid", type=int, default=kernel.DEFAULT_GRID_POINTS, help="points on [0, 1]")
    p.add_argument("--shots", type=int, default=kernel.DEFAULT_SHOTS, help="(accepted) shots per point")
    p.add_argument("--backend", choices=("exact", "trajectory"), default="exact")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernelde", description="Kernel estimation and kernel-basis DE solving.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernel", help="sweep kernel curves")
    _common(p, "default")
    p.add_argument("--mode", default="ideal,physical,logical", help="comma list of ideal, physical, logical")

    p = sub.add_parser("bench", help="benchmark generated DEs per basis mode")
    _common(p, "default")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--modes", default="physical,logical")
    p.add_argument("--lam", type=float, default=desolve.DEFAULT_LAM)
    p.add_argument("--f0", type=float, default=None, help="override every boundary value")

    p = sub.add_parser("inject", help="kernel curves with an injected rotation")
    _common(p, "none")
    p.add_argument("--angle-rad", type=float, required=True)
    p.add_argument("--axis", default="-Y", help="X, Y or Z with optional sign")
    p.add_argument("--location", default=None, help="anchor name (default: documented anchor per mode)")
    p.add_argument("--modes", default="physical,logical")

    p = sub.add_parser("solve", help="solve one DE problem file")
    p.add_argument("--problem", required=True)
    p.add_argument("--basis", default="ideal", help="'ideal' or 'csv:<path>'")
    p.add_argument("--lam", type=float, default=desolve.DEFAULT_LAM)
    p.add_argument("--exact", default=None, help="exact solution expression in x")
    p.add_argument("--f0", type=float, default=None)
    p.add_argument("--solver", choices=("linear", "gradient"), default="linear")
    p.add_argument("--steps", type=int, default=10_000)
    p.add_argument("--rate", type=float, default=0.05)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("noise", help="write a noise model JSON")
    p.add_argument("path", help="file to write")
    p.add_argument("--noise", default="default", help="'default', 'none' or a file to normalise")

    p = sub.add_parser("generate", help="write a random benchmark DE problem file")
    p.add_argument("path", help="file to write")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--f0", type=float, default=None, help="override the boundary value")

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the manifest's)")
    return parser


def _sweep_config(args, noise_default: str) -> dict:
    noise = _resolve_noise("none" if args.ideal else args.noise, noise_default)
    if args.shots < 1:
        raise UsageError("--shots must be positive")
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    return {
        "noise": noise,
        "seed": _resolve_seed(args.seed, noise),
        "grid": args.grid,
        "shots": args.shots,
        "backend": args.backend,
        "jobs": args.jobs,
    }


def make_config(args) -> tuple[str, dict, Path]:
    cmd = args.command
    if cmd == "kernel":
        cfg = _sweep_config(args, "default")
        cfg["modes"] = _modes(args.mode)
    elif cmd == "bench":
        cfg = _sweep_config(args, "default")
        cfg.update(n=args.n, modes=_modes(args.modes), lam=args.lam, f0=args.f0)
    elif cmd == "inject":
        cfg = _sweep_config(args, "none")
        modes = _modes(args.modes, ("physical", "logical"))
        if args.location is not None:
            for m in modes:
                if args.location not in anchor_names(m):
                    raise UsageError(f"unknown anchor {args.location!r} for {m}; known: {', '.join(anchor_names(m))}")
        try:
            kernel.Injection.rotation(args.axis, args.angle_rad)
        except (NoiseError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        cfg.update(modes=modes, angle_rad=args.angle_rad, axis=args.axis, location=args.location)
    elif cmd == "solve":
        path = Path(args.problem)
        if not path.is_file():
            raise UsageError(f"problem file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            DEProblem.from_dict(data)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: not valid JSON: {exc}") from None
        except (ProblemError, expr.ExpressionError) as exc:
            raise UsageError(f"{path}: {exc}") from None
        cfg = {
            "problem": data,
            "basis": args.basis,
            "lam": args.lam,
            "exact": args.exact,
            "f0": args.f0,
            "solver": args.solver,
            "steps": args.steps,
            "rate": args.rate,
            "seed": _resolve_seed(args.seed, None),
        }
        if cfg["basis"] != "ideal":
            _load_basis(cfg["basis"], cfg["lam"])
    elif cmd == "noise":
        path = Path(args.path)
        return cmd, {"noise": _resolve_noise(args.noise, "default") or NoiseModel.zero().to_dict(), "name": path.name}, path.parent
    elif cmd == "generate":
        path = Path(args.path)
        cfg = {"seed": _resolve_seed(args.seed, None), "index": args.index, "f0": args.f0, "name": path.name}
        return cmd, cfg, path.parent
    else:
        raise UsageError(f"unknown command {cmd}")
    out = Path(args.out) if args.out else Path("out") / cmd
    return cmd, cfg, out


def execute(command: str, cfg: dict, out_dir: Path) -> list[str]:
    out = _Output(out_dir)
    RUNNERS[command](cfg, out)
    if command not in NO_MANIFEST:
        out.manifest(command, cfg)
    return out.files


def _rerun(args) -> tuple[str, dict, Path]:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST
    if not path.is_file():
        raise UsageError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        command, cfg = data["command"], data["config"]
    except (json.JSONDecodeError, KeyError, TypeError):
        raise UsageError(f"{path}: not a run manifest") from None
    if command not in RUNNERS:
        raise UsageError(f"{path}: unknown command {command!r}")
    return command, cfg, Path(args.out) if args.out else path.parent


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        command, cfg, out_dir = _rerun(args) if args.command == "rerun" else make_config(args)
        files = execute(command, cfg, out_dir)
    except UsageError as exc:
        print(f"kernelde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoiseError, ProblemError, expr.ExpressionError) as exc:
        print(f"kernelde: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (kernel.KernelError, SolveError, RecordError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"kernelde: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for name in files:
        print(out_dir / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
