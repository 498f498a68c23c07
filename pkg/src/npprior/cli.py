"""Command-line entry point: ``npprior {solve,analyze,sample,normdiag}``.

Exit codes: 0 success, 2 invalid configuration or input, 3 solver did not
converge (outputs are still written), 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from .density import (
    DivergenceKind,
    GridSpec,
    make_truncated_cauchy,
    make_truncated_normal,
    make_uniform,
    max_index_variance,
)
from .diagnostics import DEFAULT_BINS, mismatch_table, norm_overlap_grid
from .errors import NPPriorError
from .interpolant import midpoint_density
from .io import (
    DensityFileError,
    read_density,
    write_csv,
    write_density,
    write_samples_csv,
    write_samples_f64le,
)
from .optimizer import InitKind, SolverConfig, shape_report, solve_prior
from .sampler import Cauchy, GammaRadial, NonParametric, Normal, Uniform, sample

log = logging.getLogger("npprior")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4

PRIOR_SYNTAX = """\
prior syntax:
  uniform[:min,max]      default 0,1
  normal[:mu,sigma]      default 0,1
  cauchy[:x0,gamma]      default 0,1
  gamma[:theta]          uniform direction, squared radius ~ Gamma(1/2, theta); default theta = 2d
  PATH                   a density JSON file (sampled per coordinate)

for `analyze` the builtins are discretized on the [0,1] grid and default to
normal:0.5,0.1 and cauchy:0.5,0.1.
"""

# Config-file keys and the SolverConfig field each maps to.
CONFIG_KEYS = {
    "n": "n",
    "xi": "xi",
    "lambda": "lam",
    "kind": "kind",
    "max_iters": "max_iters",
    "max_fun_evals": "max_fun_evals",
    "rel_tol": "rel_tol",
    "restarts": "restarts",
    "init": "init",
    "init_bin": "init_bin",
    "init_mu": "init_mu",
    "init_sigma": "init_sigma",
    "seed": "seed",
    "eps": "eps",
}
DEFAULT_OUT = "npprior-out"


class UsageError(NPPriorError, ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    solver: SolverConfig
    out: Path


def _coerce(key: str, value):
    ints = {"n", "max_iters", "max_fun_evals", "restarts", "init_bin", "seed"}
    floats = {"xi", "lambda", "rel_tol", "init_mu", "init_sigma", "eps"}
    if value is None and key == "init_bin":
        return None
    try:
        if key in ints:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if key in floats:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"config key {key!r}: invalid value {value!r}") from None
    return str(value)


def _parse_init(value: str):
    """``delta:512`` style init strings carry the bin index after the colon."""
    text = str(value).strip().lower()
    if ":" in text:
        name, _, arg = text.partition(":")
        try:
            return name, int(arg)
        except ValueError:
            raise UsageError(f"init {value!r}: bin index must be an integer") from None
    return text, None


def build_run_config(file_values: dict | None, flag_values: dict) -> RunConfig:
    """Merge defaults, config file and flags (flags win), then validate."""
    merged: dict = {}
    for source in (file_values or {}, flag_values):
        for key, value in source.items():
            if value is None:
                continue
            if key != "out" and key not in CONFIG_KEYS:
                raise UsageError(f"unknown config key {key!r}")
            merged[key] = value

    out = Path(merged.pop("out", DEFAULT_OUT))
    kwargs = {}
    for key, value in merged.items():
        kwargs[CONFIG_KEYS[key]] = _coerce(key, value)
    if "init" in kwargs:
        name, bin_index = _parse_init(kwargs["init"])
        kwargs["init"] = name
        if bin_index is not None:
            kwargs["init_bin"] = bin_index
    try:
        solver = SolverConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    return RunConfig(solver, out)


def _config_echo(cfg: SolverConfig) -> dict:
    echo = {}
    for key, attr in CONFIG_KEYS.items():
        value = getattr(cfg, attr)
        if isinstance(value, (InitKind, DivergenceKind)):
            value = value.value
        echo[key] = value
    return echo


def _load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return doc


def _numbers(text: str, count: int, name: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",")] if text else []
    except ValueError:
        raise UsageError(f"{name}: parameters must be numbers, got {text!r}") from None
    if len(values) != count:
        raise UsageError(f"{name}: expected {count} comma-separated parameters, got {text!r}")
    return values


_BUILTIN = re.compile(r"^(uniform|normal|cauchy|gamma)(?::(.*))?$")


def parse_prior(text: str):
    """Prior specification from the colon mini-syntax or a density file path."""
    m = _BUILTIN.match(text.strip())
    try:
        if m:
            name, args = m.group(1), m.group(2)
            if name == "uniform":
                return Uniform(*_numbers(args, 2, name)) if args else Uniform()
            if name == "normal":
                return Normal(*_numbers(args, 2, name)) if args else Normal()
            if name == "cauchy":
                return Cauchy(*_numbers(args, 2, name)) if args else Cauchy()
            return GammaRadial(*_numbers(args, 1, name)) if args else GammaRadial()
    except UsageError:
        raise
    except ValueError as exc:
        raise UsageError(f"{text}: {exc}") from None
    path = Path(text)
    if not path.is_file():
        raise UsageError(f"{text!r} is neither a builtin prior nor a readable density file")
    density, _ = read_density(path)
    return NonParametric(density)


def builtin_density(text: str, grid: GridSpec):
    m = _BUILTIN.match(text.strip())
    if not m or m.group(1) == "gamma":
        return None
    name, args = m.group(1), m.group(2)
    try:
        if name == "uniform":
            if args:
                raise UsageError("uniform takes no parameters in analyze")
            return make_uniform(grid)
        if name == "normal":
            mu, sigma = _numbers(args, 2, name) if args else (0.5, 0.1)
            return make_truncated_normal(grid, mu, sigma)
        x0, g = _numbers(args, 2, name) if args else (0.5, 0.1)
        return make_truncated_cauchy(grid, x0, g)
    except UsageError:
        raise
    except ValueError as exc:
        raise UsageError(f"{text}: {exc}") from None


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_") or "density"


def _ensure_dir(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)


def cmd_solve(args) -> int:
    file_values = _load_config_file(args.config) if args.config else {}
    flags = {
        "n": args.n, "xi": args.xi, "lambda": args.lam, "kind": args.kind,
        "max_iters": args.max_iters, "max_fun_evals": args.max_fun_evals,
        "rel_tol": args.rel_tol, "restarts": args.restarts, "init": args.init,
        "init_bin": args.init_bin, "seed": args.seed, "eps": args.eps, "out": args.out,
    }
    run = build_run_config(file_values, flags)
    cfg = run.solver
    if cfg.xi == 0:
        print("warning: xi=0 leaves the variance unconstrained; the solution "
              "collapses toward a single bin", file=sys.stderr)

    if cfg.xi > max_index_variance(cfg.n):
        raise UsageError(f"xi={cfg.xi} exceeds the largest index variance "
                         f"{max_index_variance(cfg.n):.6g} attainable with n={cfg.n}")
    # Fail on an unusable output directory before spending time on the solve.
    _ensure_dir(run.out)

    report = solve_prior(cfg)
    symmetry, lobes, tail = shape_report(report.density)

    write_density(run.out / "density.json", report.density, {
        "config": _config_echo(cfg),
        "final_kl": report.final_kl_to_midpoint,
        "seed": cfg.seed,
        "converged": report.converged,
    })
    write_csv(run.out / "trace.csv", ["iter", "cost_nats", "constraint_violation", "round"],
              ([r.iteration, float(r.cost), float(r.violation), r.round] for r in report.trace))
    shape_text = (
        f"symmetry_deviation {symmetry:.6g}\n"
        f"lobe_count {lobes}\n"
        f"tail_mass {tail:.6g}\n"
    )
    (run.out / "shape.txt").write_text(shape_text, encoding="utf-8")

    print(f"final_kl_to_midpoint {report.final_kl_to_midpoint:.17g}")
    print(f"converged {str(report.converged).lower()} iterations {report.iterations} "
          f"best_restart {report.best_restart}")
    print(shape_text, end="")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_analyze(args) -> int:
    grid = GridSpec(0.0, 1.0, args.n)
    entries = []
    for item in args.densities:
        density = builtin_density(item, grid)
        if density is None:
            path = Path(item)
            if not path.is_file():
                raise UsageError(f"{item!r} is neither a builtin density nor a readable file")
            density, _ = read_density(path)
            name = path.stem
        else:
            name = _safe_name(item)
        entries.append((name, density))

    rows = mismatch_table(entries, eps=args.eps)
    out = Path(args.out)
    _ensure_dir(out)
    write_csv(out / "mismatch.csv", ["name", "kl_prior_vs_midpoint"], rows)
    for name, density in entries:
        write_density(out / f"{name}.midpoint.json", midpoint_density(density),
                      {"source": name, "kind": "midpoint"})
    for name, kl in rows:
        print(f"{name}\t{kl:.17g}")
    return EXIT_OK


def _prior_arg(args):
    if args.prior and args.prior_opt:
        raise UsageError("give the prior either positionally or with --prior, not both")
    text = args.prior or args.prior_opt
    if not text:
        raise UsageError("a prior specification is required")
    return parse_prior(text)


def cmd_sample(args) -> int:
    prior = _prior_arg(args)
    batch = sample(prior, args.d, args.count, args.seed)
    if args.out == "-":
        if args.format == "csv":
            write_samples_csv(sys.stdout, batch.data)
            sys.stdout.flush()
        else:
            write_samples_f64le(sys.stdout.buffer, batch.data)
            sys.stdout.buffer.flush()
        return EXIT_OK
    if args.format == "csv":
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            write_samples_csv(fh, batch.data)
    else:
        with open(args.out, "wb") as fh:
            write_samples_f64le(fh, batch.data)
    return EXIT_OK


def _parse_dims(text: str) -> list[int]:
    try:
        dims = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--dims must be comma-separated integers, got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise UsageError("--dims must list positive integers")
    return dims


def cmd_normdiag(args) -> int:
    prior = _prior_arg(args)
    dims = _parse_dims(args.dims)
    if args.count < 1000:
        raise UsageError("--count must be at least 1000")
    reports = norm_overlap_grid(prior, dims, args.count, args.bins, args.seed)
    out = Path(args.out)
    _ensure_dir(out)
    for rep in reports:
        write_csv(out / f"norms_d{rep.d}.csv", ["bin_center", "prior_mass", "midpoint_mass"],
                  zip(rep.prior_hist.centers, rep.prior_hist.mass, rep.mid_hist.mass))
    write_csv(out / "summary.csv", ["d", "kl", "overlap"],
              ([rep.d, rep.kl_prior_vs_mid, rep.overlap] for rep in reports))
    for rep in reports:
        print(f"d={rep.d}\tkl={rep.kl_prior_vs_mid:.6g}\toverlap={rep.overlap:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npprior",
        description="Design and diagnose latent priors whose midpoint distribution matches the prior.",
        epilog=PRIOR_SYNTAX,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve for a non-parametric prior",
                        formatter_class=argparse.RawDescriptionHelpFormatter,
                        epilog="config file: JSON object with keys "
                               + ", ".join([*CONFIG_KEYS, "out"]) + "; flags override it.")
    ps.add_argument("--config", help="JSON run configuration")
    ps.add_argument("--n", type=int, help="bin count (default 1024)")
    ps.add_argument("--xi", type=float, help="minimum index variance (default 0.75)")
    ps.add_argument("--lambda", dest="lam", type=float, help="interpolation weight (default 0.5)")
    ps.add_argument("--kind", help="objective: kl_pq, kl_qp, jeffreys_mid or l2")
    ps.add_argument("--max-iters", type=int)
    ps.add_argument("--max-fun-evals", type=int)
    ps.add_argument("--rel-tol", type=float)
    ps.add_argument("--restarts", type=int)
    ps.add_argument("--init", help="uniform, perturbed_uniform, trunc_normal or delta[:BIN]")
    ps.add_argument("--init-bin", type=int, help="0-based bin for delta init (default n//2)")
    ps.add_argument("--seed", type=int)
    ps.add_argument("--eps", type=float, help="divergence floor (default 1e-12)")
    ps.add_argument("--out", help=f"output directory (default {DEFAULT_OUT})")
    ps.set_defaults(func=cmd_solve)

    pa = sub.add_parser("analyze", help="KL between densities and their midpoint densities",
                        epilog=PRIOR_SYNTAX, formatter_class=argparse.RawDescriptionHelpFormatter)
    pa.add_argument("densities", nargs="+", help="density files or builtin names")
    pa.add_argument("--n", type=int, default=1024, help="grid size for builtins")
    pa.add_argument("--eps", type=float, default=1e-12)
    pa.add_argument("--out", default=".", help="directory for mismatch.csv and midpoint files")
    pa.set_defaults(func=cmd_analyze)

    pm = sub.add_parser("sample", help="draw latent samples",
                        epilog=PRIOR_SYNTAX, formatter_class=argparse.RawDescriptionHelpFormatter)
    pm.add_argument("prior", nargs="?", help="prior spec (or use --prior)")
    pm.add_argument("--prior", dest="prior_opt", metavar="PRIOR")
    pm.add_argument("--d", type=int, default=1)
    pm.add_argument("--count", type=int, default=1000)
    pm.add_argument("--seed", type=int, default=0)
    pm.add_argument("--format", choices=("csv", "f64le"), default="csv")
    pm.add_argument("--out", default="-", help="output file, '-' for stdout")
    pm.set_defaults(func=cmd_sample)

    pn = sub.add_parser("normdiag", help="prior vs midpoint norm histograms across dimensions",
                        epilog=PRIOR_SYNTAX, formatter_class=argparse.RawDescriptionHelpFormatter)
    pn.add_argument("prior", nargs="?", help="prior spec (or use --prior)")
    pn.add_argument("--prior", dest="prior_opt", metavar="PRIOR")
    pn.add_argument("--dims", default="5,10,50,100,200")
    pn.add_argument("--count", type=int, default=50_000)
    pn.add_argument("--seed", type=int, default=0)
    pn.add_argument("--bins", type=int, default=DEFAULT_BINS)
    pn.add_argument("--out", default=".")
    pn.set_defaults(func=cmd_normdiag)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except DensityFileError as exc:
        print(f"error: invalid density file: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, NPPriorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
