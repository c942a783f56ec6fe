"""Command-line interface: ``meddesign <subcommand> CONFIG ... --out DIR``.

Subcommands
-----------
optimize    search for a MED-, D- or Bayesian-optimal design
verify      efficiency lower bound of a design
efficiency  efficiency of one design relative to another
simulate    contour-RMSE replication study for a set of designs
contour     MED contour atoms as ``level,c,d`` CSV

Exit status is 0 on success, 2 for configuration, usage and range-condition
errors, 3 when no feasible design exists and 1 for any other failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .contours import DEFAULT_ATOMS_PER_LEVEL, MEASURE_METHODS, GridSpec, VERTEX_GRID
from .criteria import (
    CriterionConfig,
    Prior,
    bayesian_efficiency_lower_bound,
    criterion_config,
    efficiency_lower_bound,
    efficiency_ratio,
    prior_configs,
)
from .designs import ConfidenceConfig, Design, read_design_csv, write_design_csv
from .errors import (
    ConfigError,
    DomainError,
    MedDesignError,
    NoFeasibleDesign,
    RangeError,
)
from .models import KINDS, DesignRegion, MonoModel, SurfaceModel
from .optimizer import OBJECTIVES, OptimProblem, PsoConfig, optimize_design
from .simulation import Scenario, SimConfig, run_study

log = logging.getLogger("meddesign")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

_TOP_KEYS = {"model", "region", "criterion", "prior", "optimizer", "confidence", "simulation"}
_MONO_KEYS = {"kind", "params"}
_MODEL_KEYS = {"theta0", "c", "d", "gamma"}
_REGION_KEYS = {"c_max", "d_max"}
_CRITERION_KEYS = {
    "q", "levels", "contour_grid", "verification_grid", "atoms_per_level", "measure",
}
_PRIOR_KEYS = {"gammas", "thetas", "weights"}
_OPTIMIZER_KEYS = {"objective", "n_points"} | set(PsoConfig.__dataclass_fields__)
_CONFIDENCE_KEYS = {"alpha", "sigma_hat", "n_total"}
_SIMULATION_KEYS = {"sigma", "n_totals", "reps", "seed"}


@dataclass(eq=False)
class ProblemConfig:
    """Validated problem description loaded from JSON."""

    model: SurfaceModel
    region: DesignRegion
    q: float
    levels: tuple
    contour_grid: GridSpec
    verification_grid: GridSpec
    atoms_per_level: int
    measure: str
    prior: Prior | None
    objective: str
    n_points: int
    pso: PsoConfig
    confidence: ConfidenceConfig | None
    simulation: dict
    raw: dict
    defaults: list = field(default_factory=list)

    def criterion(self, model: SurfaceModel | None = None) -> CriterionConfig:
        return criterion_config(
            model or self.model,
            self.region,
            self.levels,
            q=self.q,
            contour_grid=self.contour_grid,
            atoms_per_level=self.atoms_per_level,
            verification_grid=self.verification_grid,
            measure_method=self.measure,
        )

    def prior_criteria(self) -> list[CriterionConfig]:
        return prior_configs(
            self.prior,
            self.region,
            self.levels,
            q=self.q,
            contour_grid=self.contour_grid,
            atoms_per_level=self.atoms_per_level,
            verification_grid=self.verification_grid,
            measure_method=self.measure,
        )

    @property
    def digest(self) -> str:
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


class _Reader:
    """Field access with dotted-path errors and default tracking."""

    def __init__(self):
        self.defaults: list[str] = []

    def block(self, parent: dict, key: str, path: str, allowed: set, required=True):
        if key not in parent:
            if required:
                raise ConfigError(_join(path, key), "missing block")
            return None
        value = parent[key]
        here = _join(path, key)
        if not isinstance(value, dict):
            raise ConfigError(here, "must be an object")
        unknown = sorted(set(value) - allowed)
        if unknown:
            raise ConfigError(_join(here, unknown[0]), "unknown key")
        return value

    def get(self, block: dict, key: str, path: str, kind, default=...):
        here = _join(path, key)
        if key not in block:
            if default is ...:
                raise ConfigError(here, "missing value")
            self.defaults.append(f"{here} = {default!r}")
            return default
        value = block[key]
        try:
            if kind is float:
                if isinstance(value, bool):
                    raise TypeError
                out = float(value)
                if not np.isfinite(out):
                    raise ValueError
                return out
            if kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                return int(value)
            if kind is str:
                if not isinstance(value, str):
                    raise TypeError
                return value
            if kind is list:
                if not isinstance(value, list):
                    raise TypeError
                return value
        except (TypeError, ValueError):
            raise ConfigError(here, f"expected {kind.__name__}, got {value!r}") from None
        raise AssertionError(kind)


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _mono(reader: _Reader, block: dict, path: str) -> MonoModel:
    kind = reader.get(block, "kind", path, str)
    if kind not in KINDS:
        raise ConfigError(_join(path, "kind"), f"must be one of {KINDS}")
    params = reader.get(block, "params", path, list)
    try:
        return MonoModel(kind, tuple(float(p) for p in params))
    except (DomainError, TypeError, ValueError) as err:
        raise ConfigError(_join(path, "params"), str(err)) from None


def _grid(reader, block, key, path, default) -> GridSpec:
    value = block.get(key, default)
    if key not in block:
        reader.defaults.append(f"{_join(path, key)} = {default!r}")
    here = _join(path, key)
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value, value]
    if (
        not isinstance(value, list)
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ConfigError(here, "expected an integer or [nc, nd]")
    try:
        return GridSpec(*value)
    except ValueError as err:
        raise ConfigError(here, str(err)) from None


def config_from_dict(raw: dict) -> ProblemConfig:
    """Validate a configuration mapping; see :func:`parse_config`."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    rd = _Reader()

    mb = rd.block(raw, "model", "", _MODEL_KEYS)
    model = SurfaceModel(
        rd.get(mb, "theta0", "model", float),
        _mono(rd, rd.block(mb, "c", "model", _MONO_KEYS), "model.c"),
        _mono(rd, rd.block(mb, "d", "model", _MONO_KEYS), "model.d"),
        rd.get(mb, "gamma", "model", float, 0.0),
    )

    rb = rd.block(raw, "region", "", _REGION_KEYS)
    c_max, d_max = rd.get(rb, "c_max", "region", float), rd.get(rb, "d_max", "region", float)
    try:
        region = DesignRegion(c_max, d_max)
    except ValueError as err:
        raise ConfigError("region", str(err)) from None

    cb = rd.block(raw, "criterion", "", _CRITERION_KEYS)
    q = rd.get(cb, "q", "criterion", float, 2.0)
    if q < 1:
        raise ConfigError("criterion.q", f"must be at least 1, got {q:g}")
    levels = rd.get(cb, "levels", "criterion", list)
    try:
        levels = tuple(float(p) for p in levels)
    except (TypeError, ValueError):
        raise ConfigError("criterion.levels", "levels must be numbers") from None
    if not levels or not all(0 < p < 100 for p in levels):
        raise ConfigError("criterion.levels", "need at least one level in (0, 100)")
    measure = rd.get(cb, "measure", "criterion", str, "vertices")
    if measure not in MEASURE_METHODS:
        raise ConfigError("criterion.measure", f"must be one of {MEASURE_METHODS}")
    default_grid = VERTEX_GRID if measure == "vertices" else 201
    contour_grid = _grid(rd, cb, "contour_grid", "criterion", default_grid)
    verification_grid = _grid(rd, cb, "verification_grid", "criterion", 101)
    atoms = rd.get(cb, "atoms_per_level", "criterion", int, DEFAULT_ATOMS_PER_LEVEL)
    if atoms < 1:
        raise ConfigError("criterion.atoms_per_level", "must be positive")

    prior = None
    pb = rd.block(raw, "prior", "", _PRIOR_KEYS, required=False)
    if pb is not None:
        prior = _prior(rd, pb, model)

    ob = rd.block(raw, "optimizer", "", _OPTIMIZER_KEYS, required=False) or {}
    objective = rd.get(ob, "objective", "optimizer", str, "bayes" if prior else "med")
    if objective not in OBJECTIVES:
        raise ConfigError("optimizer.objective", f"must be one of {OBJECTIVES}")
    if objective == "bayes" and prior is None:
        raise ConfigError("optimizer.objective", "the Bayesian objective needs a prior block")
    n_points = rd.get(ob, "n_points", "optimizer", int, max(model.dim + 2, 10))
    if n_points < (model.dim if objective == "d" else 1):
        raise ConfigError("optimizer.n_points", "too few support points")
    pso_kwargs = {}
    for name, spec in PsoConfig.__dataclass_fields__.items():
        kind = {"int": int, "float": float}[str(spec.type)]
        pso_kwargs[name] = rd.get(ob, name, "optimizer", kind, spec.default)
    try:
        pso = PsoConfig(**pso_kwargs)
    except ValueError as err:
        raise ConfigError("optimizer", str(err)) from None

    confidence = None
    fb = rd.block(raw, "confidence", "", _CONFIDENCE_KEYS, required=False)
    if fb is not None:
        conf_args = (
            rd.get(fb, "alpha", "confidence", float, 0.05),
            rd.get(fb, "sigma_hat", "confidence", float, 1.0),
            rd.get(fb, "n_total", "confidence", int, 1),
        )
        try:
            confidence = ConfidenceConfig(*conf_args)
        except ValueError as err:
            raise ConfigError("confidence", str(err)) from None

    sb = rd.block(raw, "simulation", "", _SIMULATION_KEYS, required=False) or {}
    simulation = {
        "sigma": rd.get(sb, "sigma", "simulation", float, 1.0),
        "n_totals": [int(n) for n in rd.get(sb, "n_totals", "simulation", list, [27, 36, 45, 90, 152])],
        "reps": rd.get(sb, "reps", "simulation", int, 1000),
        "seed": rd.get(sb, "seed", "simulation", int, 0),
    }
    if simulation["sigma"] <= 0:
        raise ConfigError("simulation.sigma", "must be positive")

    cfg = ProblemConfig(
        model=model,
        region=region,
        q=q,
        levels=levels,
        contour_grid=contour_grid,
        verification_grid=verification_grid,
        atoms_per_level=atoms,
        measure=measure,
        prior=prior,
        objective=objective,
        n_points=n_points,
        pso=pso,
        confidence=confidence,
        simulation=simulation,
        raw=raw,
        defaults=rd.defaults,
    )
    for line in rd.defaults:
        log.info("default applied: %s", line)
    return cfg


def _prior(rd: _Reader, pb: dict, model: SurfaceModel) -> Prior:
    if ("gammas" in pb) == ("thetas" in pb):
        raise ConfigError("prior", "give exactly one of gammas or thetas")
    try:
        if "gammas" in pb:
            gammas = [float(g) for g in rd.get(pb, "gammas", "prior", list)]
            models = [model.with_gamma(g) for g in gammas]
        else:
            models = [model.with_theta(t) for t in rd.get(pb, "thetas", "prior", list)]
    except (DomainError, TypeError, ValueError) as err:
        key = "gammas" if "gammas" in pb else "thetas"
        raise ConfigError(f"prior.{key}", str(err)) from None
    weights = rd.get(pb, "weights", "prior", list, None)
    if weights is None:
        return Prior.uniform(models)
    w = np.asarray(weights, dtype=float)
    if len(w) != len(models) or np.any(w <= 0):
        raise ConfigError("prior.weights", "need one positive weight per support model")
    return Prior(tuple(models), w / w.sum())


def parse_config(path) -> ProblemConfig:
    """Load and validate a JSON problem configuration.

    Raises
    ------
    ConfigError
        With the dotted path of the offending field and the reason.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "file not found") from None
    except json.JSONDecodeError as err:
        raise ConfigError(str(path), f"invalid JSON: {err}") from None
    return config_from_dict(raw)


# -- subcommands -------------------------------------------------------------


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, GridSpec):
        return [obj.nc, obj.nd]
    raise TypeError(type(obj))


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _manifest(args, cfg: ProblemConfig, seed, extra=None) -> dict:
    return {
        "subcommand": args.command,
        "argv": sys.argv[1:],
        "config": str(args.config),
        "config_sha256": cfg.digest,
        "seed": seed,
        "defaults_applied": cfg.defaults,
        "settings": {
            "q": cfg.q,
            "levels": list(cfg.levels),
            "measure": cfg.measure,
            "contour_grid": cfg.contour_grid,
            "verification_grid": cfg.verification_grid,
            "atoms_per_level": cfg.atoms_per_level,
            "pso": asdict(cfg.pso),
        },
        "versions": {
            "meddesign": _version(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        **(extra or {}),
    }


def _threads(args) -> int:
    n = args.threads
    if n is None:
        n = int(os.environ.get("MEDDESIGN_THREADS", "1") or 1)
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def cmd_optimize(args, cfg: ProblemConfig, out: Path) -> dict:
    overrides = {
        "seed": args.seed,
        "swarm_size": args.swarm,
        "iterations": args.iters,
        "restarts": args.restarts,
    }
    pso = PsoConfig(**{**asdict(cfg.pso), **{k: v for k, v in overrides.items() if v is not None}})
    objective = args.objective or cfg.objective
    n_points = args.n_points or cfg.n_points
    if objective == "bayes":
        if cfg.prior is None:
            raise ConfigError("optimizer.objective", "the Bayesian objective needs a prior block")
        problem = OptimProblem(cfg.prior, cfg.region, cfg.prior_criteria(), "bayes", n_points)
    elif objective == "d":
        problem = OptimProblem(cfg.model, cfg.region, None, "d", n_points)
    else:
        problem = OptimProblem(cfg.model, cfg.region, cfg.criterion(), "med", n_points)
    result = optimize_design(problem, pso)
    write_design_csv(result.design, out / "design.csv")
    _write_json(out / "result.json", {"objective": objective, **result.as_dict()})
    log.info("criterion %.6g, efficiency bound %.6f", result.criterion_value, result.report.elb)
    return {"seed": pso.seed, "pso": asdict(pso), "objective": objective, "n_points": n_points}


def _report(cfg: ProblemConfig, design: Design):
    if cfg.prior is not None:
        return bayesian_efficiency_lower_bound(design, cfg.prior, cfg.prior_criteria())
    return efficiency_lower_bound(design, cfg.model, cfg.criterion())


def cmd_verify(args, cfg: ProblemConfig, out: Path) -> dict:
    design = read_design_csv(args.design)
    report = _report(cfg, design)
    body = {"design": str(args.design), **report.as_dict(), "certified": report.certified}
    _write_json(out / "verify.json", body)
    print(json.dumps({"elb": report.elb, "certified": report.certified}))
    return {}


def cmd_efficiency(args, cfg: ProblemConfig, out: Path) -> dict:
    cand, ref = read_design_csv(args.candidate), read_design_csv(args.reference)
    ratio = efficiency_ratio(cand, ref, cfg.model, cfg.criterion())
    body = {"candidate": str(args.candidate), "reference": str(args.reference), "ratio": ratio}
    _write_json(out / "efficiency.json", body)
    print(json.dumps({"ratio": ratio}))
    return {}


def cmd_simulate(args, cfg: ProblemConfig, out: Path) -> dict:
    designs = {}
    for spec in args.designs:
        name, _, path = spec.rpartition("=")
        name = name or Path(path).stem
        if name in designs:
            raise ConfigError(f"designs.{name}", "duplicate design name")
        designs[name] = read_design_csv(path)
    sim = cfg.simulation
    sim_cfg = SimConfig(
        n_totals=tuple(args.n or sim["n_totals"]),
        reps=args.reps or sim["reps"],
        seed=sim["seed"] if args.seed is None else args.seed,
        threads=_threads(args),
    )
    scenario = Scenario(cfg.model, cfg.region, cfg.levels, sim["sigma"], "config")
    result = run_study(scenario, designs, sim_cfg)
    with open(out / "simulation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["design", "n_total", "rep", "rmse", "status"])
        for row in result.rows():
            writer.writerow(row)
    _write_json(out / "summary.json", result.summary())
    return {"seed": sim_cfg.seed, "reps": sim_cfg.reps, "n_totals": list(sim_cfg.n_totals)}


def cmd_contour(args, cfg: ProblemConfig, out: Path) -> dict:
    measure = cfg.criterion().measure
    with open(out / "contour.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "c", "d"])
        for p, (c, d) in zip(measure.atom_levels, measure.atoms):
            writer.writerow([float(p), repr(float(c)), repr(float(d))])
    return {"atoms": len(measure)}


COMMANDS = {
    "optimize": cmd_optimize,
    "verify": cmd_verify,
    "efficiency": cmd_efficiency,
    "simulate": cmd_simulate,
    "contour": cmd_contour,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meddesign", description="Optimal designs for effective-dose contours."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def common(p):
        p.add_argument("config", help="problem configuration (JSON)")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto")

    p = sub.add_parser("optimize", help="search for an optimal design")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--swarm", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--n-points", type=int, dest="n_points")
    p.add_argument("--objective", choices=OBJECTIVES)

    p = sub.add_parser("verify", help="efficiency lower bound of a design")
    common(p)
    p.add_argument("design", help="design CSV with columns c,d,weight")

    p = sub.add_parser("efficiency", help="efficiency of CANDIDATE relative to REFERENCE")
    common(p)
    p.add_argument("candidate")
    p.add_argument("reference")

    p = sub.add_parser("simulate", help="contour-RMSE simulation study")
    common(p)
    p.add_argument("designs", nargs="+", help="design CSVs, optionally NAME=PATH")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, action="append", help="total sample size (repeatable)")

    p = sub.add_parser("contour", help="write MED contour atoms as CSV")
    common(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = parse_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, cfg, out)
        seed = extra.pop("seed", None) if extra else None
        _write_json(out / "run.json", _manifest(args, cfg, seed, extra))
    except (ConfigError, RangeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NoFeasibleDesign as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (MedDesignError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
