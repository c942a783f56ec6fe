"""Standard designs, synthetic data, refitting and the contour RMSE study.

One replicate of a study draws responses at the support points of an exact
design, refits the surface by least squares (the Gaussian MLE), extracts the
MED contours of the fit and measures how far they sit from their nominal
levels on the true surface.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .contours import (
    GridSpec,
    extract_med_set,
    response_extrema,
    unique_vertices,
)
from .designs import Design, ExactDesign, round_exact
from .errors import (
    ContourFailure,
    DegenerateSurface,
    DomainError,
    FitFailure,
    UnsupportedRay,
)
from .models import (
    MonoModel,
    DesignRegion,
    SurfaceModel,
    eval_surface,
    FixedDoseSurface,
)

log = logging.getLogger(__name__)

FIT_GRID = GridSpec(201, 201)
RAY_FAMILIES = {(3, 2), (3, 3), (4, 2), (4, 4)}


# -- standard designs --------------------------------------------------------


def factorial_design(region: DesignRegion, r: int, s: int) -> Design:
    """Full ``r x s`` grid of equally spaced levels with equal weights."""
    if r < 2 or s < 2:
        raise ValueError("factorial designs need at least two levels per drug")
    cs = np.linspace(0.0, region.c_max, r)
    ds = np.linspace(0.0, region.d_max, s)
    return Design.uniform([(c, d) for c in cs for d in ds])


def ray_design(region: DesignRegion, mono_levels: int, combo_levels: int) -> Design:
    """Ray design: ``a`` levels on each monotherapy axis plus combinations.

    The axis levels are equally spaced from 0 to the maximum dose (the
    placebo is shared).  The ``b - 1`` combination points lie on the
    diagonal ray at fractions ``j / (a - 1)`` of both maxima for the top
    ``b - 1`` values of ``j``.  Only the families 3/2, 3/3, 4/2 and 4/4 are
    defined.
    """
    a, b = int(mono_levels), int(combo_levels)
    if (a, b) not in RAY_FAMILIES:
        raise UnsupportedRay(f"ray design {a}/{b} is not one of {sorted(RAY_FAMILIES)}")
    frac = np.linspace(0.0, 1.0, a)
    pts = [(0.0, f * region.d_max) for f in frac]
    pts += [(f * region.c_max, 0.0) for f in frac[1:]]
    pts += [(f * region.c_max, f * region.d_max) for f in frac[a - b + 1 :]]
    pts.sort()
    return Design.uniform(pts)


# -- scenarios ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Scenario:
    """Simulation truth, region, contour levels and error sd."""

    model: SurfaceModel
    region: DesignRegion
    levels: tuple
    sigma: float
    name: str = ""

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "levels", tuple(float(p) for p in self.levels))


def case_study_model() -> SurfaceModel:
    """Sigmoid Emax / sigmoid Emax fit of the tumour-growth case study."""
    return SurfaceModel(
        19.05,
        MonoModel("sigmoid_emax", (111.10, 5.83, 2.86)),
        MonoModel("sigmoid_emax", (410.82, 20.00, 0.78)),
        -0.0075,
    )


def emax_pair_model(gamma: float = 0.02) -> SurfaceModel:
    """Emax(80, 3) with Emax(120, 10) and interaction ``gamma``."""
    return SurfaceModel(
        0.0, MonoModel("emax", (80.0, 3.0)), MonoModel("emax", (120.0, 10.0)), gamma
    )


def builtin_scenarios() -> dict[str, Scenario]:
    """The three simulation scenarios and the two robustness settings."""
    square = DesignRegion(10.0, 12.0)
    sig_emax = SurfaceModel(
        0.0,
        MonoModel("sigmoid_emax", (80.0, 3.0, 1.5)),
        MonoModel("emax", (120.0, 10.0)),
        -0.02,
    )
    return {
        "scenario1": Scenario(
            case_study_model(), DesignRegion(20.0, 7.0), (10, 50), 24.0, "scenario1"
        ),
        "scenario2": Scenario(emax_pair_model(0.02), square, (80, 90), 30.0, "scenario2"),
        "scenario3": Scenario(sig_emax, square, (50, 80), 11.0, "scenario3"),
        "robustness1": Scenario(emax_pair_model(0.02), square, (10, 30), 30.0, "robustness1"),
        "robustness2": Scenario(
            emax_pair_model(-0.01), square, (80, 90), 30.0, "robustness2"
        ),
    }


# -- data and fitting ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed responses ``y`` at dose combinations ``x`` (one row each)."""

    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)


def simulate_response(exact: ExactDesign, truth: SurfaceModel, sigma: float, rng) -> Dataset:
    """Draw ``r_i`` responses ``eta(x_i) + N(0, sigma^2)`` at every support point."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = exact.expanded()
    mean = np.atleast_1d(eval_surface(truth, x))
    return Dataset(x, mean + sigma * rng.standard_normal(len(mean)))


def _positive_mask(template: SurfaceModel) -> np.ndarray:
    """Parameters fitted on the log scale (ED50s and Hill exponents)."""
    mask = [False]
    for mono in (template.model_c, template.model_d):
        if mono.kind == "emax":
            mask += [False, True]
        elif mono.kind == "sigmoid_emax":
            mask += [False, True, True]
        else:
            mask += [False] * mono.dim
    return np.array(mask + [False])


@dataclass
class FitResult:
    model: SurfaceModel
    rss: float
    starts_converged: int
    nfev: int = 0


def _fit_starts(hint: np.ndarray, positive: np.ndarray, y_scale: float, rng):
    starts = [hint.copy()]
    for j in range(len(hint)):
        for f in (0.5, 2.0):
            s = hint.copy()
            s[j] *= f
            starts.append(s)
    for _ in range(5):
        pos_draw = hint * np.exp(rng.uniform(np.log(0.1), np.log(10.0), len(hint)))
        spread = np.maximum(np.abs(hint), 1e-3)
        spread[0] = max(abs(hint[0]), y_scale)
        free_draw = hint + rng.uniform(-2.0, 2.0, len(hint)) * spread
        starts.append(np.where(positive, pos_draw, free_draw))
    return starts


def fit_mle(
    data: Dataset,
    template: SurfaceModel,
    truth_hint: SurfaceModel | None = None,
    rng=None,
    region: DesignRegion | None = None,
    max_iter: int = 500,
) -> FitResult:
    """Least-squares fit of the template's model family to ``data``.

    Levenberg-Marquardt with the analytic Jacobian runs from the hint, from
    the hint with each parameter halved and doubled, and from five random
    starts.  ED50 and Hill parameters are fitted on the log scale so they
    stay positive.  The converged fit with the smallest residual sum of
    squares wins.

    Raises
    ------
    FitFailure
        If no start converges, the data cannot identify the parameters, or
        the fitted surface is flat on ``region``.
    """
    hint_model = truth_hint or template
    m = template.dim
    if len(data) == 0:
        raise FitFailure("empty dataset")
    if len(np.unique(data.x, axis=0)) < m:
        raise FitFailure(
            f"{len(np.unique(data.x, axis=0))} distinct points cannot identify {m} parameters"
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    positive = _positive_mask(template)
    hint = hint_model.theta
    y_scale = float(np.std(data.y)) or 1.0

    # replicates only enter the sum of squares through their mean:
    # sum_k (y_ik - eta_i)^2 = r_i (ybar_i - eta_i)^2 + const
    pts, inverse, counts = np.unique(
        data.x, axis=0, return_inverse=True, return_counts=True
    )
    ybar = np.bincount(inverse.ravel(), weights=data.y) / counts
    root_r = np.sqrt(counts)
    surface = FixedDoseSurface(template, pts)
    within = float(np.sum((data.y - ybar[inverse.ravel()]) ** 2))

    log_idx = np.flatnonzero(positive)

    def to_theta(u):
        theta = u.copy()
        with np.errstate(over="ignore"):
            theta[log_idx] = np.exp(u[log_idx])
        return theta

    def to_u(theta):
        u = np.array(theta, dtype=float)
        u[log_idx] = np.log(np.abs(u[log_idx]))
        return u

    # least_squares asks for the Jacobian at the point it just evaluated,
    # so both come from one pass
    cache = {}

    def evaluate(u):
        key = u.tobytes()
        if key not in cache:
            cache.clear()
            theta = to_theta(u)
            with np.errstate(all="ignore"):
                eta, g = surface(theta)
            g[:, log_idx] *= theta[log_idx]
            r = root_r * (eta - ybar)
            g *= root_r[:, None]
            if not np.all(np.isfinite(r)):
                r = np.where(np.isfinite(r), r, 1e8)
            if not np.all(np.isfinite(g)):
                g = np.where(np.isfinite(g), g, 0.0)
            cache[key] = (r, g)
        return cache[key]

    def resid(u):
        return evaluate(u)[0]

    def jac(u):
        return evaluate(u)[1]

    best, converged, nfev = None, 0, 0
    for start in _fit_starts(hint, positive, y_scale, rng):
        u0 = to_u(start)
        if not np.all(np.isfinite(u0)):
            continue
        with np.errstate(all="ignore"):
            try:
                res = optimize.least_squares(
                    resid,
                    u0,
                    jac=jac,
                    method="lm",
                    xtol=1e-10,
                    gtol=1e-8,
                    ftol=1e-12,
                    max_nfev=max_iter,
                )
            except (ValueError, np.linalg.LinAlgError):
                continue
        nfev += res.nfev
        if res.status <= 0:
            continue
        rss = float(np.sum(res.fun**2)) + within
        try:
            # runaway ED50 or Hill exponents overflow to inf and are rejected
            candidate = template.with_theta(to_theta(res.x))
        except DomainError:
            continue
        if not np.isfinite(rss):
            continue
        converged += 1
        if best is None or rss < best[1]:
            best = (candidate, rss)
    if best is None:
        raise FitFailure("no start converged to valid parameters")
    fitted = best[0]
    if region is not None:
        try:
            _, _, r_max = response_extrema(fitted, region, GridSpec(51, 51))
        except DegenerateSurface as err:
            raise FitFailure("fitted surface is flat on the region") from err
        if r_max <= 1e-9:
            raise FitFailure("fitted surface is flat on the region")
    return FitResult(fitted, best[1], converged, nfev)


# -- contour RMSE --------------------------------------------------------------


def rmse_contours(
    fitted: SurfaceModel,
    truth: SurfaceModel,
    region: DesignRegion,
    grid: GridSpec = FIT_GRID,
    levels=(50.0,),
    truth_extrema=None,
) -> float:
    """Mean over levels of the RMS distance, on the true percentage scale,
    between the fitted MED_p vertices and ``p``.

    Raises
    ------
    ContourFailure
        If the fitted surface is flat or any fitted contour is empty.
    """
    lo_t, _, r_t = truth_extrema or response_extrema(truth, region, grid)
    try:
        ext = response_extrema(fitted, region, grid)
    except DegenerateSurface as err:
        raise ContourFailure("fitted surface is flat") from err
    per_level = []
    for p in levels:
        pts = unique_vertices(extract_med_set(fitted, region, grid, p, extrema=ext).polylines)
        if len(pts) == 0:
            raise ContourFailure(f"fitted MED_{p:g} set is empty")
        true_pct = 100.0 * (np.atleast_1d(eval_surface(truth, pts)) - lo_t) / r_t
        per_level.append(np.sqrt(np.mean((p - true_pct) ** 2)))
    return float(np.mean(per_level))


# -- replication engine --------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    n_totals: tuple = (27, 36, 45, 90, 152)
    reps: int = 1000
    seed: int = 0
    fit_grid: GridSpec = FIT_GRID
    threads: int = 1

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        object.__setattr__(self, "n_totals", tuple(int(n) for n in self.n_totals))


@dataclass
class SimResult:
    """Per-replicate outcomes keyed by ``(design name, N)``.

    ``rmse[key]`` lists the successful replicates' values in replicate
    order; ``status[key]`` has one entry per replicate: ``"ok"``,
    ``"fit_failure"`` or ``"contour_failure"``.
    """

    rmse: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)

    def failures(self, key) -> dict:
        st = self.status[key]
        return {
            "fit_failure": st.count("fit_failure"),
            "contour_failure": st.count("contour_failure"),
        }

    def median(self, key) -> float:
        vals = self.rmse[key]
        return float(np.median(vals)) if vals else float("nan")

    def summary(self) -> dict:
        out = {}
        for key, vals in self.rmse.items():
            q25, q50, q75 = (
                np.percentile(vals, [25, 50, 75]) if vals else (np.nan,) * 3
            )
            out[f"{key[0]}@{key[1]}"] = {
                "design": key[0],
                "n_total": key[1],
                "median": float(q50),
                "q25": float(q25),
                "q75": float(q75),
                "successes": len(vals),
                "failures": self.failures(key),
            }
        return out

    def rows(self):
        """Long-format rows ``(design, n_total, rep, rmse, status)``."""
        for key, st in self.status.items():
            vals = iter(self.rmse[key])
            for rep, s in enumerate(st):
                yield key[0], key[1], rep, (next(vals) if s == "ok" else float("nan")), s


def replicate_seed(master: int, design: str, n_total: int, rep: int) -> int:
    """Stable 64-bit seed for one replicate."""
    digest = hashlib.sha256(f"{master}|{design}|{n_total}|{rep}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def run_replicate(scenario: Scenario, exact: ExactDesign, seed: int, grid, truth_extrema):
    """One replicate; returns ``(status, rmse or nan)``."""
    rng = np.random.default_rng(seed)
    data = simulate_response(exact, scenario.model, scenario.sigma, rng)
    try:
        fit = fit_mle(data, scenario.model, scenario.model, rng=rng, region=scenario.region)
    except FitFailure:
        return "fit_failure", float("nan")
    try:
        val = rmse_contours(
            fit.model, scenario.model, scenario.region, grid, scenario.levels, truth_extrema
        )
    except ContourFailure:
        return "contour_failure", float("nan")
    return "ok", val


def run_study(scenario: Scenario, designs: dict, cfg: SimConfig) -> SimResult:
    """Replicate simulate -> fit -> contour RMSE for every design and N.

    Each replicate has its own seed derived from the master seed, the design
    name, N and the replicate index, so results do not depend on execution
    order or on ``cfg.threads``.
    """
    truth_ext = response_extrema(scenario.model, scenario.region, cfg.fit_grid)
    result = SimResult()
    tasks = []
    for name, design in designs.items():
        for n in cfg.n_totals:
            exact = round_exact(design, n)
            for rep in range(cfg.reps):
                tasks.append((name, n, exact, replicate_seed(cfg.seed, name, n, rep)))

    def work(task):
        name, n, exact, seed = task
        return run_replicate(scenario, exact, seed, cfg.fit_grid, truth_ext)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            outcomes = list(pool.map(work, tasks))
    else:
        outcomes = [work(t) for t in tasks]

    for (name, n, _, _), (status, val) in zip(tasks, outcomes):
        key = (name, n)
        result.status.setdefault(key, []).append(status)
        vals = result.rmse.setdefault(key, [])
        if status == "ok":
            vals.append(val)
    return result
