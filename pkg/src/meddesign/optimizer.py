"""Particle swarm search for approximate designs with certification.

A particle encodes ``n_points`` dose pairs in unit coordinates (scaled by the
region's upper corner and clamped to ``[0, 1]``) followed by ``n_points``
weight logits mapped to the simplex by softmax.  Whole swarms are evaluated
in one vectorized call; designs with a singular information matrix score
``+inf``.  The swarm's best design is refined by a bounded quasi-Newton
polish; the pruned result is certified with the equivalence-theorem bound.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .criteria import (
    VERIFICATION_GRID,
    CriterionConfig,
    MedCriterion,
    Prior,
    SensitivityReport,
    bayesian_criterion,
    bayesian_efficiency_lower_bound,
    d_batch_values,
    d_criterion,
    d_sensitivity,
    efficiency_lower_bound,
    med_q_criterion,
)
from .designs import Design, merge_points
from .errors import MedDesignError, NoFeasibleDesign
from .models import DesignRegion, SurfaceModel, grad_surface

log = logging.getLogger(__name__)

OBJECTIVES = ("med", "d", "bayes")
CERTIFY_THRESHOLD = 0.99
LOGIT_BOUND = 12.0
_PENALTY = 1e10


@dataclass(frozen=True)
class PsoConfig:
    """Particle swarm settings.

    ``merge_tol`` is a distance in dose units below which support points are
    merged after the search; weights under ``weight_floor`` are dropped.
    ``polish_iters = 0`` skips the local refinement.
    """

    swarm_size: int = 60
    iterations: int = 500
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    seed: int = 0
    restarts: int = 4
    merge_tol: float = 1e-2
    weight_floor: float = 1e-3
    polish_iters: int = 3000

    def __post_init__(self):
        if not 0 < self.inertia < 1:
            raise ValueError("inertia must lie in (0, 1)")
        if self.swarm_size < 10:
            raise ValueError("swarm_size must be at least 10")
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be positive")
        if self.merge_tol < 0 or not 0 <= self.weight_floor < 1:
            raise ValueError("merge_tol must be >= 0 and weight_floor in [0, 1)")


@dataclass(frozen=True, eq=False)
class OptimProblem:
    """What to optimize.

    ``model`` is a :class:`Prior` and ``cfg`` a list of per-support configs
    for the Bayesian objective; for ``"d"`` the criterion config may be
    ``None``.
    """

    model: SurfaceModel | Prior
    region: DesignRegion
    cfg: CriterionConfig | list | None
    objective: str = "med"
    n_points: int = 10

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.objective == "bayes":
            if not isinstance(self.model, Prior):
                raise ValueError("the Bayesian objective needs a Prior")
            if self.cfg is None or len(self.cfg) != len(self.model.models):
                raise ValueError("need one criterion config per prior model")
        elif not isinstance(self.model, SurfaceModel):
            raise ValueError("local objectives need a SurfaceModel")
        if self.objective == "med" and self.cfg is None:
            raise ValueError("the MED objective needs a criterion config")
        if self.objective == "d" and self.n_points < self.n_params:
            raise ValueError(f"D objective needs at least {self.n_params} points")
        if self.n_points < 1:
            raise ValueError("n_points must be positive")

    @property
    def models(self) -> tuple:
        return self.model.models if isinstance(self.model, Prior) else (self.model,)

    @property
    def n_params(self) -> int:
        return self.models[0].dim


@dataclass
class OptimResult:
    design: Design
    criterion_value: float
    report: SensitivityReport
    trace: list = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.report.elb >= CERTIFY_THRESHOLD

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion_value,
            "certified": self.certified,
            "report": self.report.as_dict(),
            "design": [
                {"c": float(c), "d": float(d), "weight": float(w)}
                for (c, d), w in zip(self.design.points, self.design.weights)
            ],
            "trace": [[int(i), float(v)] for i, v in self.trace],
        }


# -- objective ---------------------------------------------------------------


class _Objective:
    """Vectorized objective over stacks of encoded designs."""

    def __init__(self, problem: OptimProblem):
        self.problem = problem
        self.n = problem.n_points
        self.upper = np.asarray(problem.region.upper, float)
        if problem.objective == "med":
            self.crits = [MedCriterion(problem.model, problem.cfg)]
            self.prior_w = np.ones(1)
        elif problem.objective == "bayes":
            self.crits = [
                MedCriterion(m, c) for m, c in zip(problem.model.models, problem.cfg)
            ]
            self.prior_w = problem.model.weights
        else:
            self.crits = []

    def decode(self, x):
        """Unit-coordinate particles ``(S, 3n)`` -> points ``(S, n, 2)``, weights."""
        x = np.atleast_2d(x)
        pts = np.clip(x[:, : 2 * self.n], 0.0, 1.0).reshape(len(x), self.n, 2)
        logits = x[:, 2 * self.n :]
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        return pts * self.upper, w / w.sum(axis=1, keepdims=True)

    def design(self, x) -> Design:
        pts, w = self.decode(x)
        return Design(pts[0], w[0] / w[0].sum())

    def __call__(self, x) -> np.ndarray:
        pts, w = self.decode(x)
        flat = pts.reshape(-1, 2)
        if self.problem.objective == "d":
            g = grad_surface(self.problem.model, flat).reshape(len(pts), self.n, -1)
            return d_batch_values(g, w)
        total = np.zeros(len(pts))
        for crit, pw in zip(self.crits, self.prior_w):
            g = grad_surface(crit.model, flat).reshape(len(pts), self.n, -1)
            total += pw * crit.batch_values(g, w)
        return total

    def exact(self, design: Design) -> float:
        """Objective of a decoded design via the generalized-inverse path."""
        p = self.problem
        if p.objective == "d":
            return d_criterion(design, p.model)
        if p.objective == "med":
            return med_q_criterion(design, p.model, p.cfg)
        return bayesian_criterion(design, p.model, p.cfg)


def encode(design: Design, region: DesignRegion) -> np.ndarray:
    """Inverse of the particle decoding for a design (log weights as logits)."""
    pts = np.asarray(design.points) / np.asarray(region.upper, float)
    return np.concatenate([pts.ravel(), np.log(design.weights)])


# -- swarm -------------------------------------------------------------------


def _heuristic_points(problem: OptimProblem, rng) -> np.ndarray:
    """Unit-coordinate starting points: a factorial grid or contour atoms."""
    n = problem.n_points
    cfgs = problem.cfg if isinstance(problem.cfg, list) else [problem.cfg]
    atoms = [c.measure.atoms for c in cfgs if c is not None]
    if atoms and rng.random() < 0.5:
        pool = np.concatenate(atoms) / np.asarray(problem.region.upper, float)
        # keep the placebo and the full-dose corner available
        pool = np.vstack([pool, [[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]])
        return pool[rng.choice(len(pool), size=n, replace=len(pool) < n)]
    k = int(np.ceil(np.sqrt(n)))
    axis = np.linspace(0.0, 1.0, max(k, 2))
    grid = np.array([(a, b) for a in axis for b in axis])
    pick = grid[rng.choice(len(grid), size=n, replace=len(grid) < n)]
    return np.clip(pick + rng.normal(0.0, 0.02, pick.shape), 0.0, 1.0)


def _init_particle(problem: OptimProblem, rng, heuristic: bool) -> np.ndarray:
    n = problem.n_points
    if heuristic:
        pts = _heuristic_points(problem, rng)
    else:
        pts = rng.random((n, 2))
    w = rng.dirichlet(np.ones(n))
    logits = np.clip(np.log(np.maximum(w, 1e-300)), -LOGIT_BOUND, LOGIT_BOUND)
    return np.concatenate([pts.ravel(), logits])


def _swarm_run(objective: _Objective, problem, pso: PsoConfig, seq, offset, trace):
    """One swarm run; returns (best position, best value)."""
    n = problem.n_points
    s = pso.swarm_size
    dim = 3 * n
    lo = np.r_[np.zeros(2 * n), -LOGIT_BOUND * np.ones(n)]
    hi = np.r_[np.ones(2 * n), LOGIT_BOUND * np.ones(n)]
    vmax = 0.25 * (hi - lo)
    rngs = [np.random.default_rng(child) for child in seq.spawn(s)]

    x = np.array([_init_particle(problem, r, k >= s // 2) for k, r in enumerate(rngs)])
    f = objective(x)
    for _ in range(20):  # repair singular starts by redrawing them
        bad = np.flatnonzero(~np.isfinite(f))
        if bad.size == 0:
            break
        for k in bad:
            x[k] = _init_particle(problem, rngs[k], heuristic=False)
        f[bad] = objective(x[bad])
    if not np.any(np.isfinite(f)):
        raise NoFeasibleDesign(
            f"no particle has a usable information matrix with {n} points"
        )

    v = np.array([r.uniform(-1.0, 1.0, dim) for r in rngs]) * vmax * 0.1
    pbest, pval = x.copy(), f.copy()
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), float(pval[g])
    for it in range(pso.iterations):
        r1 = np.array([r.random(dim) for r in rngs])
        r2 = np.array([r.random(dim) for r in rngs])
        v = (
            pso.inertia * v
            + pso.cognitive * r1 * (pbest - x)
            + pso.social * r2 * (gbest - x)
        )
        v = np.clip(v, -vmax, vmax)
        x = np.clip(x + v, lo, hi)
        f = objective(x)
        better = f < pval
        pbest[better] = x[better]
        pval[better] = f[better]
        g = int(np.argmin(pval))  # lowest index on ties
        if pval[g] < gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
        if not trace or gval < trace[-1][1]:
            trace.append((offset + it, gval))
    return gbest, gval


def _polish(objective: _Objective, x0: np.ndarray, maxiter: int):
    """Bounded L-BFGS-B on the encoded design with batched central differences."""
    n = objective.n
    lo = np.r_[np.zeros(2 * n), -3 * LOGIT_BOUND * np.ones(n)]
    hi = np.r_[np.ones(2 * n), 3 * LOGIT_BOUND * np.ones(n)]
    x0 = np.clip(x0, lo, hi)
    k = len(x0)
    idx = np.arange(k)
    step = 1e-7

    def value_and_grad(x):
        xp = np.tile(x, (k, 1))
        xm = xp.copy()
        xp[idx, idx] = np.minimum(x + step, hi)
        xm[idx, idx] = np.maximum(x - step, lo)
        vals = objective(np.vstack([x[None], xp, xm]))
        vals = np.where(np.isfinite(vals), vals, _PENALTY)
        grad = (vals[1 : k + 1] - vals[k + 1 :]) / (xp[idx, idx] - xm[idx, idx])
        return vals[0], grad

    res = optimize.minimize(
        value_and_grad,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(lo, hi)),
        options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-12},
    )
    return res.x, float(res.fun)


def prune_design(
    design: Design,
    merge_tol: float = 1e-2,
    weight_floor: float = 1e-3,
    objective=None,
    rel_tol: float = 1e-3,
) -> Design:
    """Merge nearby points, drop tiny weights and renormalize.

    With ``objective`` (a callable on designs) each step is kept only if the
    value changes by at most ``rel_tol`` relative; otherwise that step is
    rolled back.
    """

    def accept(old, new):
        if objective is None:
            return True
        try:
            a, b = objective(old), objective(new)
        except MedDesignError:
            return False
        return np.isfinite(b) and abs(b - a) <= rel_tol * abs(a)

    out = design
    if merge_tol > 0 and design.size > 1:
        pts, w = merge_points(design.points, design.weights, merge_tol)
        merged = Design.normalized(pts, w)
        if accept(out, merged):
            out = merged
    keep = out.weights >= weight_floor
    if weight_floor > 0 and 0 < keep.sum() < out.size:
        floored = Design.normalized(out.points[keep], out.weights[keep])
        if accept(out, floored):
            out = floored
    return out


def certify(problem: OptimProblem, design: Design) -> SensitivityReport:
    """Equivalence-theorem report for the problem's objective.

    For D-optimality the bound is ``m / max_x d(x)`` with the standardized
    variance ``d(x) = g^T M^-1 g``.
    """
    if problem.objective == "med":
        return efficiency_lower_bound(design, problem.model, problem.cfg)
    if problem.objective == "bayes":
        return bayesian_efficiency_lower_bound(design, problem.model, problem.cfg)
    model = problem.model
    grid = problem.cfg.verification_grid if problem.cfg is not None else VERIFICATION_GRID
    cand = np.concatenate([grid.points(problem.region), design.points])
    sens = d_sensitivity(design, model, cand)
    k = int(np.argmax(sens))
    m = model.dim
    elb = min(1.0, m / float(sens[k]))
    return SensitivityReport(
        max_psi=float(sens[k] - m),
        argmax=tuple(float(v) for v in cand[k]),
        elb=elb,
        support_residuals=sens[len(cand) - design.size :] - m,
        criterion_value=d_criterion(design, model),
    )


def optimize_design(problem: OptimProblem, pso: PsoConfig = PsoConfig()) -> OptimResult:
    """Search, polish, prune and certify a design for ``problem``.

    Deterministic for a given ``pso.seed``.

    Raises
    ------
    NoFeasibleDesign
        If no particle of any restart reaches a nonsingular information
        matrix, which usually means ``n_points`` is too small.
    """
    objective = _Objective(problem)
    master = np.random.SeedSequence(pso.seed)
    trace: list = []
    best_x, best_val = None, np.inf
    for r, seq in enumerate(master.spawn(pso.restarts)):
        x, val = _swarm_run(objective, problem, pso, seq, r * pso.iterations, trace)
        log.debug("restart %d: %.6g", r, val)
        if val < best_val:
            best_x, best_val = x, val
    if pso.polish_iters > 0:
        x, val = _polish(objective, best_x, pso.polish_iters)
        if val < best_val:
            best_x, best_val = x, val
            trace.append((pso.restarts * pso.iterations, val))

    design = prune_design(
        objective.design(best_x), pso.merge_tol, pso.weight_floor, objective.exact
    )
    value = objective.exact(design)
    report = certify(problem, design)
    log.info("criterion %.6g, efficiency bound %.6g", value, report.elb)
    return OptimResult(design, value, report, trace)
