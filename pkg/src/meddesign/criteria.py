"""Design criteria on the MED contours and their equivalence-theorem checks.

The MED_q criterion is the L_q(mu) norm of the predictive variance phi over
the contour measure mu.  Its sensitivity function

    Psi(xi, x0) = (1/l_C) sum_x mu(x) phi(x)^(q-1) alpha(x0, x)^2 - crit^q

is <= 0 on the whole region exactly when xi is optimal, and
``1 - max Psi / crit^q`` bounds the efficiency of any design from below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contours import (
    DEFAULT_ATOMS_PER_LEVEL,
    ContourMeasure,
    GridSpec,
    build_contour_measure,
)
from .designs import Design, GeneralizedInverse, information_matrix
from .errors import RangeError, SingularInformation
from .models import DesignRegion, SurfaceModel, grad_surface

VERIFICATION_GRID = GridSpec(101, 101)


@dataclass(frozen=True, eq=False)
class CriterionConfig:
    """Everything needed to evaluate the MED_q criterion for one parameter.

    ``measure`` must have been built from ``levels`` for the model the
    criterion is evaluated at; :func:`criterion_config` does both at once.
    """

    q: float
    levels: tuple
    measure: ContourMeasure
    region: DesignRegion
    verification_grid: GridSpec = VERIFICATION_GRID

    def __post_init__(self):
        if not self.q >= 1:
            raise ValueError(f"q must be at least 1, got {self.q}")
        if tuple(map(float, self.levels)) != tuple(map(float, self.measure.levels)):
            raise ValueError("measure was built for different levels")


def criterion_config(
    model: SurfaceModel,
    region: DesignRegion,
    levels,
    q: float = 2.0,
    contour_grid: GridSpec | None = None,
    atoms_per_level: int = DEFAULT_ATOMS_PER_LEVEL,
    verification_grid: GridSpec = VERIFICATION_GRID,
    measure_method: str = "vertices",
) -> CriterionConfig:
    """Build the contour measure for ``model`` and wrap it in a config.

    See :func:`build_contour_measure` for ``contour_grid`` and
    ``measure_method``.
    """
    levels = tuple(float(p) for p in levels)
    measure = build_contour_measure(
        model, region, contour_grid, levels, atoms_per_level,
        method=measure_method,
    )
    return CriterionConfig(q, levels, measure, region, verification_grid)


@dataclass
class SensitivityReport:
    max_psi: float
    argmax: tuple
    elb: float
    support_residuals: np.ndarray
    criterion_value: float
    vacuous: bool = False
    singular: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.elb >= 0.99

    def as_dict(self) -> dict:
        return {
            "criterion": self.criterion_value,
            "max_psi": self.max_psi,
            "argmax": list(self.argmax),
            "elb": self.elb,
            "one_minus_elb": 1.0 - self.elb,
            "support_residuals": [float(v) for v in self.support_residuals],
            "vacuous": self.vacuous,
            "singular": self.singular,
        }


class MedCriterion:
    """MED_q criterion bound to one model and contour measure.

    Atom gradients are computed once, so repeated evaluation over many
    designs (as in the optimizer) only pays for the information matrix.
    """

    def __init__(self, model: SurfaceModel, cfg: CriterionConfig):
        self.model = model
        self.cfg = cfg
        self.q = float(cfg.q)
        self.atom_grads = grad_surface(model, cfg.measure.atoms)
        self.masses = cfg.measure.masses
        self.l_c = cfg.measure.total_mass

    def phis(self, design: Design, ginv: GeneralizedInverse | None = None):
        ginv = ginv or GeneralizedInverse(information_matrix(design, self.model))
        ginv.check_range(self.atom_grads, self.cfg.measure.atoms)
        return np.maximum(ginv.quad(self.atom_grads), 0.0)

    def _aggregate(self, phi):
        return float((np.dot(self.masses, phi**self.q) / self.l_c) ** (1.0 / self.q))

    def value(self, design: Design) -> float:
        return self._aggregate(self.phis(design))

    def psi(self, design: Design, x0) -> np.ndarray:
        """Sensitivity function at each row of ``x0``."""
        ginv = GeneralizedInverse(information_matrix(design, self.model))
        phi = self.phis(design, ginv)
        crit_q = np.dot(self.masses, phi**self.q) / self.l_c
        # alpha = g(x)^T K g(x0); K = G M G, which is M^-1 when M is regular
        k = ginv.matrix if ginv.nonsingular else ginv.matrix @ ginv.m @ ginv.matrix
        g0 = grad_surface(self.model, np.atleast_2d(x0))
        alpha = self.atom_grads @ k @ g0.T
        wts = self.masses * phi ** (self.q - 1.0) / self.l_c
        return wts @ alpha**2 - crit_q

    def batch_values(self, grads, weights) -> np.ndarray:
        """Criterion for a stack of designs given support gradients.

        ``grads`` has shape ``(S, n, m)`` and ``weights`` ``(S, n)``.  Designs
        with a numerically singular information matrix get ``inf``; this is
        the fast path used inside the particle swarm.
        """
        mats = np.einsum("sni,sn,snj->sij", grads, weights, grads)
        diag = np.einsum("sii->si", mats)
        scale = np.sqrt(np.where(diag > 0, diag, 1.0))
        scaled = mats / (scale[:, :, None] * scale[:, None, :])
        vals, vecs = np.linalg.eigh(scaled)
        ok = vals[:, 0] > 1e-10 * vals[:, -1]
        safe = np.where(ok[:, None], vals, 1.0)
        # phi = sum_k ((g/scale) . v_k)^2 / lambda_k
        proj = np.einsum("ai,si,sik->sak", self.atom_grads, 1.0 / scale, vecs)
        phi = np.einsum("sak,sk->sa", proj**2, 1.0 / safe)
        out = (phi**self.q @ self.masses / self.l_c) ** (1.0 / self.q)
        return np.where(ok & np.isfinite(out), out, np.inf)


def med_q_criterion(design: Design, model: SurfaceModel, cfg: CriterionConfig) -> float:
    """L_q norm of the predictive variance over the contour measure.

    Raises
    ------
    RangeError
        Naming the first atom whose gradient is outside range(M).
    """
    return MedCriterion(model, cfg).value(design)


def a_reduction(design: Design, model: SurfaceModel, cfg: CriterionConfig) -> float:
    """trace(M^- B) with B the measure average of g g^T (equals MED_1)."""
    g = grad_surface(model, cfg.measure.atoms)
    b = (g * cfg.measure.masses[:, None]).T @ g / cfg.measure.total_mass
    ginv = GeneralizedInverse(information_matrix(design, model))
    return float(np.trace(ginv.matrix @ b))


def d_criterion(design: Design, model: SurfaceModel) -> float:
    """-log det M(xi, theta).

    Raises
    ------
    SingularInformation
        If the information matrix is rank deficient.
    """
    m = information_matrix(design, model)
    ginv = GeneralizedInverse(m)
    if not ginv.nonsingular:
        raise SingularInformation(
            f"information matrix has rank {ginv.rank} < {len(m)}"
        )
    return float(-(np.sum(np.log(ginv.eigenvalues)) + 2 * np.sum(np.log(ginv.scale))))


def d_sensitivity(design: Design, model: SurfaceModel, x0) -> np.ndarray:
    """g(x0)^T M^-1 g(x0); at most m everywhere for a D-optimal design."""
    m = information_matrix(design, model)
    ginv = GeneralizedInverse(m)
    if not ginv.nonsingular:
        raise SingularInformation("information matrix is singular")
    return ginv.quad(grad_surface(model, np.atleast_2d(x0)))


def d_batch_values(grads, weights) -> np.ndarray:
    """-log det M for a stack of designs; ``inf`` when singular."""
    mats = np.einsum("sni,sn,snj->sij", grads, weights, grads)
    diag = np.einsum("sii->si", mats)
    scale = np.sqrt(np.where(diag > 0, diag, 1.0))
    scaled = mats / (scale[:, :, None] * scale[:, None, :])
    vals = np.linalg.eigvalsh(scaled)
    ok = vals[:, 0] > 1e-10 * vals[:, -1]
    logdet = np.sum(np.log(np.where(ok[:, None], vals, 1.0)), axis=1)
    logdet += 2 * np.sum(np.log(scale), axis=1)
    return np.where(ok, -logdet, np.inf)


def sensitivity_psi(x0, design: Design, model: SurfaceModel, cfg: CriterionConfig):
    """Psi(xi, x0) from the equivalence theorem; scalar for a single point."""
    out = MedCriterion(model, cfg).psi(design, x0)
    return float(out[0]) if np.ndim(x0) == 1 else out


def _max_over(points, values):
    k = int(np.argmax(values))  # first index on ties
    return float(values[k]), tuple(float(v) for v in points[k])


def efficiency_lower_bound(
    design: Design, model: SurfaceModel, cfg: CriterionConfig
) -> SensitivityReport:
    """Maximize Psi over the verification grid and report the efficiency bound.

    The maximum is taken over the grid together with the support points, so
    ``support_residuals <= max_psi`` always holds.  The bound
    ``1 - max(max_psi, 0) / crit^q`` is clamped to [0, 1]; a negative raw
    value is flagged as vacuous.
    """
    crit = MedCriterion(model, cfg)
    value = crit.value(design)
    grid = cfg.verification_grid.points(cfg.region)
    cand = np.concatenate([grid, design.points])
    psi = crit.psi(design, cand)
    max_psi, argmax = _max_over(cand, psi)
    raw = 1.0 - max(max_psi, 0.0) / value**crit.q
    ginv = GeneralizedInverse(information_matrix(design, model))
    return SensitivityReport(
        max_psi=max_psi,
        argmax=argmax,
        elb=min(max(raw, 0.0), 1.0),
        support_residuals=psi[len(grid):],
        criterion_value=value,
        vacuous=raw < 0,
        singular=not ginv.nonsingular,
        extra={"raw_elb": raw},
    )


def efficiency_ratio(
    candidate: Design, reference: Design, model: SurfaceModel, cfg: CriterionConfig
) -> float:
    """crit(reference) / crit(candidate)."""
    crit = MedCriterion(model, cfg)
    return crit.value(reference) / crit.value(candidate)


# -- Bayesian criterion ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Prior:
    """Discrete prior over full surface models."""

    models: tuple
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.models) or len(w) == 0:
            raise ValueError("prior needs one weight per support model")
        if np.any(w <= 0):
            raise ValueError("prior weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("prior weights must sum to 1")
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, models) -> "Prior":
        models = tuple(models)
        return cls(models, np.full(len(models), 1.0 / len(models)))

    @classmethod
    def over_gamma(cls, base: SurfaceModel, gammas, weights=None) -> "Prior":
        models = tuple(base.with_gamma(g) for g in gammas)
        if weights is None:
            return cls.uniform(models)
        w = np.asarray(weights, float)
        return cls(models, w / w.sum())


def prior_configs(prior: Prior, region, levels, **kwargs) -> list[CriterionConfig]:
    """One criterion config per prior support point, each with its own contours."""
    return [criterion_config(m, region, levels, **kwargs) for m in prior.models]


def bayesian_criterion(design: Design, prior: Prior, cfgs) -> float:
    """Prior-weighted average of the local MED_q criteria.

    Raises
    ------
    RangeError
        With ``prior_index`` set to the failing support point.
    """
    total = 0.0
    for j, (model, cfg, w) in enumerate(zip(prior.models, cfgs, prior.weights)):
        try:
            total += w * med_q_criterion(design, model, cfg)
        except RangeError as err:
            err.prior_index = j
            raise
    return float(total)


def bayesian_efficiency_lower_bound(design: Design, prior: Prior, cfgs) -> SensitivityReport:
    """Efficiency bound for the prior-averaged criterion.

    The directional derivative of sum_j pi_j crit_j towards a one-point
    design at x0 is ``-sum_j pi_j crit_j^(1-q) Psi_j(x0)``; convexity gives
    ``eff >= 1 - max_x0 sum_j pi_j crit_j^(1-q) Psi_j(x0) / sum_j pi_j crit_j``.
    """
    region = cfgs[0].region
    grid = cfgs[0].verification_grid.points(region)
    cand = np.concatenate([grid, design.points])
    total_psi = np.zeros(len(cand))
    value = 0.0
    for model, cfg, w in zip(prior.models, cfgs, prior.weights):
        crit = MedCriterion(model, cfg)
        v = crit.value(design)
        value += w * v
        total_psi += w * v ** (1.0 - crit.q) * crit.psi(design, cand)
    max_psi, argmax = _max_over(cand, total_psi)
    raw = 1.0 - max(max_psi, 0.0) / value
    return SensitivityReport(
        max_psi=max_psi,
        argmax=argmax,
        elb=min(max(raw, 0.0), 1.0),
        support_residuals=total_psi[len(grid):],
        criterion_value=value,
        vacuous=raw < 0,
        extra={"raw_elb": raw},
    )
