"""Monotherapy dose-response functions and the two-drug interaction surface.

The combination response is

    eta((c, d), theta) = theta0 + eta_C(c) + eta_D(d) + gamma * eta_C(c) * eta_D(d)

with monotherapy parts taken from the linear, exponential, Emax and sigmoid
Emax families, all shifted so that they vanish at dose 0.  The full parameter
vector is always flattened as ``(theta0, theta_C..., theta_D..., gamma)``.

All evaluation functions accept scalars or arrays.  Scalars in give Python
floats (or 1-d gradient vectors) out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

KINDS = ("linear", "exponential", "emax", "sigmoid_emax")
N_PARAMS = {"linear": 1, "exponential": 2, "emax": 2, "sigmoid_emax": 3}
PARAM_NAMES = {
    "linear": ("delta",),
    "exponential": ("e1", "delta"),
    "emax": ("emax", "ed50"),
    "sigmoid_emax": ("emax", "ed50", "h"),
}


@dataclass(frozen=True)
class MonoModel:
    """One-dimensional regression function without placebo offset.

    Parameters
    ----------
    kind : str
        One of ``"linear"``, ``"exponential"``, ``"emax"``, ``"sigmoid_emax"``.
    params : tuple of float
        ``(delta,)``, ``(E1, delta)``, ``(Emax, ED50)`` or ``(Emax, ED50, h)``.
    """

    kind: str
    params: tuple = field(default=())

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in KINDS:
            raise DomainError(f"unknown monotherapy kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        params = tuple(float(p) for p in np.atleast_1d(self.params))
        object.__setattr__(self, "params", params)
        if len(params) != N_PARAMS[kind]:
            raise DomainError(
                f"{kind} needs {N_PARAMS[kind]} parameters, got {len(params)}"
            )
        if not all(np.isfinite(params)):
            raise DomainError(f"non-finite parameter in {kind}: {params}")
        if kind == "exponential" and params[1] == 0.0:
            raise DomainError("exponential delta must be non-zero")
        if kind in ("emax", "sigmoid_emax") and params[1] <= 0.0:
            raise DomainError("ED50 must be positive")
        if kind == "sigmoid_emax" and params[2] <= 0.0:
            raise DomainError("Hill parameter h must be positive")

    @property
    def dim(self) -> int:
        return N_PARAMS[self.kind]

    def with_params(self, params) -> "MonoModel":
        return MonoModel(self.kind, tuple(params))


def _as_dose(dose):
    arr = np.asarray(dose, dtype=float)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise DomainError("doses must be finite and non-negative")
    return arr


def _sigmoid_fraction(d, ed50, h):
    """d^h / (ed50^h + d^h), with the value 0 at d = 0 for every h > 0."""
    out = np.zeros_like(d)
    pos = d > 0
    # 1 / (1 + (ed50/d)^h) stays finite for large h where d^h would overflow
    with np.errstate(over="ignore"):
        out[pos] = 1.0 / (1.0 + np.exp(h * (np.log(ed50) - np.log(d[pos]))))
    return out


def _mono_values(kind, p, d):
    if kind == "linear":
        return p[0] * d
    if kind == "exponential":
        return p[0] * np.expm1(d / p[1])
    if kind == "emax":
        return p[0] * d / (p[1] + d)
    return p[0] * _sigmoid_fraction(d, p[1], p[2])


def _mono_gradients(kind, p, d):
    """Array of shape ``d.shape + (dim,)``."""
    if kind == "linear":
        return d[..., None].copy()
    if kind == "exponential":
        e1, delta = p
        ex = np.exp(d / delta)
        return np.stack([ex - 1.0, -e1 * ex * d / delta**2], axis=-1)
    if kind == "emax":
        emax, ed50 = p
        den = ed50 + d
        return np.stack([d / den, -emax * d / den**2], axis=-1)
    emax, ed50, h = p
    u = _sigmoid_fraction(d, ed50, h)
    w = u * (1.0 - u)
    logratio = np.zeros_like(d)
    pos = d > 0
    logratio[pos] = np.log(d[pos]) - np.log(ed50)
    # the h-derivative is defined as its limit 0 at d = 0
    return np.stack([u, -emax * h * w / ed50, emax * w * logratio], axis=-1)


def eval_mono(model: MonoModel, dose):
    """Evaluate a monotherapy function at one or more doses."""
    d = _as_dose(dose)
    val = _mono_values(model.kind, model.params, np.atleast_1d(d))
    return float(val[0]) if d.ndim == 0 else val.reshape(d.shape)


def grad_mono(model: MonoModel, dose):
    """Analytic derivative with respect to the monotherapy parameters.

    Returns a vector of length ``model.dim`` for a scalar dose, otherwise an
    array of shape ``dose.shape + (model.dim,)``.
    """
    d = _as_dose(dose)
    g = _mono_gradients(model.kind, model.params, np.atleast_1d(d))
    return g[0] if d.ndim == 0 else g.reshape(d.shape + (model.dim,))


@dataclass(frozen=True)
class SurfaceModel:
    """Two-drug interaction model.

    Parameters
    ----------
    theta0 : float
        Joint placebo response.
    model_c, model_d : MonoModel
        Dose-specific parts of substances C and D.
    gamma : float
        Interaction; positive is synergy, negative antagonism.
    """

    theta0: float
    model_c: MonoModel
    model_d: MonoModel
    gamma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta0", float(self.theta0))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def dim(self) -> int:
        return 2 + self.model_c.dim + self.model_d.dim

    @property
    def theta(self) -> np.ndarray:
        return np.array(
            [self.theta0, *self.model_c.params, *self.model_d.params, self.gamma]
        )

    def with_theta(self, theta) -> "SurfaceModel":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DomainError(f"expected {self.dim} parameters, got {theta.shape}")
        mc = self.model_c.dim
        return SurfaceModel(
            theta[0],
            self.model_c.with_params(theta[1 : 1 + mc]),
            self.model_d.with_params(theta[1 + mc : -1]),
            theta[-1],
        )

    def with_gamma(self, gamma: float) -> "SurfaceModel":
        return SurfaceModel(self.theta0, self.model_c, self.model_d, gamma)

    def swapped(self) -> "SurfaceModel":
        """Same surface with the roles of C and D exchanged."""
        return SurfaceModel(self.theta0, self.model_d, self.model_c, self.gamma)

    def param_names(self) -> list[str]:
        names = ["theta0"]
        names += [f"c.{n}" for n in PARAM_NAMES[self.model_c.kind]]
        names += [f"d.{n}" for n in PARAM_NAMES[self.model_d.kind]]
        return names + ["gamma"]


@dataclass(frozen=True)
class DesignRegion:
    """The dose rectangle [0, c_max] x [0, d_max]."""

    c_max: float
    d_max: float

    def __post_init__(self):
        if not (self.c_max > 0 and self.d_max > 0):
            raise DomainError("region bounds must be positive")
        object.__setattr__(self, "c_max", float(self.c_max))
        object.__setattr__(self, "d_max", float(self.d_max))

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.c_max, self.d_max])

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= -tol) & (pts <= self.upper + tol), axis=1)

    def clip(self, points) -> np.ndarray:
        return np.clip(points, 0.0, self.upper)


def _split_points(x):
    pts = np.asarray(x, dtype=float)
    if pts.shape[-1] != 2:
        raise DomainError("dose combinations must have shape (..., 2)")
    return pts[..., 0], pts[..., 1]


def eval_surface(model: SurfaceModel, x):
    """Response at dose combination(s) ``x`` of shape ``(2,)`` or ``(n, 2)``."""
    c, d = _split_points(x)
    ec = eval_mono(model.model_c, c)
    ed = eval_mono(model.model_d, d)
    val = model.theta0 + ec + ed + model.gamma * ec * ed
    return float(val) if np.ndim(val) == 0 else val


def grad_surface(model: SurfaceModel, x):
    """Gradient of the response with respect to the flattened parameters.

    Returns shape ``(m,)`` for a single point and ``(n, m)`` for ``n`` points.
    """
    c, d = _split_points(x)
    c1, d1 = np.atleast_1d(c), np.atleast_1d(d)
    ec = _mono_values(model.model_c.kind, model.model_c.params, _as_dose(c1))
    ed = _mono_values(model.model_d.kind, model.model_d.params, _as_dose(d1))
    gc = _mono_gradients(model.model_c.kind, model.model_c.params, c1)
    gd = _mono_gradients(model.model_d.kind, model.model_d.params, d1)
    g = np.concatenate(
        [
            np.ones(c1.shape + (1,)),
            (1.0 + model.gamma * ed)[..., None] * gc,
            (1.0 + model.gamma * ec)[..., None] * gd,
            (ec * ed)[..., None],
        ],
        axis=-1,
    )
    return g[0] if np.ndim(c) == 0 else g.reshape(np.shape(c) + (model.dim,))


def grad_surface_dose(model: SurfaceModel, x):
    """Gradient of the response with respect to the doses ``(c, d)``.

    Used for polishing extrema and bounding contour errors; computed by
    central differences on the monotherapy parts.
    """
    c, d = _split_points(np.atleast_2d(x))
    hc = 1e-6 * np.maximum(1.0, c)
    hd = 1e-6 * np.maximum(1.0, d)
    mc, md = model.model_c, model.model_d

    def deriv(m, t, h):
        lo = np.maximum(t - h, 0.0)
        return (eval_mono(m, t + h) - eval_mono(m, lo)) / (t + h - lo)

    ec, ed = eval_mono(mc, c), eval_mono(md, d)
    dc = deriv(mc, c, hc) * (1.0 + model.gamma * ed)
    dd = deriv(md, d, hd) * (1.0 + model.gamma * ec)
    return np.stack([dc, dd], axis=-1)



class _FixedDoses:
    """Monotherapy values and gradients at fixed doses for raw parameters."""

    def __init__(self, kind: str, dose):
        self.kind = kind
        self.d = np.asarray(dose, dtype=float)
        self.pos = self.d > 0
        self.log_d = np.log(self.d[self.pos])

    def __call__(self, p):
        kind, d = self.kind, self.d
        g = np.zeros((len(d), len(p)))
        if kind == "linear":
            g[:, 0] = d
            return p[0] * d, g
        if kind == "exponential":
            ex = np.exp(d / p[1])
            g[:, 0] = ex - 1.0
            g[:, 1] = -p[0] * ex * d / p[1] ** 2
            return p[0] * (ex - 1.0), g
        if kind == "emax":
            den = 1.0 / (p[1] + d)
            g[:, 0] = d * den
            g[:, 1] = -p[0] * d * den**2
            return p[0] * g[:, 0], g
        emax, ed50, h = p
        u = np.zeros(len(d))
        logratio = self.log_d - np.log(ed50)
        with np.errstate(over="ignore"):
            u[self.pos] = 1.0 / (1.0 + np.exp(-h * logratio))
        w = u * (1.0 - u)
        g[:, 0] = u
        g[:, 1] = -emax * h * w / ed50
        g[self.pos, 2] = emax * w[self.pos] * logratio
        return emax * u, g


class FixedDoseSurface:
    """Response and parameter gradient at fixed dose combinations.

    Skips parameter validation and object construction, which dominate the
    cost of small least-squares problems.  Call with a raw parameter vector
    ordered like :attr:`SurfaceModel.theta`; returns ``(eta, grad)`` with
    shapes ``(n,)`` and ``(n, m)``.
    """

    def __init__(self, template: SurfaceModel, points):
        c, d = _split_points(np.atleast_2d(points))
        self.mc = template.model_c.dim
        self.fc = _FixedDoses(template.model_c.kind, _as_dose(c))
        self.fd = _FixedDoses(template.model_d.kind, _as_dose(d))

    def __call__(self, theta):
        mc = self.mc
        gamma = theta[-1]
        ec, gc = self.fc(theta[1 : 1 + mc])
        ed, gd = self.fd(theta[1 + mc : -1])
        grad = np.empty((len(ec), len(theta)))
        grad[:, 0] = 1.0
        grad[:, 1 : 1 + mc] = (1.0 + gamma * ed)[:, None] * gc
        grad[:, 1 + mc : -1] = (1.0 + gamma * ec)[:, None] * gd
        grad[:, -1] = ec * ed
        return theta[0] + ec + ed + gamma * ec * ed, grad
