"""Approximate and exact designs, information matrices and predictive variance."""

from __future__ import annotations

import csv
import logging
import math
from importlib import resources
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import RangeError
from .models import SurfaceModel, grad_surface

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
RANGE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Design:
    """Approximate design: support points with probability weights.

    ``points`` has shape ``(n, 2)`` with columns ``(c, d)``.  Weights must be
    positive and sum to one within 1e-12; use :meth:`normalized` to build a
    design from unnormalized weights.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if len(pts) != len(w):
            raise ValueError("points and weights differ in length")
        if len(w) == 0:
            raise ValueError("a design needs at least one support point")
        if np.any(pts < 0) or not np.all(np.isfinite(pts)):
            raise ValueError("doses must be finite and non-negative")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum():.15g}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, points, weights) -> "Design":
        w = np.asarray(weights, dtype=float)
        return cls(points, w / w.sum())

    @classmethod
    def uniform(cls, points) -> "Design":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    @property
    def size(self) -> int:
        return len(self.weights)

    def __len__(self):
        return self.size

    def __repr__(self):
        rows = ", ".join(
            f"({c:.4g}, {d:.4g}): {w:.4g}"
            for (c, d), w in zip(self.points, self.weights)
        )
        return f"Design({rows})"

    def merged(self, tol: float = 1e-9) -> "Design":
        """Combine support points closer than ``tol`` (weight-averaged)."""
        pts, w = merge_points(self.points, self.weights, tol)
        return Design.normalized(pts, w)


def merge_points(points, weights, tol):
    """Greedy single-linkage merge of points within ``tol``.

    Merged points sit at the weight-averaged position and carry the summed
    weight.  Order follows first appearance.
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(w)
    label = np.arange(n)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(pts[i] - pts[j]) <= tol and label[j] != label[i]:
                label[label == label[j]] = label[i]
    out_p, out_w = [], []
    for lab in dict.fromkeys(label):
        sel = label == lab
        ws = w[sel].sum()
        if sel.sum() == 1:
            out_p.append(pts[sel][0])
        else:
            out_p.append((pts[sel] * w[sel, None]).sum(axis=0) / ws)
        out_w.append(ws)
    return np.array(out_p), np.array(out_w)


@dataclass(frozen=True, eq=False)
class ExactDesign:
    points: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        r = np.array(self.counts, dtype=int).reshape(-1)
        if len(pts) != len(r):
            raise ValueError("points and counts differ in length")
        if np.any(r < 1):
            raise ValueError("counts must be at least 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "counts", r)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def expanded(self) -> np.ndarray:
        """One row per observation, shape ``(N, 2)``."""
        return np.repeat(self.points, self.counts, axis=0)


@dataclass(frozen=True)
class ConfidenceConfig:
    alpha: float = 0.05
    sigma_hat: float = 1.0
    n_total: int = 1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.sigma_hat <= 0:
            raise ValueError("sigma_hat must be positive")
        if self.n_total < 1:
            raise ValueError("n_total must be positive")


def information_matrix(design: Design, model: SurfaceModel) -> np.ndarray:
    """M(xi, theta) = sum_i w_i g(x_i) g(x_i)^T."""
    g = grad_surface(model, design.points)
    m = (g * design.weights[:, None]).T @ g
    return 0.5 * (m + m.T)


class GeneralizedInverse:
    """Symmetric generalized inverse of an information matrix.

    The matrix is first scaled to unit diagonal, ``M = D S D``; the
    eigen-pseudoinverse of ``S`` (eigenvalues below ``RANK_TOL`` times the
    largest are dropped) gives ``G = D^-1 S^+ D^-1``.  ``M G M = M`` holds
    and ``G = M^-1`` whenever ``M`` is nonsingular.  Scaling keeps
    nonsingular but badly conditioned matrices (parameters on very
    different scales) from being truncated.
    """

    def __init__(self, m: np.ndarray, rank_tol: float = RANK_TOL):
        m = np.asarray(m, dtype=float)
        diag = np.diag(m).copy()
        scale = np.sqrt(np.where(diag > 0, diag, 1.0))
        s = m / np.outer(scale, scale)
        vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
        top = max(vals[-1], 0.0)
        keep = vals > rank_tol * top if top > 0 else np.zeros_like(vals, bool)
        self.m = m
        self.scale = scale
        self.eigenvalues = vals
        self.basis = vecs[:, keep]
        inv_s = (self.basis / vals[keep]) @ self.basis.T
        self.matrix = inv_s / np.outer(scale, scale)
        self.rank = int(keep.sum())

    @property
    def nonsingular(self) -> bool:
        return self.rank == len(self.scale)

    def range_residual(self, g) -> np.ndarray:
        """Relative norm of the part of ``g`` outside range(M)."""
        z = np.atleast_2d(g) / self.scale
        if self.nonsingular:
            return np.zeros(len(z))
        r = z - (z @ self.basis) @ self.basis.T
        nz = np.linalg.norm(z, axis=1)
        nr = np.linalg.norm(r, axis=1)
        return np.where(nz > 0, nr / np.where(nz > 0, nz, 1.0), 0.0)

    def check_range(self, g, points=None, tol: float = RANGE_TOL):
        """Raise :class:`RangeError` naming the first gradient outside range(M)."""
        res = self.range_residual(g)
        bad = np.flatnonzero(res > tol)
        if bad.size:
            i = int(bad[0])
            pt = None if points is None else np.atleast_2d(points)[i]
            raise RangeError(
                f"gradient at point {i} {'' if pt is None else tuple(pt)} "
                f"is outside range(M) (relative residual {res[i]:.3g})",
                point=pt,
                index=i,
            )

    def quad(self, g) -> np.ndarray:
        """Row-wise ``g^T G g`` for ``g`` of shape ``(n, m)``."""
        g = np.atleast_2d(g)
        return np.einsum("ij,jk,ik->i", g, self.matrix, g)


def generalized_inverse(m: np.ndarray) -> np.ndarray:
    return GeneralizedInverse(m).matrix


def predictive_variances(points, design: Design, model: SurfaceModel, check=True):
    """phi(x, xi, theta) at every row of ``points``."""
    pts = np.atleast_2d(points)
    ginv = GeneralizedInverse(information_matrix(design, model))
    g = grad_surface(model, pts)
    if check:
        ginv.check_range(g, pts)
    return np.maximum(ginv.quad(g), 0.0)


def predictive_variance(x0, design: Design, model: SurfaceModel) -> float:
    """Asymptotic variance g(x0)^T M^- g(x0) of the predicted response at ``x0``.

    Raises
    ------
    RangeError
        If g(x0) is not in the range of the information matrix.
    """
    return float(predictive_variances(np.asarray(x0, float)[None], design, model)[0])


def confidence_halfwidth(
    x0, design: Design, model: SurfaceModel, conf: ConfidenceConfig
) -> float:
    """Half-width z_{1-alpha/2} sigma_hat / sqrt(N) phi^{1/2} of the pointwise interval."""
    z = stats.norm.ppf(1.0 - conf.alpha / 2.0)
    phi = predictive_variance(x0, design, model)
    return float(z * conf.sigma_hat / math.sqrt(conf.n_total) * math.sqrt(phi))


def round_exact(design: Design, n_total: int) -> ExactDesign:
    """Efficient apportionment of ``n_total`` observations (Pukelsheim-Rieder).

    Starts from ``ceil((N - n/2) w_i)`` and then raises the count with the
    smallest ``r_i / w_i`` or lowers the count with the largest
    ``(r_i - 1) / w_i`` until the counts sum to ``N``.  Ties go to the lowest
    index.
    """
    w = design.weights
    n = len(w)
    if n_total < n:
        raise ValueError(f"need at least {n} observations for {n} support points")
    r = np.ceil((n_total - n / 2.0) * w).astype(int)
    while r.sum() < n_total:
        r[int(np.argmin(r / w))] += 1
    while r.sum() > n_total:
        r[int(np.argmax((r - 1) / w))] -= 1
    return ExactDesign(design.points.copy(), r)


# -- CSV I/O ---------------------------------------------------------------


def read_design_csv(path, merge_tol: float = 1e-9) -> Design:
    """Load ``c,d,weight`` rows.  Weights are renormalized; a warning is
    logged when they were off by more than 1e-6.  Duplicate points are merged.
    """
    pts, w = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"c", "d", "weight"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            pts.append((float(row["c"]), float(row["d"])))
            w.append(float(row["weight"]))
    w = np.array(w)
    if abs(w.sum() - 1.0) > 1e-6:
        log.warning("%s: weights sum to %.6g, renormalizing", path, w.sum())
    pts, w = merge_points(np.array(pts), w, merge_tol)
    return Design.normalized(pts, w)


def write_design_csv(design: Design, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["c", "d", "weight"])
        for (c, d), w in zip(design.points, design.weights):
            out.writerow([repr(float(c)), repr(float(d)), repr(float(w))])


def write_exact_csv(exact: ExactDesign, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["c", "d", "count"])
        for (c, d), r in zip(exact.points, exact.counts):
            out.writerow([repr(float(c)), repr(float(d)), int(r)])


def read_exact_csv(path) -> ExactDesign:
    pts, r = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pts.append((float(row["c"]), float(row["d"])))
            r.append(int(row["count"]))
    return ExactDesign(np.array(pts), np.array(r))


# -- shipped designs -------------------------------------------------------


def _design_dir():
    return resources.files("meddesign") / "data" / "designs"


def tabulated_groups() -> list[str]:
    """Names of the shipped design collections (one per scenario)."""
    return sorted(p.name for p in _design_dir().iterdir() if p.is_dir())


def tabulated_names(group: str) -> list[str]:
    return sorted(
        p.name[:-4] for p in (_design_dir() / group).iterdir() if p.name.endswith(".csv")
    )


def tabulated_design(group: str, name: str) -> Design:
    """Load a shipped design, e.g. ``tabulated_design("case_study", "med_10_50")``.

    Duplicate support points are merged.
    """
    path = _design_dir() / group / f"{name}.csv"
    if not path.is_file():
        raise FileNotFoundError(f"no shipped design {group}/{name}")
    with resources.as_file(path) as p:
        return read_design_csv(p)
