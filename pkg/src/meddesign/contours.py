"""Effective-dose contours: response range, marching squares, contour measure.

A MED_p set is the level set where the normalized response
``(eta - min) / R_max`` equals ``p / 100`` on the design region.  It is
approximated by marching squares on a regular grid.  The discrete uniform
measure used by the design criteria puts unit mass either on the distinct
marching-squares vertices (default) or on atoms equally spaced in arc
length along the curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DegenerateSurface, EmptyContour, NoSolution
from .models import DesignRegion, MonoModel, SurfaceModel, eval_mono, eval_surface

DEFAULT_CONTOUR_GRID = 201
DEFAULT_ATOMS_PER_LEVEL = 100
VERTEX_GRID = 51
MEASURE_METHODS = ("vertices", "arclength")


@dataclass(frozen=True)
class GridSpec:
    nc: int = DEFAULT_CONTOUR_GRID
    nd: int = DEFAULT_CONTOUR_GRID

    def __post_init__(self):
        if self.nc < 2 or self.nd < 2:
            raise ValueError("grid needs at least 2 points per axis")

    def axes(self, region: DesignRegion):
        return (
            np.linspace(0.0, region.c_max, self.nc),
            np.linspace(0.0, region.d_max, self.nd),
        )

    def points(self, region: DesignRegion) -> np.ndarray:
        """All grid nodes as an ``(nc * nd, 2)`` array, c varying slowest."""
        cs, ds = self.axes(region)
        cc, dd = np.meshgrid(cs, ds, indexing="ij")
        return np.column_stack([cc.ravel(), dd.ravel()])


def surface_grid(model: SurfaceModel, region: DesignRegion, grid: GridSpec):
    """Response on the grid; ``z[i, j] = eta(cs[i], ds[j])``."""
    cs, ds = grid.axes(region)
    ec = eval_mono(model.model_c, cs)[:, None]
    ed = eval_mono(model.model_d, ds)[None, :]
    return cs, ds, model.theta0 + ec + ed + model.gamma * ec * ed


def response_extrema(
    model: SurfaceModel, region: DesignRegion, grid: GridSpec = GridSpec()
):
    """Minimum, maximum and range R_max of the response on the region.

    Grid extrema are refined by a bounded Nelder-Mead polish.

    Raises
    ------
    DegenerateSurface
        If the range is at most 1e-12.
    """
    cs, ds, z = surface_grid(model, region, grid)
    bounds = [(0.0, region.c_max), (0.0, region.d_max)]

    def polish(sign, flat_index):
        i, j = np.unravel_index(flat_index, z.shape)
        x0 = np.array([cs[i], ds[j]])
        best = sign * z[i, j]
        res = optimize.minimize(
            lambda x: sign * eval_surface(model, region.clip(x)),
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "xatol": 1e-10 * max(region.c_max, region.d_max),
                "fatol": 1e-12 * max(1.0, abs(best)),
                "maxiter": 400,
            },
        )
        return sign * min(best, float(res.fun))

    lo = polish(1.0, int(np.argmin(z)))
    hi = polish(-1.0, int(np.argmax(z)))
    r_max = hi - lo
    if not r_max > 1e-12:
        raise DegenerateSurface("response is constant on the design region")
    return lo, hi, r_max


def normalized_level(model, region, x, extrema=None, grid: GridSpec = GridSpec()):
    """Percentage of the in-region effect, ``100 (eta(x) - min) / R_max``."""
    lo, _, r_max = extrema or response_extrema(model, region, grid)
    return 100.0 * (np.asarray(eval_surface(model, x)) - lo) / r_max


def ed_p_1d(model: MonoModel, theta0: float, dose_max: float, p: float) -> float:
    """Smallest dose in (0, dose_max] reaching p% of the effect at dose_max.

    The placebo offset ``theta0`` cancels in ``h(x) = f(x) - f(0)``; it is
    accepted for symmetry with the surface API.
    """
    if not 0 < p < 100:
        raise ValueError("p must lie in (0, 100)")
    h_max = eval_mono(model, dose_max)
    if h_max == 0.0:
        raise NoSolution("monotherapy effect vanishes at dose_max")
    target = p / 100.0

    def gap(x):
        return eval_mono(model, x) / h_max - target

    xs = np.linspace(0.0, dose_max, 1001)[1:]
    vals = gap(xs)
    tol = 1e-9 * dose_max
    prev_x, prev_v = 0.0, -target
    for x, v in zip(xs, vals):
        if v == 0.0:
            return float(x)
        if np.sign(v) != np.sign(prev_v):
            return float(optimize.brentq(gap, prev_x, x, xtol=tol))
        prev_x, prev_v = x, v
    raise NoSolution(f"no dose reaches {p}% of the effect at {dose_max}")


# -- marching squares ------------------------------------------------------


def marching_squares(cs, ds, z, level):
    """Contour polylines of ``z`` (indexed ``[c, d]``) at ``level``.

    Nodes are ``z >= level``.  Crossings are linearly interpolated on grid
    edges and shared between neighbouring cells, so polylines join without
    duplicated vertices.  Ambiguous saddle cells are split by comparing the
    average of the four corners with the level.

    Returns
    -------
    list of ndarray
        Each polyline is an ``(k, 2)`` array of ``(c, d)`` vertices; closed
        loops repeat their first vertex at the end.
    """
    z = np.asarray(z, dtype=float)
    nc, nd = z.shape
    above = z >= level

    # crossings on edges along c: between (i, j) and (i + 1, j)
    a, b = z[:-1, :], z[1:, :]
    hit_c = above[:-1, :] != above[1:, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = np.where(hit_c, (level - a) / (b - a), 0.0)
    # crossings on edges along d: between (i, j) and (i, j + 1)
    a, b = z[:, :-1], z[:, 1:]
    hit_d = above[:, :-1] != above[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        td = np.where(hit_d, (level - a) / (b - a), 0.0)

    n_c_edges = (nc - 1) * nd
    id_c = np.arange(n_c_edges).reshape(nc - 1, nd)
    id_d = n_c_edges + np.arange(nc * (nd - 1)).reshape(nc, nd - 1)

    pos = np.empty((n_c_edges + nc * (nd - 1), 2))
    pos[:n_c_edges, 0] = (cs[:-1][:, None] + tc * np.diff(cs)[:, None]).ravel()
    pos[:n_c_edges, 1] = np.broadcast_to(ds[None, :], (nc - 1, nd)).ravel()
    pos[n_c_edges:, 0] = np.broadcast_to(cs[:, None], (nc, nd - 1)).ravel()
    pos[n_c_edges:, 1] = (ds[:-1][None, :] + td * np.diff(ds)[None, :]).ravel()

    # per cell: edges e0 bottom (v0-v1), e1 right (v1-v2), e2 top (v3-v2),
    # e3 left (v0-v3) with v0=(i,j), v1=(i+1,j), v2=(i+1,j+1), v3=(i,j+1)
    e_ids = np.stack(
        [id_c[:, :-1], id_d[1:, :], id_c[:, 1:], id_d[:-1, :]], axis=-1
    )
    e_hit = np.stack(
        [hit_c[:, :-1], hit_d[1:, :], hit_c[:, 1:], hit_d[:-1, :]], axis=-1
    )
    count = e_hit.sum(axis=-1)

    segments = []
    two = np.argwhere(count == 2)
    for i, j in two:
        k = np.flatnonzero(e_hit[i, j])
        segments.append((e_ids[i, j, k[0]], e_ids[i, j, k[1]]))
    for i, j in np.argwhere(count == 4):
        center = 0.25 * (z[i, j] + z[i + 1, j] + z[i + 1, j + 1] + z[i, j + 1])
        e = e_ids[i, j]
        if (center >= level) == above[i, j]:
            segments += [(e[0], e[1]), (e[2], e[3])]
        else:
            segments += [(e[0], e[3]), (e[1], e[2])]

    return [pos[np.asarray(chain)] for chain in _chain_segments(segments)]


def _chain_segments(segments):
    adj: dict[int, list[int]] = {}
    for u, v in segments:
        u, v = int(u), int(v)
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, []).append(u)
    seen_edges = set()
    chains = []

    def walk(start):
        chain = [start]
        cur = start
        while True:
            nxt = None
            for v in adj[cur]:
                key = (min(cur, v), max(cur, v))
                if key not in seen_edges:
                    seen_edges.add(key)
                    nxt = v
                    break
            if nxt is None:
                return chain
            chain.append(nxt)
            cur = nxt

    ends = sorted(n for n, nb in adj.items() if len(nb) == 1)
    for n in ends:
        if any((min(n, v), max(n, v)) not in seen_edges for v in adj[n]):
            chains.append(walk(n))
    for n in sorted(adj):
        if any((min(n, v), max(n, v)) not in seen_edges for v in adj[n]):
            chains.append(walk(n))
    return chains


# -- MED sets and contour measure -------------------------------------------


@dataclass(frozen=True, eq=False)
class MedSet:
    """Polyline approximation of one MED_p contour."""

    level: float
    polylines: list = field(default_factory=list)

    @property
    def points(self) -> np.ndarray:
        if not self.polylines:
            return np.empty((0, 2))
        return np.concatenate(self.polylines)

    @property
    def empty(self) -> bool:
        return len(self.polylines) == 0

    @property
    def length(self) -> float:
        return float(
            sum(np.linalg.norm(np.diff(p, axis=0), axis=1).sum() for p in self.polylines)
        )


def extract_med_set(
    model: SurfaceModel,
    region: DesignRegion,
    grid: GridSpec = GridSpec(),
    p: float = 50.0,
    extrema=None,
) -> MedSet:
    """Marching-squares approximation of MED_p on the region.

    ``extrema`` may pass a precomputed ``(min, max, r_max)``.  An empty set
    is a valid result.
    """
    if not 0 < p < 100:
        raise ValueError("p must lie in (0, 100)")
    lo, _, r_max = extrema or response_extrema(model, region, grid)
    cs, ds, z = surface_grid(model, region, grid)
    lines = marching_squares(cs, ds, z, lo + p / 100.0 * r_max)
    return MedSet(float(p), lines)


def resample_polylines(polylines, n: int) -> np.ndarray:
    """``n`` points equally spaced in arc length over a set of polylines.

    Points sit at arc positions ``(k + 1/2) L / n`` of the total length ``L``
    walked polyline by polyline.  Degenerate (zero-length) sets fall back to
    their vertices.
    """
    lines = [np.asarray(p, float) for p in polylines if len(p)]
    if not lines:
        return np.empty((0, 2))
    seg_len = [np.linalg.norm(np.diff(p, axis=0), axis=1) for p in lines]
    total = float(sum(s.sum() for s in seg_len))
    if total <= 0:
        pts = np.concatenate(lines)
        return pts[np.linspace(0, len(pts) - 1, n).round().astype(int)]
    targets = (np.arange(n) + 0.5) * total / n
    out = np.empty((n, 2))
    offset = 0.0
    for line, sl in zip(lines, seg_len):
        cum = np.concatenate([[0.0], np.cumsum(sl)])
        sel = (targets >= offset) & (targets < offset + cum[-1])
        if line is lines[-1]:
            sel = targets >= offset
        if np.any(sel):
            s = np.clip(targets[sel] - offset, 0.0, cum[-1])
            k = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(sl) - 1)
            frac = np.where(sl[k] > 0, (s - cum[k]) / np.where(sl[k] > 0, sl[k], 1), 0)
            out[sel] = line[k] + frac[:, None] * (line[k + 1] - line[k])
        offset += cum[-1]
    return out


def unique_vertices(polylines, decimals: int = 12) -> np.ndarray:
    """Distinct polyline vertices in walk order (closing repeats dropped)."""
    if not polylines:
        return np.empty((0, 2))
    pts = np.concatenate([np.asarray(p, float) for p in polylines])
    _, first = np.unique(np.round(pts, decimals), axis=0, return_index=True)
    return pts[np.sort(first)]


@dataclass(frozen=True, eq=False)
class ContourMeasure:
    """Discrete uniform measure on the union of MED sets.

    Every atom has mass 1, so ``total_mass`` (l_C) equals the atom count.
    ``atom_levels[i]`` is the level whose contour atom ``i`` lies on.
    """

    atoms: np.ndarray
    masses: np.ndarray
    levels: tuple
    atom_levels: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def __len__(self):
        return len(self.masses)


def build_contour_measure(
    model: SurfaceModel,
    region: DesignRegion,
    grid: GridSpec | None = None,
    levels=(50.0,),
    atoms_per_level: int = DEFAULT_ATOMS_PER_LEVEL,
    extrema=None,
    method: str = "vertices",
) -> ContourMeasure:
    """Uniform discrete measure on the union of MED_p contours.

    Parameters
    ----------
    grid
        Contour extraction grid.  Defaults to 51 x 51 for ``"vertices"``
        and 201 x 201 for ``"arclength"``.
    method
        ``"vertices"`` puts unit mass on every distinct marching-squares
        vertex, so the atom density follows the grid.  ``"arclength"``
        resamples each level to ``atoms_per_level`` points equally spaced
        in arc length.

    Levels whose contour is empty contribute nothing.

    Raises
    ------
    EmptyContour
        If every level is empty.
    """
    if method not in MEASURE_METHODS:
        raise ValueError(f"method must be one of {MEASURE_METHODS}")
    if grid is None:
        grid = GridSpec(VERTEX_GRID, VERTEX_GRID) if method == "vertices" else GridSpec()
    extrema = extrema or response_extrema(model, region, grid)
    atoms, tags = [], []
    for p in levels:
        med = extract_med_set(model, region, grid, p, extrema=extrema)
        if med.empty:
            continue
        if method == "vertices":
            pts = unique_vertices(med.polylines)
        else:
            pts = resample_polylines(med.polylines, atoms_per_level)
        atoms.append(pts)
        tags.append(np.full(len(pts), float(p)))
    if not atoms:
        raise EmptyContour(f"no MED contour for levels {tuple(levels)}")
    atoms = np.concatenate(atoms)
    return ContourMeasure(
        atoms=atoms,
        masses=np.ones(len(atoms)),
        levels=tuple(float(p) for p in levels),
        atom_levels=np.concatenate(tags),
    )
