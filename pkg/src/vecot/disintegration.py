"""Grid densities, their disintegration into needles, and CD(kappa, N) checks.

Two potentials have closed-form leaf structure: the orthogonal projection
onto the first m coordinates, whose leaves are axis-aligned m-dimensional
slices, and the distance from a center point, whose leaves are rays.  For
densities tabulated on a regular grid we split the density into conditional
densities on those leaves (needles), with mixture weights, and check that
the weighted mixture reassembles the original.  Ray conditionals pick up
the Jacobian factor r^(n-1).

A 1-D needle with density g = e^(-rho) satisfies the curvature-dimension
condition CD(kappa, N) when rho'' - (rho')^2/(N-1) >= kappa on its
interior; cd_check_1d evaluates that with central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import VecotError

__all__ = [
    "EmptySlice",
    "CenterOutsideBox",
    "GeometryMismatch",
    "NonpositiveDensity",
    "TooFewPoints",
    "GridDensity",
    "Needle",
    "CdReport",
    "tabulate_density",
    "slice_disintegration",
    "radial_disintegration",
    "reassemble",
    "l1_distance",
    "cd_check_1d",
]


class EmptySlice(VecotError):
    """A slice carries no mass; it is skipped with zero weight."""


class CenterOutsideBox(VecotError):
    """The radial center must lie strictly inside the grid box."""


class GeometryMismatch(VecotError):
    """Needles and target grid disagree on the ambient space."""


class NonpositiveDensity(VecotError):
    """A needle density vanishes in its interior; -log g is undefined there."""


class TooFewPoints(VecotError):
    """Finite differences need at least five grid points."""


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density sampled at the cell centers of a regular grid."""

    box: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != box.shape[0]:
            raise GeometryMismatch(
                f"samples have {samples.ndim} axes but the box has {box.shape[0]}"
            )
        if np.any(box[:, 1] <= box[:, 0]):
            raise GeometryMismatch("box bounds must satisfy lo < hi")
        if not np.all(np.isfinite(samples)) or np.any(samples < 0):
            raise NonpositiveDensity("density samples must be finite and nonnegative")
        if samples.sum() == 0.0:
            raise NonpositiveDensity("density must carry positive total mass")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "samples", samples)

    @property
    def dim(self) -> int:
        return self.box.shape[0]

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.samples.shape

    @property
    def steps(self) -> np.ndarray:
        return (self.box[:, 1] - self.box[:, 0]) / np.array(self.resolution)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.steps))

    def centers(self, axis: int) -> np.ndarray:
        lo, hi = self.box[axis]
        k = self.resolution[axis]
        return lo + (np.arange(k) + 0.5) * (hi - lo) / k

    @property
    def total_mass(self) -> float:
        return float(self.samples.sum() * self.cell_volume)

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell centers and the mass each cell carries."""
        grids = np.meshgrid(*[self.centers(a) for a in range(self.dim)], indexing="ij")
        points = np.stack([g.ravel() for g in grids], axis=1)
        return points, self.samples.ravel() * self.cell_volume


def tabulate_density(box, resolution, fn) -> GridDensity:
    """Evaluate a density function at the cell centers of a regular grid."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    resolution = tuple(int(r) for r in np.atleast_1d(resolution))
    if len(resolution) == 1 and box.shape[0] > 1:
        resolution = resolution * box.shape[0]
    axes = [
        box[a, 0] + (np.arange(resolution[a]) + 0.5) * (box[a, 1] - box[a, 0]) / resolution[a]
        for a in range(box.shape[0])
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    samples = np.asarray(fn(points), dtype=float).reshape(resolution)
    return GridDensity(box=box, samples=samples)


@dataclass(frozen=True)
class Needle:
    """Conditional density on one leaf, sampled on the leaf's own grid.

    ``axes`` hold the leaf-internal parameter grids (cell centers, uniform
    spacing), ``g`` the density over their product, and a parameter vector
    p embeds as ``base + directions @ p``.  The density is normalized to
    unit quadrature mass at construction; a massless needle raises
    EmptySlice.
    """

    axes: tuple[np.ndarray, ...]
    g: np.ndarray
    base: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        g = np.asarray(self.g, dtype=float)
        base = np.asarray(self.base, dtype=float)
        directions = np.asarray(self.directions, dtype=float)
        if g.shape != tuple(len(a) for a in axes):
            raise GeometryMismatch(f"density shape {g.shape} does not match axes")
        if directions.ndim != 2 or directions.shape[1] != len(axes):
            raise GeometryMismatch("directions must be one column per needle axis")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise NonpositiveDensity("needle density must be finite and nonnegative")
        mass = g.sum() * np.prod([_spacing(a) for a in axes])
        if mass <= 0.0:
            raise EmptySlice("needle carries no mass")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "g", g / mass)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "directions", directions)

    @property
    def leaf_dim(self) -> int:
        return len(self.axes)

    @property
    def t(self) -> np.ndarray:
        if self.leaf_dim != 1:
            raise GeometryMismatch("parameter grid t is defined for 1-d needles only")
        return self.axes[0]

    @property
    def spacing(self) -> np.ndarray:
        return np.array([_spacing(a) for a in self.axes])

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Embedded cell positions and their masses (summing to 1)."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        params = np.stack([g.ravel() for g in grids], axis=1)
        points = self.base[None, :] + params @ self.directions.T
        masses = self.g.ravel() * float(np.prod(self.spacing))
        return points, masses


def _spacing(axis: np.ndarray) -> float:
    return float(axis[1] - axis[0]) if len(axis) > 1 else 1.0


def slice_disintegration(density: GridDensity, m: int) -> tuple[list[Needle], np.ndarray]:
    """Split a density into its slices over the first m coordinates.

    These are the leaves of the projection potential onto the last n - m
    coordinates' complement: one slice per tail cell block, conditional
    density the renormalized restriction, weight the slice's share of the
    total mass.  All-zero slices are skipped.  Weights sum to 1.
    """
    n = density.dim
    if not 0 < m < n:
        raise GeometryMismatch(f"need 0 < m < {n}, got m = {m}")
    head_axes = tuple(density.centers(a) for a in range(m))
    tail_res = density.resolution[m:]
    tail_centers = [density.centers(m + a) for a in range(n - m)]
    directions = np.eye(n)[:, :m]
    total = density.total_mass
    head_volume = float(np.prod(density.steps[:m]))
    needles: list[Needle] = []
    weights: list[float] = []
    for tail_idx in np.ndindex(*tail_res):
        block = density.samples[(slice(None),) * m + tail_idx]
        base = np.zeros(n)
        for a, idx in enumerate(tail_idx):
            base[m + a] = tail_centers[a][idx]
        try:
            needle = Needle(axes=head_axes, g=block, base=base, directions=directions)
        except EmptySlice:
            continue
        needles.append(needle)
        weights.append(block.sum() * density.cell_volume / total)
    return needles, np.array(weights)


def _circle_fan(count: int) -> np.ndarray:
    angles = (np.arange(count) + 0.5) * (2.0 * np.pi / count)
    return np.column_stack([np.cos(angles), np.sin(angles)])


def _sphere_fan(count: int) -> np.ndarray:
    # Fibonacci lattice: near-uniform, fully deterministic
    k = np.arange(count)
    z = 1.0 - (2.0 * k + 1.0) / count
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def radial_disintegration(
    density: GridDensity,
    center,
    n_directions: int = 64,
    n_radial: int | None = None,
) -> tuple[list[Needle], np.ndarray]:
    """Split a density into ray conditionals around a center.

    The rays of the distance-from-center potential are the leaves; along a
    ray the conditional density is ``r^(n-1)`` times the interpolated
    density, normalized.  Directions form a deterministic fan (midpoint
    angles on the circle, a Fibonacci lattice on the sphere) with equal
    angular weights, and each ray is sampled up to its exit from the box.
    """
    center = np.asarray(center, dtype=float)
    n = density.dim
    if center.shape != (n,):
        raise GeometryMismatch(f"center must have {n} coordinates")
    if np.any(center <= density.box[:, 0]) or np.any(center >= density.box[:, 1]):
        raise CenterOutsideBox(f"center {center.tolist()} is not strictly inside the box")
    if n == 1:
        fan = np.array([[1.0], [-1.0]])
    elif n == 2:
        fan = _circle_fan(n_directions)
    elif n == 3:
        fan = _sphere_fan(n_directions)
    else:
        raise GeometryMismatch("radial fans are implemented for dimensions 1 to 3")
    if n_radial is None:
        n_radial = 4 * max(density.resolution)
    needles: list[Needle] = []
    raw = []
    for direction in fan:
        with np.errstate(divide="ignore"):
            exits = np.where(
                direction > 0,
                (density.box[:, 1] - center) / direction,
                np.where(direction < 0, (density.box[:, 0] - center) / direction, np.inf),
            )
        r_max = float(exits.min())
        dt = r_max / n_radial
        t = (np.arange(n_radial) + 0.5) * dt
        rho = _interpolate(density, center[None, :] + t[:, None] * direction[None, :])
        g = t ** (n - 1) * rho
        mass = g.sum() * dt
        if mass <= 0.0:
            continue
        needles.append(
            Needle(axes=(t,), g=g, base=center, directions=direction[:, None])
        )
        raw.append(mass)
    raw = np.array(raw)
    return needles, raw / raw.sum()


def _index_fractions(density: GridDensity, points: np.ndarray):
    """Lower cell index and interpolation fraction per axis, edge-clamped."""
    idx = np.empty(points.shape, dtype=int)
    frac = np.empty(points.shape)
    for a in range(density.dim):
        q = (points[:, a] - density.box[a, 0]) / density.steps[a] - 0.5
        lo = np.clip(np.floor(q).astype(int), 0, density.resolution[a] - 2)
        if density.resolution[a] == 1:
            lo = np.zeros(len(points), dtype=int)
            f = np.zeros(len(points))
        else:
            f = np.clip(q - lo, 0.0, 1.0)
        idx[:, a] = lo
        frac[:, a] = f
    return idx, frac


def _interpolate(density: GridDensity, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of the cell-center samples."""
    idx, frac = _index_fractions(density, points)
    out = np.zeros(len(points))
    for corner in np.ndindex(*(2,) * density.dim):
        weight = np.ones(len(points))
        cell = []
        for a, c in enumerate(corner):
            weight *= frac[:, a] if c else 1.0 - frac[:, a]
            cell.append(np.minimum(idx[:, a] + c, density.resolution[a] - 1))
        out += weight * density.samples[tuple(cell)]
    return out


def reassemble(needles: list[Needle], weights, target: GridDensity) -> GridDensity:
    """Deposit the weighted needle mixture back onto a grid.

    Each needle cell splats its mass multilinearly onto the target cells;
    the result is a unit-mass density regardless of the target's samples
    (only its geometry is used).  Slice needles land exactly on cell
    centers, so their reassembly is exact up to rounding.
    """
    weights = np.asarray(weights, dtype=float)
    if len(weights) != len(needles):
        raise GeometryMismatch("one weight per needle required")
    n = target.dim
    mass_grid = np.zeros(target.resolution)
    for needle, w in zip(needles, weights):
        if needle.base.shape != (n,) or needle.directions.shape[0] != n:
            raise GeometryMismatch("needle geometry does not match the target grid")
        points, masses = needle.quadrature()
        idx, frac = _index_fractions(target, points)
        for corner in np.ndindex(*(2,) * n):
            weight = np.ones(len(points))
            cell = []
            for a, c in enumerate(corner):
                weight *= frac[:, a] if c else 1.0 - frac[:, a]
                cell.append(np.minimum(idx[:, a] + c, target.resolution[a] - 1))
            np.add.at(mass_grid, tuple(cell), w * masses * weight)
    return GridDensity(box=target.box, samples=mass_grid / target.cell_volume)


def l1_distance(a: GridDensity, b: GridDensity, normalize: bool = True) -> float:
    """L1 distance between two densities on the same grid."""
    if a.dim != b.dim or a.resolution != b.resolution or not np.allclose(a.box, b.box):
        raise GeometryMismatch("densities live on different grids")
    fa, fb = a.samples, b.samples
    if normalize:
        fa = fa / a.total_mass
        fb = fb / b.total_mass
    return float(np.abs(fa - fb).sum() * a.cell_volume)


@dataclass(frozen=True)
class CdReport:
    """Outcome of a curvature-dimension check on a needle."""

    kappa: float
    N: float
    worst_violation: float
    passed: bool
    tol: float


def cd_check_1d(needle: Needle, kappa: float, N: float, tol: float | None = None) -> CdReport:
    """Check CD(kappa, N) for a 1-D needle density by finite differences.

    With rho = -log g the condition is ``rho'' - (rho')^2/(N-1) >= kappa``
    at interior grid points; for N = inf the middle term is dropped, and
    N = 1 demands a constant rho (then the condition reduces to kappa <= 0).
    Zeros at the ends of the grid are trimmed; interior zeros make rho
    undefined and raise NonpositiveDensity.  The default tolerance is ten
    times the squared grid spacing, matching the truncation error of the
    second-order stencils.  Normalization constants shift rho and leave the
    report unchanged.
    """
    t = needle.t
    g = needle.g
    positive = g > 0.0
    first, last = int(np.argmax(positive)), len(g) - 1 - int(np.argmax(positive[::-1]))
    g = g[first : last + 1]
    if np.any(g <= 0.0):
        raise NonpositiveDensity("needle density vanishes in its interior")
    if len(g) < 5:
        raise TooFewPoints(f"need at least 5 positive cells, got {len(g)}")
    h = float(t[1] - t[0])
    if tol is None:
        tol = 10.0 * h * h
    rho = -np.log(g)
    d1 = (rho[2:] - rho[:-2]) / (2.0 * h)
    d2 = (rho[2:] - 2.0 * rho[1:-1] + rho[:-2]) / (h * h)
    if N == 1:
        flat = max(float(np.abs(d1).max()), float(np.abs(d2).max()))
        worst = -kappa if flat <= np.sqrt(tol) else -np.inf
    elif np.isinf(N):
        worst = float((d2 - kappa).min())
    else:
        worst = float((d2 - d1 * d1 / (N - 1.0) - kappa).min())
    return CdReport(
        kappa=float(kappa), N=float(N), worst_violation=worst, passed=worst >= -tol, tol=float(tol)
    )
