"""Pure geometric primitives.

Weighted plane fits, eigenvalue shape features, interior shrinking-ball
radii, and minimal-area oriented rectangles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, cKDTree


class DegenerateGeometryError(ValueError):
    """Input point set has no well-defined fit."""


@dataclass(frozen=True)
class Plane:
    """Plane n.x = offset with unit normal and inlier RMS in meters."""

    normal: np.ndarray
    offset: float
    rms: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        object.__setattr__(self, "normal", n)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.abs(self.signed_distance(points))


@dataclass(frozen=True)
class EigenFeatures:
    """Linearity / planarity / sphericity from sorted covariance eigenvalues."""

    linearity: float
    planarity: float
    sphericity: float


@dataclass(frozen=True)
class OrientedRect2D:
    """Minimal-area enclosing rectangle; width >= height, angle of the width axis."""

    center: tuple[float, float]
    angle: float          # radians, in [0, pi)
    width: float
    height: float

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def aspect(self) -> float:
        """min(w,h)/max(w,h), the elongation index."""
        return self.height / self.width if self.width > 0 else 0.0


def fit_plane(points: np.ndarray, weights: np.ndarray | None = None) -> Plane:
    """Least-squares plane through a weighted 3D point set.

    The normal is the least-eigenvalue direction of the weighted covariance;
    its sign is fixed so n.z >= 0, with ties broken toward +x then +y.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateGeometryError("plane fit needs at least 3 points")
    if weights is None:
        w = np.ones(pts.shape[0])
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0] or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be non-negative with positive sum")
    wsum = w.sum()
    centroid = (w[:, None] * pts).sum(axis=0) / wsum
    d = pts - centroid
    cov = (w[:, None] * d).T @ d / wsum
    evals, evecs = np.linalg.eigh(cov)   # ascending
    scale = max(evals[-1], 1e-30)
    if evals[1] / scale < 1e-12:
        raise DegenerateGeometryError("points are collinear or coincident")
    normal = evecs[:, 0]
    if normal[2] < 0 or (normal[2] == 0 and (normal[0] < 0 or (normal[0] == 0 and normal[1] < 0))):
        normal = -normal
    offset = float(normal @ centroid)
    resid = d @ normal
    rms = float(math.sqrt((w * resid**2).sum() / wsum))
    return Plane(normal, offset, rms)


def eigen_features(points: np.ndarray) -> EigenFeatures:
    """Shape features (l1-l2)/l1, (l2-l3)/l1, l3/l1 of the point covariance."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 3:
        raise DegenerateGeometryError("eigen features need at least 3 points")
    d = pts - pts.mean(axis=0)
    cov = d.T @ d / pts.shape[0]
    evals = np.linalg.eigvalsh(cov)[::-1]   # descending
    l1 = evals[0]
    if l1 <= 1e-30:
        raise DegenerateGeometryError("all points coincide")
    evals = np.clip(evals, 0.0, None)
    return EigenFeatures(
        float((evals[0] - evals[1]) / l1),
        float((evals[1] - evals[2]) / l1),
        float(evals[2] / l1),
    )


def shrinking_ball_radius(seed: np.ndarray, normal: np.ndarray,
                          samples: np.ndarray, r_init: float,
                          tree: cKDTree | None = None,
                          tol: float = 1e-4, max_iter: int = 30,
                          min_contact_cos: float = 0.0) -> float:
    """Radius of the maximal interior tangent ball at a surface point.

    The ball center moves along seed - r * normal. Each step pulls in the
    nearest surface sample q2 and updates r = |q1-q2|^2 / (2 n.(q1-q2));
    iteration stops on |dr| < tol, a non-shrinking update, a singular
    denominator, or max_iter. The result lies in (0, r_init].

    min_contact_cos > 0 additionally rejects near-tangential contacts
    (n.(q1-q2) below that fraction of |q1-q2|), which keeps radii stable on
    noisy surfaces where jittered samples graze the ball from the side.
    """
    if r_init <= 0:
        raise ValueError("r_init must be positive")
    q1 = np.asarray(seed, dtype=float)
    n = np.asarray(normal, dtype=float)
    nn = np.linalg.norm(n)
    if abs(nn - 1.0) > 1e-6:
        raise ValueError("normal must be unit length")
    pts = np.asarray(samples, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("empty neighbor set")
    if tree is None:
        tree = cKDTree(pts)

    r = float(r_init)
    for _ in range(max_iter):
        center = q1 - r * n
        # Nearest sample that is not the seed itself.
        dists, idx = tree.query(center, k=2)
        dists = np.atleast_1d(dists)
        idx = np.atleast_1d(idx)
        q2 = None
        for d_c, i in zip(dists, idx):
            if i < pts.shape[0] and np.linalg.norm(pts[i] - q1) > 1e-9:
                q2 = pts[i]
                d_center = d_c
                break
        if q2 is None:
            break
        if d_center >= r * (1.0 - 1e-9):
            break   # ball already empty of other samples
        delta = q1 - q2
        denom = 2.0 * float(n @ delta)
        if denom <= 1e-9:
            break   # coplanar q2, formula singular
        if denom < 2.0 * min_contact_cos * float(np.linalg.norm(delta)):
            break   # grazing contact, unreliable on noisy surfaces
        r_new = float(delta @ delta) / denom
        if not (0.0 < r_new < r):
            break
        shrink = r - r_new
        r = r_new
        if shrink < tol:
            break
    return min(max(r, 1e-12), float(r_init))


def _hull_points_2d(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    uniq = np.unique(pts, axis=0)
    if uniq.shape[0] < 3:
        return uniq
    try:
        hull = ConvexHull(uniq)
        return uniq[hull.vertices]
    except Exception:
        return uniq   # collinear


def min_area_rect(pixels: np.ndarray) -> OrientedRect2D:
    """Minimal-area oriented rectangle enclosing a 2D point set.

    The optimum is flush with a convex-hull edge, found by sweeping the hull
    edge directions. Degenerate extents are clamped to one pixel, so a
    single pixel yields a 1x1 rectangle.
    """
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if px.shape[0] == 0:
        raise ValueError("empty pixel set")
    hull = _hull_points_2d(px)

    best = None
    edges = np.roll(hull, -1, axis=0) - hull
    lens = np.linalg.norm(edges, axis=1)
    angles = np.unique(np.mod(np.arctan2(edges[lens > 1e-12, 1],
                                         edges[lens > 1e-12, 0]), math.pi / 2))
    if angles.size == 0:
        angles = np.array([0.0])
    for ang in angles:
        c, s = math.cos(ang), math.sin(ang)
        rot = hull @ np.array([[c, -s], [s, c]])
        lo = rot.min(axis=0)
        hi = rot.max(axis=0)
        w, h = hi - lo
        area = w * h
        if best is None or area < best[0] - 1e-12:
            cx, cy = (lo + hi) / 2.0
            # Back to world coordinates (inverse of the -ang rotation).
            center = (cx * c - cy * s, cx * s + cy * c)
            best = (area, ang, w, h, center)
    area, ang, w, h, center = best
    w = max(float(w), 1.0)
    h = max(float(h), 1.0)
    if h > w:
        w, h = h, w
        ang = ang + math.pi / 2
    return OrientedRect2D(center=(float(center[0]), float(center[1])),
                          angle=float(ang % math.pi), width=w, height=h)


def convex_hull_volume(points: np.ndarray) -> float:
    """Convex-hull volume of a 3D point set; 0 for degenerate inputs."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] < 4:
        return 0.0
    try:
        return float(ConvexHull(pts).volume)
    except Exception:
        return 0.0
