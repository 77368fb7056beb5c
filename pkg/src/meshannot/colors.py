"""Color spaces and statistical color models.

Lab conversion, CIEDE2000, per-channel 1D Gaussian mixtures fitted with EM,
optimal-transport distance between mixtures, and an excess-green index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:   # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f
        return wrap if not (args and callable(args[0])) else args[0]

# Variance floor for fitted mixtures, in 8-bit intensity units.
SIGMA_FLOOR = 0.5

_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)

# D65 reference white taken as the matrix's own white (row sums) so neutral
# inputs map to exactly a = b = 0.
_XN, _YN, _ZN = _RGB_TO_XYZ.sum(axis=1)


@dataclass(frozen=True)
class LabColor:
    """CIE Lab color under D65."""

    L: float
    a: float
    b: float

    def as_array(self) -> np.ndarray:
        return np.array([self.L, self.a, self.b], dtype=float)


@dataclass(frozen=True)
class GaussianMixture1D:
    """Univariate Gaussian mixture: weights sum to 1, stds above the floor."""

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        s = np.asarray(self.stds, dtype=float)
        if not (w.shape == m.shape == s.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("mixture arrays must be 1-D and of equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be non-negative and sum to 1")
        if np.any(s <= 0):
            raise ValueError("mixture stds must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def n_components(self) -> int:
        return self.weights.size

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _f_lab(t: np.ndarray) -> np.ndarray:
    eps = 216.0 / 24389.0
    kappa = 24389.0 / 27.0
    return np.where(t > eps, np.cbrt(t), (kappa * t + 16.0) / 116.0)


def rgb_to_lab(rgb) -> LabColor:
    """Convert an 8-bit sRGB triple to CIE Lab (D65)."""
    arr = np.asarray(rgb, dtype=float)
    if arr.shape != (3,):
        raise ValueError("rgb must be a 3-component value")
    if np.any(arr < 0) or np.any(arr > 255):
        raise ValueError("rgb components must be in [0, 255]")
    lin = _srgb_to_linear(arr / 255.0)
    xyz = _RGB_TO_XYZ @ lin
    fx, fy, fz = _f_lab(np.array([xyz[0] / _XN, xyz[1] / _YN, xyz[2] / _ZN]))
    return LabColor(116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))


def rgb_array_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Vectorized sRGB (uint8, shape (..., 3)) to Lab (float, same shape)."""
    arr = np.asarray(rgb, dtype=float) / 255.0
    lin = _srgb_to_linear(arr)
    xyz = lin @ _RGB_TO_XYZ.T
    xyz /= np.array([_XN, _YN, _ZN])
    f = _f_lab(xyz)
    out = np.empty_like(f)
    out[..., 0] = 116.0 * f[..., 1] - 16.0
    out[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    out[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return out


def ciede2000(c1: LabColor, c2: LabColor) -> float:
    """CIEDE2000 color difference with kL = kC = kH = 1."""
    L1, a1, b1 = c1.L, c1.a, c1.b
    L2, a2, b2 = c2.L, c2.a, c2.b

    C1 = math.hypot(a1, b1)
    C2 = math.hypot(a2, b2)
    Cbar = 0.5 * (C1 + C2)
    G = 0.5 * (1.0 - math.sqrt(Cbar**7 / (Cbar**7 + 25.0**7)))
    a1p = (1.0 + G) * a1
    a2p = (1.0 + G) * a2
    C1p = math.hypot(a1p, b1)
    C2p = math.hypot(a2p, b2)

    h1p = math.degrees(math.atan2(b1, a1p)) % 360.0 if (a1p != 0.0 or b1 != 0.0) else 0.0
    h2p = math.degrees(math.atan2(b2, a2p)) % 360.0 if (a2p != 0.0 or b2 != 0.0) else 0.0

    dLp = L2 - L1
    dCp = C2p - C1p

    if C1p * C2p == 0.0:
        dhp = 0.0
    else:
        dhp = h2p - h1p
        if dhp > 180.0:
            dhp -= 360.0
        elif dhp < -180.0:
            dhp += 360.0
    dHp = 2.0 * math.sqrt(C1p * C2p) * math.sin(math.radians(dhp) / 2.0)

    Lbp = 0.5 * (L1 + L2)
    Cbp = 0.5 * (C1p + C2p)
    if C1p * C2p == 0.0:
        hbp = h1p + h2p
    else:
        hsum = h1p + h2p
        if abs(h1p - h2p) <= 180.0:
            hbp = 0.5 * hsum
        elif hsum < 360.0:
            hbp = 0.5 * (hsum + 360.0)
        else:
            hbp = 0.5 * (hsum - 360.0)

    T = (
        1.0
        - 0.17 * math.cos(math.radians(hbp - 30.0))
        + 0.24 * math.cos(math.radians(2.0 * hbp))
        + 0.32 * math.cos(math.radians(3.0 * hbp + 6.0))
        - 0.20 * math.cos(math.radians(4.0 * hbp - 63.0))
    )
    dtheta = 30.0 * math.exp(-(((hbp - 275.0) / 25.0) ** 2))
    RC = 2.0 * math.sqrt(Cbp**7 / (Cbp**7 + 25.0**7))
    SL = 1.0 + 0.015 * (Lbp - 50.0) ** 2 / math.sqrt(20.0 + (Lbp - 50.0) ** 2)
    SC = 1.0 + 0.045 * Cbp
    SH = 1.0 + 0.015 * Cbp * T
    RT = -math.sin(math.radians(2.0 * dtheta)) * RC

    tL = dLp / SL
    tC = dCp / SC
    tH = dHp / SH
    return math.sqrt(tL * tL + tC * tC + tH * tH + RT * tC * tH)


def excess_green(rgb) -> float:
    """Excess-green index 2g - r - b over chromaticity coordinates.

    All-zero pixels map to 0 by convention.
    """
    arr = np.asarray(rgb, dtype=float)
    if arr.shape != (3,):
        raise ValueError("rgb must be a 3-component value")
    if np.any(arr < 0) or np.any(arr > 255):
        raise ValueError("rgb components must be in [0, 255]")
    total = arr.sum()
    if total == 0:
        return 0.0
    r, g, b = arr / total
    return float(2.0 * g - r - b)


def _kmeans_pp_init_weighted(values: np.ndarray, counts: np.ndarray, k: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ center selection over weighted distinct values."""
    centers = np.empty(k, dtype=float)
    probs0 = counts / counts.sum()
    centers[0] = values[rng.choice(values.size, p=probs0)]
    d2 = counts * (values - centers[0]) ** 2
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = centers[0]
            break
        centers[i] = values[rng.choice(values.size, p=d2 / total)]
        d2 = np.minimum(d2, counts * (values - centers[i]) ** 2)
    return centers


@njit(cache=True)
def _em_1d_weighted(values, counts, means0, floor, max_iter, tol):
    """Weighted EM over distinct sample values; returns (weights, means, stds)."""
    n = values.size
    k = means0.size
    means = means0.copy()
    # Lloyd refinement of the k-means++ start.
    for _ in range(10):
        sums = np.zeros(k)
        cnts = np.zeros(k)
        for i in range(n):
            best = 0
            bd = abs(values[i] - means[0])
            for c in range(1, k):
                d = abs(values[i] - means[c])
                if d < bd:
                    bd = d
                    best = c
            sums[best] += values[i] * counts[i]
            cnts[best] += counts[i]
        moved = False
        for c in range(k):
            if cnts[c] > 0:
                m = sums[c] / cnts[c]
                if m != means[c]:
                    moved = True
                means[c] = m
        if not moved:
            break

    total = counts.sum()
    mean_all = 0.0
    for i in range(n):
        mean_all += values[i] * counts[i]
    mean_all /= total
    var_all = 0.0
    for i in range(n):
        var_all += counts[i] * (values[i] - mean_all) ** 2
    var_all /= total
    s0 = math.sqrt(var_all)
    if s0 < floor:
        s0 = floor

    weights = np.full(k, 1.0 / k)
    stds = np.full(k, s0)
    log2pi = 0.5 * math.log(2.0 * math.pi)
    lp = np.zeros(k)
    prev_ll = -1e300
    for it in range(max_iter):
        ll = 0.0
        nk = np.zeros(k)
        s1 = np.zeros(k)
        s2 = np.zeros(k)
        for i in range(n):
            mx = -1e300
            for c in range(k):
                z = (values[i] - means[c]) / stds[c]
                v = -0.5 * z * z - math.log(stds[c]) - log2pi + math.log(weights[c])
                lp[c] = v
                if v > mx:
                    mx = v
            se = 0.0
            for c in range(k):
                se += math.exp(lp[c] - mx)
            lse = mx + math.log(se)
            ll += counts[i] * lse
            for c in range(k):
                r = math.exp(lp[c] - lse) * counts[i]
                nk[c] += r
                s1[c] += r * values[i]
                s2[c] += r * values[i] * values[i]
        for c in range(k):
            nkc = nk[c] if nk[c] > 1e-12 else 1e-12
            weights[c] = nk[c] / total
            m = s1[c] / nkc
            means[c] = m
            var = s2[c] / nkc - m * m
            if var < 0.0:
                var = 0.0
            s = math.sqrt(var)
            stds[c] = s if s > floor else floor
        if it > 0 and ll - prev_ll < tol:
            break
        prev_ll = ll
    wsum = weights.sum()
    for c in range(k):
        weights[c] /= wsum
    return weights, means, stds


def fit_gmm_1d(samples, n_components: int = 5, seed: int = 0,
               max_iter: int = 200, tol: float = 1e-6) -> GaussianMixture1D:
    """Fit a 1-D Gaussian mixture by EM from a seeded k-means++ start.

    Samples are compressed to distinct values with multiplicities before the
    weighted EM runs (8-bit channels have few distinct values). Deterministic
    for a fixed seed; terminates on max_iter or a log-likelihood gain below
    tol; stds floored at SIGMA_FLOOR.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot fit a mixture to an empty sample set")
    k = int(n_components)
    if k < 1:
        raise ValueError("n_components must be >= 1")

    rng = np.random.default_rng(seed)
    if np.ptp(x) == 0.0:
        # Point mass: every component sits on the sample value at the floor.
        return GaussianMixture1D(np.full(k, 1.0 / k), np.full(k, x[0]), np.full(k, SIGMA_FLOOR))

    values, counts = np.unique(x, return_counts=True)
    counts = counts.astype(float)
    means0 = _kmeans_pp_init_weighted(values, counts, k, rng)
    weights, means, stds = _em_1d_weighted(values, counts, means0,
                                           SIGMA_FLOOR, int(max_iter), float(tol))
    return GaussianMixture1D(weights, means, stds)


def _gaussian_w2(mu1, s1, mu2, s2) -> np.ndarray:
    return np.sqrt((mu1 - mu2) ** 2 + (s1 - s2) ** 2)


def _mixture_key(g: GaussianMixture1D) -> tuple:
    order = np.lexsort((g.weights, g.stds, g.means))
    return tuple(
        np.concatenate([g.means[order], g.stds[order], g.weights[order]]).tolist()
    )


def wasserstein_gmm_1d(g1: GaussianMixture1D, g2: GaussianMixture1D) -> float:
    """Optimal-transport distance between two 1-D Gaussian mixtures.

    The ground cost between components is the closed-form Gaussian W2
    sqrt((mu_i-mu_j)^2 + (s_i-s_j)^2); the component weight vectors are
    coupled by an exact transportation LP. Arguments are canonically ordered
    first so the result is bit-symmetric.
    """
    if _mixture_key(g2) < _mixture_key(g1):
        g1, g2 = g2, g1
    m, n = g1.n_components, g2.n_components
    cost = _gaussian_w2(
        g1.means[:, None], g1.stds[:, None], g2.means[None, :], g2.stds[None, :]
    )
    if m == 1 and n == 1:
        return float(cost[0, 0])

    # Transportation LP: row sums = weights of g1, column sums = weights of g2.
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([g1.weights, g2.weights])
    res = linprog(cost.ravel(), A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(max(res.fun, 0.0))


def mixture_mean_lab(gl: GaussianMixture1D, ga: GaussianMixture1D,
                     gb: GaussianMixture1D) -> LabColor:
    """Mixture means of per-channel Lab GMMs as a Lab color."""
    return LabColor(gl.mean(), ga.mean(), gb.mean())
