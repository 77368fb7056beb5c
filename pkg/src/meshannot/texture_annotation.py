"""Texture-side annotation: canvases, superpixels, click expansion, fine
segmentation, and region template matching with an NCC baseline.

A planar segment's charts are packed into a 2D canvas whose texels back-
reference mesh faces. SLIC superpixels over the canvas drive a click-seeded
binary expansion; refinement runs an iterated GMM + graph-cut over texels;
region matching compares rotation/scale-invariant shape and context
features.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.feature import match_template
from skimage.segmentation import slic

from .colors import (GaussianMixture1D, LabColor, ciede2000, fit_gmm_1d,
                     rgb_array_to_lab, wasserstein_gmm_1d)
from .energy import BinaryLabelingProblem, solve_binary_labeling
from .geometry import OrientedRect2D, min_area_rect
from .mesh_core import MeshError, TexturedMesh
from .plane_segmentation import PlanarSegment

DEFAULT_ALPHA = 1.0
DEFAULT_LAMBDA_S = 0.3
DEFAULT_EPS_SEED = 15.0
DEFAULT_EPS_REG = 30.0
DEFAULT_S_REG = 4.0
DEFAULT_REGION_SIZE = 16
# skimage's compactness operates on Lab-vs-grid-unit scale; 100 keeps
# assignments spatially coherent under texel noise while strong color
# boundaries still win.
DEFAULT_COMPACTNESS = 100.0
GRABCUT_GAMMA = 50.0
GRABCUT_COMPONENTS = 5

# CIEDE2000 spans ~0..100; the Wasserstein channel range is 0..255. Both are
# rescaled into the unit interval before entering the expansion energy.
RHO_SCALE = 100.0
W_SCALE = 255.0


class TextureError(ValueError):
    pass


@dataclass
class TextureCanvas:
    """Packed texture charts of one planar segment with per-texel lifting."""

    image: np.ndarray          # (H, W, 3) uint8
    covered: np.ndarray        # (H, W) bool
    face_ids: np.ndarray       # (H, W) int64, -1 where uncovered
    barys: np.ndarray          # (H, W, 3) float barycentric coords
    page_coords: np.ndarray    # (H, W, 3) int64 (page, x, y), -1 uncovered
    segment_id: int = -1

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[:2]

    @classmethod
    def from_image(cls, image: np.ndarray, covered: np.ndarray | None = None,
                   segment_id: int = -1) -> "TextureCanvas":
        """Standalone canvas without mesh back-references."""
        image = np.ascontiguousarray(image, dtype=np.uint8)
        h, w = image.shape[:2]
        if covered is None:
            covered = np.ones((h, w), dtype=bool)
        return cls(image=image, covered=covered.astype(bool),
                   face_ids=np.full((h, w), -1, dtype=np.int64),
                   barys=np.zeros((h, w, 3)),
                   page_coords=np.full((h, w, 3), -1, dtype=np.int64),
                   segment_id=segment_id)

    def lift(self, mesh: TexturedMesh, texel) -> tuple[np.ndarray, int] | None:
        x, y = int(texel[0]), int(texel[1])
        f = int(self.face_ids[y, x])
        if f < 0:
            return None
        tri = mesh.vertices[mesh.faces[f]]
        b = self.barys[y, x]
        return b[0] * tri[0] + b[1] * tri[1] + b[2] * tri[2], f


def _face_charts(mesh: TexturedMesh, faces: np.ndarray) -> list[list[int]]:
    """Group faces into charts: connected by mesh adjacency on one page with
    a shared UV edge (matching pixel coordinates)."""
    faces = [int(f) for f in faces]
    fset = set(faces)
    corner_px = {f: np.round(mesh.uv_pixels(f), 4) for f in faces}

    def shares_uv_edge(a: int, b: int) -> bool:
        ca = {tuple(p) for p in corner_px[a]}
        cb = {tuple(p) for p in corner_px[b]}
        return len(ca & cb) >= 2

    charts = []
    remaining = set(faces)
    while remaining:
        start = min(remaining)
        comp = {start}
        queue = deque([start])
        remaining.discard(start)
        while queue:
            f = queue.popleft()
            for nb in mesh.adjacency[f]:
                nb = int(nb)
                if (nb in remaining and mesh.face_pages[nb] == mesh.face_pages[f]
                        and shares_uv_edge(f, nb)):
                    comp.add(nb)
                    remaining.discard(nb)
                    queue.append(nb)
        charts.append(sorted(comp))
    return charts


def build_canvas(mesh: TexturedMesh, segment: PlanarSegment) -> TextureCanvas:
    """Assemble a segment's texture charts at native resolution.

    Charts pack left-to-right on shelves with a one-texel gutter; every
    covered texel records its owner face, barycentric coords, and source
    page texel.
    """
    faces = segment.faces
    if np.any(mesh.face_pages[faces] < 0):
        raise TextureError(f"segment {segment.id} has untextured faces")
    charts = _face_charts(mesh, faces)

    chart_boxes = []
    for chart in charts:
        px = np.vstack([mesh.uv_pixels(f) for f in chart])
        x0 = int(np.floor(px[:, 0].min()))
        y0 = int(np.floor(px[:, 1].min()))
        x1 = int(np.ceil(px[:, 0].max()))
        y1 = int(np.ceil(px[:, 1].max()))
        page = int(mesh.face_pages[chart[0]])
        ph, pw = mesh.pages[page].shape[:2]
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, pw), min(y1, ph)
        chart_boxes.append((chart, page, x0, y0, x1 - x0, y1 - y0))

    # Shelf packing (single shelf when one chart).
    gutter = 1 if len(chart_boxes) > 1 else 0
    cx = 0
    height = 0
    placements = []
    for chart, page, x0, y0, w, h in chart_boxes:
        placements.append((chart, page, x0, y0, w, h, cx, 0))
        cx += w + gutter
        height = max(height, h)
    width = max(cx - gutter, 1) if placements else 1

    img = np.zeros((height, width, 3), dtype=np.uint8)
    covered = np.zeros((height, width), dtype=bool)
    face_ids = np.full((height, width), -1, dtype=np.int64)
    barys = np.zeros((height, width, 3))
    page_coords = np.full((height, width, 3), -1, dtype=np.int64)

    for chart, page, x0, y0, w, h, dx, dy in placements:
        pimg = mesh.pages[page]
        for f in chart:   # ascending ids: lowest face wins shared texels
            tri = mesh.uv_pixels(f)
            fx0 = max(int(np.floor(tri[:, 0].min())), x0)
            fy0 = max(int(np.floor(tri[:, 1].min())), y0)
            fx1 = min(int(np.ceil(tri[:, 0].max())), x0 + w)
            fy1 = min(int(np.ceil(tri[:, 1].max())), y0 + h)
            if fx1 <= fx0 or fy1 <= fy0:
                continue
            xs = np.arange(fx0, fx1) + 0.5
            ys = np.arange(fy0, fy1) + 0.5
            gx, gy = np.meshgrid(xs, ys)
            p0, p1, p2 = tri
            det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
            if abs(det) < 1e-12:
                continue
            b1 = ((gx - p0[0]) * (p2[1] - p0[1]) - (gy - p0[1]) * (p2[0] - p0[0])) / det
            b2 = ((p1[0] - p0[0]) * (gy - p0[1]) - (p1[1] - p0[1]) * (gx - p0[0])) / det
            b0 = 1.0 - b1 - b2
            inside = (b0 >= -1e-9) & (b1 >= -1e-9) & (b2 >= -1e-9)
            yy, xx = np.nonzero(inside)
            page_x = xx + fx0
            page_y = yy + fy0
            can_x = page_x - x0 + dx
            can_y = page_y - y0 + dy
            free = ~covered[can_y, can_x]
            can_x, can_y = can_x[free], can_y[free]
            page_x, page_y = page_x[free], page_y[free]
            yy, xx = yy[free], xx[free]
            covered[can_y, can_x] = True
            face_ids[can_y, can_x] = f
            img[can_y, can_x] = pimg[page_y, page_x]
            barys[can_y, can_x, 0] = b0[yy, xx]
            barys[can_y, can_x, 1] = b1[yy, xx]
            barys[can_y, can_x, 2] = b2[yy, xx]
            page_coords[can_y, can_x, 0] = page
            page_coords[can_y, can_x, 1] = page_x
            page_coords[can_y, can_x, 2] = page_y

    return TextureCanvas(image=img, covered=covered, face_ids=face_ids,
                         barys=barys, page_coords=page_coords,
                         segment_id=segment.id)


@dataclass
class Superpixels:
    """SLIC partition of a canvas's covered texels."""

    labels: np.ndarray            # (H, W) int64, -1 uncovered
    n: int
    adjacency: list[set]
    gmms: list[tuple]             # per superpixel, per RGB channel
    mean_lab: np.ndarray          # (n, 3)
    counts: np.ndarray
    canvas: TextureCanvas

    def centroid_texels(self) -> np.ndarray:
        """Covered texel nearest each superpixel's centroid, as (n, 2) x,y."""
        out = np.zeros((self.n, 2), dtype=np.int64)
        ys, xs = np.nonzero(self.labels >= 0)
        labs = self.labels[ys, xs]
        for j in range(self.n):
            sel = labs == j
            sx, sy = xs[sel], ys[sel]
            cx, cy = sx.mean(), sy.mean()
            k = int(np.argmin((sx - cx) ** 2 + (sy - cy) ** 2))
            out[j] = (sx[k], sy[k])
        return out


def compute_superpixels(canvas: TextureCanvas, region_size: int = DEFAULT_REGION_SIZE,
                        compactness: float = DEFAULT_COMPACTNESS,
                        seed: int = 0, fit_gmms: bool = True) -> Superpixels:
    """SLIC in Lab space over covered texels.

    Superpixels are split into 4-connected components, orphan fragments are
    merged into the neighbor with the closest mean color, and ids are dense
    in scan order. Deterministic for a fixed seed. Per-superpixel color
    mixtures can be skipped by callers that only need geometry (sampling).
    """
    if region_size < 4:
        raise TextureError("region_size must be >= 4")
    covered = canvas.covered
    n_cov = int(covered.sum())
    if n_cov == 0:
        raise TextureError("empty canvas")
    h, w = canvas.shape
    n_segments = max(int(round(h * w / float(region_size * region_size))), 1)
    if n_segments == 1 or n_cov < 2 * region_size * region_size:
        raw = np.where(covered, 1, 0)
    else:
        # Unmasked SLIC over the full canvas with uncovered texels filled by
        # the mean color (the masked path scales color differently and loses
        # boundary adherence). Connectivity is enforced below by 4-connected
        # splitting + color-based orphan merging, not by skimage's
        # size-based relabeling.
        img = canvas.image.copy()
        img[~covered] = canvas.image[covered].mean(axis=0).astype(np.uint8)
        raw = slic(img, n_segments=n_segments, compactness=compactness,
                   start_label=1, enforce_connectivity=False,
                   convert2lab=True, channel_axis=-1)
        raw = np.where(covered, raw + 1, 0)

    # Split any 4-disconnected superpixel into components.
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    labels = np.full(canvas.shape, -1, dtype=np.int64)
    next_id = 0
    for value in np.unique(raw[covered]):
        comp, n_comp = ndimage.label(raw == value, structure=structure)
        for c in range(1, n_comp + 1):
            labels[comp == c] = next_id
            next_id += 1

    labels = _merge_orphans(canvas, labels, min_size=max(region_size, 8))
    labels = _dense_relabel(labels)
    n = labels.max() + 1

    lab_img = rgb_array_to_lab(canvas.image)
    adjacency: list[set] = [set() for _ in range(n)]
    a = labels[:, :-1]
    b = labels[:, 1:]
    for u, v in zip(a[(a >= 0) & (b >= 0) & (a != b)], b[(a >= 0) & (b >= 0) & (a != b)]):
        adjacency[u].add(int(v))
        adjacency[v].add(int(u))
    a = labels[:-1, :]
    b = labels[1:, :]
    for u, v in zip(a[(a >= 0) & (b >= 0) & (a != b)], b[(a >= 0) & (b >= 0) & (a != b)]):
        adjacency[u].add(int(v))
        adjacency[v].add(int(u))

    gmms = []
    mean_lab = np.zeros((n, 3))
    counts = np.zeros(n, dtype=np.int64)
    for j in range(n):
        sel = labels == j
        counts[j] = int(sel.sum())
        mean_lab[j] = lab_img[sel].mean(axis=0)
        if fit_gmms:
            pix = canvas.image[sel].astype(float)
            gmms.append(tuple(
                fit_gmm_1d(pix[:, c], GRABCUT_COMPONENTS, seed=seed * 7919 + j * 3 + c)
                for c in range(3)
            ))
    return Superpixels(labels=labels, n=int(n), adjacency=adjacency, gmms=gmms,
                       mean_lab=mean_lab, counts=counts, canvas=canvas)


def _merge_orphans(canvas: TextureCanvas, labels: np.ndarray, min_size: int) -> np.ndarray:
    """Merge tiny fragments into the adjacent label with the closest mean
    color; deterministic order."""
    labels = labels.copy()
    lab_img = rgb_array_to_lab(canvas.image)
    while True:
        ids, counts = np.unique(labels[labels >= 0], return_counts=True)
        if len(ids) <= 1:
            break
        small = [(c, i) for i, c in zip(ids, counts) if c < min_size]
        if not small:
            break
        small.sort()
        _, victim = small[0]
        sel = labels == victim
        mean_v = lab_img[sel].mean(axis=0)
        grown = ndimage.binary_dilation(sel)
        nb_ids = np.unique(labels[grown & ~sel & (labels >= 0)])
        if nb_ids.size == 0:
            break
        best = None
        for nb in nb_ids:
            dist = float(np.linalg.norm(lab_img[labels == nb].mean(axis=0) - mean_v))
            if best is None or dist < best[0] - 1e-12 or (abs(dist - best[0]) <= 1e-12 and nb < best[1]):
                best = (dist, int(nb))
        labels[sel] = best[1]
    return labels


def _dense_relabel(labels: np.ndarray) -> np.ndarray:
    """Relabel to 0..K-1 in first-texel scan order."""
    out = np.full_like(labels, -1)
    mapping: dict[int, int] = {}
    ys, xs = np.nonzero(labels >= 0)
    order = np.lexsort((xs, ys))
    for k in order:
        v = int(labels[ys[k], xs[k]])
        if v not in mapping:
            mapping[v] = len(mapping)
    for old, new in mapping.items():
        out[labels == old] = new
    return out


@dataclass
class Region:
    """A texel region with interior/exterior color models."""

    mask: np.ndarray              # (H, W) bool over the canvas
    count: int
    rect: OrientedRect2D
    fill_ratio: float
    gmms_in: tuple
    gmms_out: tuple | None
    contrast: float               # channel-avg Wasserstein(in, out)

    @classmethod
    def from_mask(cls, canvas: TextureCanvas, mask: np.ndarray,
                  seed: int = 0, max_exterior: int = 4096) -> "Region":
        mask = mask.astype(bool) & canvas.covered
        count = int(mask.sum())
        if count == 0:
            raise TextureError("empty region")
        ys, xs = np.nonzero(mask)
        pts = np.column_stack([xs, ys]).astype(float)
        corners = np.concatenate([pts + off for off in
                                  ((0, 0), (1, 0), (0, 1), (1, 1))])
        rect = min_area_rect(corners)
        fill = count / rect.area
        pix_in = canvas.image[mask].astype(float)
        gmms_in = tuple(fit_gmm_1d(pix_in[:, c], GRABCUT_COMPONENTS,
                                   seed=seed * 31 + c) for c in range(3))
        outside = canvas.covered & ~mask
        oy, ox = np.nonzero(outside)
        if oy.size:
            if oy.size > max_exterior:
                step = oy.size // max_exterior + 1
                oy, ox = oy[::step], ox[::step]
            pix_out = canvas.image[oy, ox].astype(float)
            gmms_out = tuple(fit_gmm_1d(pix_out[:, c], GRABCUT_COMPONENTS,
                                        seed=seed * 31 + 7 + c) for c in range(3))
            contrast = float(np.mean([
                wasserstein_gmm_1d(gi, go) for gi, go in zip(gmms_in, gmms_out)
            ]))
        else:
            gmms_out = None
            contrast = 0.0
        return cls(mask=mask, count=count, rect=rect, fill_ratio=float(fill),
                   gmms_in=gmms_in, gmms_out=gmms_out, contrast=contrast)

    def texels(self) -> np.ndarray:
        ys, xs = np.nonzero(self.mask)
        return np.column_stack([xs, ys])


@dataclass(frozen=True)
class RegionFeatureVector:
    d_shape: float       # aspect-index difference
    d_fill: float        # bbox fill-ratio difference
    d_context: float     # interior/exterior Wasserstein contrast difference

    def norm(self) -> float:
        return math.sqrt(self.d_shape**2 + self.d_fill**2 + self.d_context**2)


def region_feature_vector(template: Region, candidate: Region) -> RegionFeatureVector:
    return RegionFeatureVector(
        d_shape=abs(candidate.rect.aspect - template.rect.aspect),
        d_fill=abs(candidate.fill_ratio - template.fill_ratio),
        d_context=abs(candidate.contrast - template.contrast),
    )


def expansion_energy_problem(superpixels: Superpixels, s0: int,
                             alpha: float = DEFAULT_ALPHA,
                             lam: float = DEFAULT_LAMBDA_S) -> BinaryLabelingProblem:
    """Labeling instance of the click expansion: label 0 = non-similar,
    label 1 = similar to the seed superpixel s0."""
    if alpha <= 0:
        raise TextureError("alpha must be positive")
    n = superpixels.n
    w_j = np.zeros(n)
    for j in range(n):
        if j == s0:
            continue
        dists = [wasserstein_gmm_1d(superpixels.gmms[j][c], superpixels.gmms[s0][c])
                 for c in range(3)]
        w_j[j] = min(max(float(np.mean(dists)) / W_SCALE, 0.0), 1.0)
    # Seed mean color samples come from its first-order neighborhood.
    hood = sorted({s0} | set(superpixels.adjacency[s0]))
    weights = superpixels.counts[hood].astype(float)
    u0_arr = (superpixels.mean_lab[hood] * weights[:, None]).sum(axis=0) / weights.sum()
    u0 = LabColor(*u0_arr)
    rho = np.array([
        ciede2000(u0, LabColor(*superpixels.mean_lab[j])) / RHO_SCALE
        for j in range(n)
    ])
    edges = []
    eweights = []
    for i in range(n):
        for j in superpixels.adjacency[i]:
            if j > i:
                edges.append((i, j))
                eweights.append(abs(rho[i] - rho[j]))
    costs = np.column_stack([alpha * (1.0 - w_j), alpha * w_j])
    return BinaryLabelingProblem(costs, np.array(edges, dtype=np.int64).reshape(-1, 2),
                                 np.array(eweights, dtype=float), smoothness=lam)


def local_expand(superpixels: Superpixels, seed_click, alpha: float = DEFAULT_ALPHA,
                 lam: float = DEFAULT_LAMBDA_S, seed: int = 0) -> Region:
    """Expand the clicked superpixel into the similar-labeled region.

    Node costs follow the per-channel mixture-Wasserstein similarity to the
    seed superpixel; the smoothness weight between neighbors is the absolute
    difference of their CIEDE2000 distances to the seed's neighborhood mean
    color. The result is the connected similar component around the seed.
    """
    x, y = int(seed_click[0]), int(seed_click[1])
    h, w = superpixels.canvas.shape
    if not (0 <= x < w and 0 <= y < h) or superpixels.labels[y, x] < 0:
        raise TextureError(f"click ({x}, {y}) is not on a covered texel")
    s0 = int(superpixels.labels[y, x])
    problem = expansion_energy_problem(superpixels, s0, alpha, lam)
    labels, _ = solve_binary_labeling(problem)

    similar = set(np.nonzero(labels == 1)[0].tolist()) | {s0}
    comp = {s0}
    queue = deque([s0])
    while queue:
        cur = queue.popleft()
        for nb in superpixels.adjacency[cur]:
            if nb in similar and nb not in comp:
                comp.add(nb)
                queue.append(nb)
    mask = np.isin(superpixels.labels, sorted(comp))
    return Region.from_mask(superpixels.canvas, mask, seed=seed)


# ---------------------------------------------------------------------------
# GrabCut-style refinement
# ---------------------------------------------------------------------------

class _ColorGMM:
    """Full-covariance 3D GMM fitted by hard assignment, as in classic
    iterated-graph-cut foreground extraction."""

    def __init__(self, colors: np.ndarray, k: int, rng: np.random.Generator):
        self.k = k
        n = len(colors)
        if n < k:
            colors = np.concatenate([colors] * (k // max(n, 1) + 1))[: max(k, n)]
            n = len(colors)
        centers = np.empty((k, 3))
        centers[0] = colors[rng.integers(n)]
        d2 = ((colors - centers[0]) ** 2).sum(axis=1)
        for i in range(1, k):
            total = d2.sum()
            if total <= 0:
                centers[i:] = centers[0]
                break
            centers[i] = colors[rng.choice(n, p=d2 / total)]
            d2 = np.minimum(d2, ((colors - centers[i]) ** 2).sum(axis=1))
        assign = np.argmin(((colors[:, None] - centers[None]) ** 2).sum(axis=2), axis=1)
        for _ in range(10):
            for c in range(k):
                sel = colors[assign == c]
                if len(sel):
                    centers[c] = sel.mean(axis=0)
            new_assign = np.argmin(((colors[:, None] - centers[None]) ** 2).sum(axis=2), axis=1)
            if np.array_equal(new_assign, assign):
                break
            assign = new_assign
        self._estimate(colors, assign)

    def _estimate(self, colors: np.ndarray, assign: np.ndarray):
        k = self.k
        self.weights = np.full(k, 1e-8)
        self.means = np.zeros((k, 3))
        self.covs = np.tile(np.eye(3) * 25.0, (k, 1, 1))
        for c in range(k):
            sel = colors[assign == c]
            if len(sel) == 0:
                continue
            self.weights[c] = len(sel) / len(colors)
            self.means[c] = sel.mean(axis=0)
            diff = sel - self.means[c]
            self.covs[c] = diff.T @ diff / len(sel) + np.eye(3) * 1e-2
        self.weights /= self.weights.sum()
        self._chol = np.linalg.cholesky(self.covs)
        self._logdet = 2.0 * np.log(np.diagonal(self._chol, axis1=1, axis2=2)).sum(axis=1)

    def refit(self, colors: np.ndarray):
        assign = np.argmin(self._component_neglog(colors), axis=1)
        self._estimate(colors, assign)

    def _component_neglog(self, colors: np.ndarray) -> np.ndarray:
        out = np.empty((len(colors), self.k))
        for c in range(self.k):
            diff = colors - self.means[c]
            sol = np.linalg.solve(self._chol[c], diff.T)
            maha = (sol ** 2).sum(axis=0)
            out[:, c] = 0.5 * maha + 0.5 * self._logdet[c] - np.log(self.weights[c] + 1e-12)
        return out

    def neg_log_prob(self, colors: np.ndarray) -> np.ndarray:
        return self._component_neglog(colors).min(axis=1)


def _dilated_obb_mask(rect: OrientedRect2D, shape, scale: float) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    cx, cy = rect.center
    ca, sa = math.cos(rect.angle), math.sin(rect.angle)
    dx = xs + 0.5 - cx
    dy = ys + 0.5 - cy
    u = dx * ca + dy * sa
    v = -dx * sa + dy * ca
    return (np.abs(u) <= rect.width * scale / 2.0) & (np.abs(v) <= rect.height * scale / 2.0)


def fine_segment(canvas: TextureCanvas, coarse: Region, iterations: int = 5,
                 seed: int = 0) -> np.ndarray:
    """Refine a coarse region to texel accuracy.

    Alternates foreground/background GMM re-estimation with an exact
    graph-cut over the texels inside the coarse region's optimal bounding
    box dilated by 10%; texels beyond that box are definite background.
    Returns a boolean canvas mask, always inside the dilated box.
    """
    if coarse.count == 0:
        raise TextureError("empty coarse region")
    h, w = canvas.shape
    window = _dilated_obb_mask(coarse.rect, (h, w), 1.1) & canvas.covered
    ring = _dilated_obb_mask(coarse.rect, (h, w), 1.8) & canvas.covered & ~window
    if not ring.any():
        ring = canvas.covered & ~window
    if not ring.any():
        return coarse.mask.copy()

    ys, xs = np.nonzero(window)
    colors = canvas.image[ys, xs].astype(float)
    ring_colors = canvas.image[ring].astype(float)
    fg = coarse.mask[ys, xs].copy()
    if not fg.any():
        return coarse.mask.copy()

    rng = np.random.default_rng(seed)
    fg_gmm = _ColorGMM(colors[fg], GRABCUT_COMPONENTS, rng)
    bg0 = colors[~fg]
    bg_gmm = _ColorGMM(np.vstack([ring_colors, bg0]) if len(bg0) else ring_colors,
                       GRABCUT_COMPONENTS, rng)

    index = np.full((h, w), -1, dtype=np.int64)
    index[ys, xs] = np.arange(len(ys))
    edges = []
    diffs = []
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        y2 = ys + dy
        x2 = xs + dx
        ok = (y2 >= 0) & (y2 < h) & (x2 >= 0) & (x2 < w)
        j = np.full(len(ys), -1, dtype=np.int64)
        j[ok] = index[y2[ok], x2[ok]]
        sel = j >= 0
        i_idx = np.nonzero(sel)[0]
        j_idx = j[sel]
        edges.append(np.column_stack([i_idx, j_idx]))
        d = canvas.image[ys[i_idx], xs[i_idx]].astype(float) - \
            canvas.image[ys[j_idx], xs[j_idx]].astype(float)
        dist = math.sqrt(dy * dy + dx * dx)
        diffs.append(((d ** 2).sum(axis=1), dist))
    edge_arr = np.vstack(edges)
    sq = np.concatenate([d for d, _ in diffs])
    inv_dist = np.concatenate([np.full(len(d), 1.0 / dist) for d, dist in diffs])
    beta = 1.0 / max(2.0 * sq.mean(), 1e-9)
    eweights = GRABCUT_GAMMA * inv_dist * np.exp(-beta * sq)

    prev = fg.copy()
    for _ in range(max(int(iterations), 1)):
        d_fg = fg_gmm.neg_log_prob(colors)
        d_bg = bg_gmm.neg_log_prob(colors)
        # Label 0 = background pays the bg model's negative log-likelihood.
        costs = np.column_stack([d_bg, d_fg])
        problem = BinaryLabelingProblem(costs, edge_arr, eweights, smoothness=1.0)
        labels, _ = solve_binary_labeling(problem)
        fg = labels == 1
        if not fg.any():
            fg = prev
            break
        fg_gmm.refit(colors[fg])
        bg_inside = colors[~fg]
        bg_gmm.refit(np.vstack([ring_colors, bg_inside]) if len(bg_inside) else ring_colors)
        if np.array_equal(fg, prev):
            break
        prev = fg.copy()

    out = np.zeros((h, w), dtype=bool)
    out[ys[fg], xs[fg]] = True
    return out


# ---------------------------------------------------------------------------
# Region template matching + NCC baseline
# ---------------------------------------------------------------------------

def match_regions(canvas: TextureCanvas, superpixels: Superpixels, template: Region,
                  eps_seed: float = DEFAULT_EPS_SEED, eps_reg: float = DEFAULT_EPS_REG,
                  s_reg: float = DEFAULT_S_REG, seed: int = 0) -> list[tuple[Region, float]]:
    """Regions similar to the template within the canvas.

    Superpixels pass a channel-averaged Wasserstein filter against the
    template's interior mixtures; 8-connected unions of qualifying
    superpixels form candidates, pruned by the pixel-count window and
    template overlap, then ranked by feature norm.
    """
    if eps_seed <= 0 or eps_reg <= 0:
        raise TextureError("thresholds must be positive")
    if s_reg < 1:
        raise TextureError("s_reg must be >= 1")
    if template.count == 0:
        raise TextureError("empty template")

    qualify = np.zeros(superpixels.n, dtype=bool)
    for j in range(superpixels.n):
        d = float(np.mean([
            wasserstein_gmm_1d(template.gmms_in[c], superpixels.gmms[j][c])
            for c in range(3)
        ]))
        qualify[j] = d < eps_seed
    cand_mask = np.isin(superpixels.labels, np.nonzero(qualify)[0]) & \
        (superpixels.labels >= 0)

    comp, n_comp = ndimage.label(cand_mask, structure=np.ones((3, 3)))
    lo = template.count / s_reg
    hi = s_reg * template.count
    scored = []
    for c in range(1, n_comp + 1):
        mask = comp == c
        if (mask & template.mask).any():
            continue
        count = int(mask.sum())
        if not (lo <= count <= hi):
            continue
        region = Region.from_mask(canvas, mask, seed=seed)
        norm = region_feature_vector(template, region).norm()
        if norm < eps_reg:
            ys, xs = np.nonzero(mask)
            scored.append((norm, (int(ys.min()), int(xs.min())), region))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [(region, norm) for norm, _, region in scored]


def ncc_match(canvas: TextureCanvas, template_patch: np.ndarray,
              threshold: float = 0.9) -> list[tuple[int, int, int, int, float]]:
    """Normalized cross-correlation baseline; returns (x0, y0, w, h, score)
    boxes after greedy non-max suppression at 50% overlap."""
    img = canvas.image.astype(float).mean(axis=2)
    tpl = np.asarray(template_patch, dtype=float)
    if tpl.ndim == 3:
        tpl = tpl.mean(axis=2)
    th, tw = tpl.shape
    if th > img.shape[0] or tw > img.shape[1]:
        raise TextureError("template larger than canvas")
    if tpl.std() == 0:
        raise TextureError("template has no variance")
    scores = match_template(img, tpl)   # valid-mode correlation surface
    peaks = np.nonzero(scores >= threshold)
    boxes = [(scores[y, x], x, y) for y, x in zip(*peaks)]
    boxes.sort(key=lambda t: (-t[0], t[2], t[1]))
    kept: list[tuple[int, int, int, int, float]] = []
    for score, x, y in boxes:
        ok = True
        for kx, ky, kw, kh, _ in kept:
            ix = max(0, min(x + tw, kx + kw) - max(x, kx))
            iy = max(0, min(y + th, ky + kh) - max(y, ky))
            inter = ix * iy
            union = tw * th * 2 - inter
            if union > 0 and inter / union > 0.5:
                ok = False
                break
        if ok:
            kept.append((int(x), int(y), int(tw), int(th), float(score)))
    return kept
