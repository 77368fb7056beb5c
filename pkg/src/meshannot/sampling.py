"""Point-cloud generation from textured meshes and label transfer back.

Four strategies: face-centered, area-proportional random, Poisson-disk dart
throwing, and superpixel-center sampling over segment canvases. Transfers
map point classes back to faces (majority vote) and texels (nearest
neighbor).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh_core import FaceLabelMap, PixelLabelMask, TexturedMesh, default_taxonomy
from .plane_segmentation import PlanarSegment
from .texture_annotation import build_canvas, compute_superpixels


class SamplingError(ValueError):
    pass


@dataclass
class PointCloud:
    points: np.ndarray      # (n, 3)
    normals: np.ndarray     # (n, 3)
    colors: np.ndarray      # (n, 3) uint8
    face_ids: np.ndarray    # (n,)
    texels: np.ndarray      # (n, 3) int (page, x, y), -1 when unknown
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.labels.size == 0:
            self.labels = np.zeros(len(self.points), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.points)


def _face_texel(mesh: TexturedMesh, face: int, bary: np.ndarray):
    """Page texel under a barycentric position of a face (or -1s)."""
    page = int(mesh.face_pages[face])
    if page < 0:
        return np.array([-1, -1, -1], dtype=np.int64)
    px = mesh.uv_pixels(face)
    pos = bary @ px
    h, w = mesh.pages[page].shape[:2]
    x = min(max(int(pos[0]), 0), w - 1)
    y = min(max(int(pos[1]), 0), h - 1)
    return np.array([page, x, y], dtype=np.int64)


def _color_at(mesh: TexturedMesh, texel: np.ndarray) -> np.ndarray:
    page, x, y = (int(v) for v in texel)
    if page < 0:
        return np.zeros(3, dtype=np.uint8)
    return mesh.pages[page][y, x]


def sample_face_centered(mesh: TexturedMesh) -> PointCloud:
    """One point per face at its centroid; color from the UV-centroid texel."""
    n = mesh.n_faces
    bary = np.full(3, 1.0 / 3.0)
    texels = np.array([_face_texel(mesh, f, bary) for f in range(n)])
    colors = np.array([_color_at(mesh, t) for t in texels], dtype=np.uint8)
    return PointCloud(points=mesh.face_centroids.copy(), normals=mesh.face_normals.copy(),
                      colors=colors, face_ids=np.arange(n, dtype=np.int64),
                      texels=texels)


def _uniform_bary(rng: np.random.Generator, count: int) -> np.ndarray:
    r1 = np.sqrt(rng.uniform(size=count))
    r2 = rng.uniform(size=count)
    b0 = 1.0 - r1
    b1 = r1 * (1.0 - r2)
    b2 = r1 * r2
    return np.column_stack([b0, b1, b2])


def sample_random(mesh: TexturedMesh, n_points: int, seed: int = 0) -> PointCloud:
    """Area-proportional random sampling with uniform barycentric placement."""
    if n_points <= 0:
        raise SamplingError("n_points must be positive")
    rng = np.random.default_rng(seed)
    probs = mesh.face_areas / mesh.face_areas.sum()
    face_counts = rng.multinomial(n_points, probs)
    faces = np.repeat(np.arange(mesh.n_faces), face_counts)
    bary = _uniform_bary(rng, len(faces))
    tri = mesh.vertices[mesh.faces[faces]]
    points = np.einsum("nk,nkd->nd", bary, tri)
    texels = np.array([_face_texel(mesh, int(f), b) for f, b in zip(faces, bary)])
    colors = np.array([_color_at(mesh, t) for t in texels], dtype=np.uint8)
    return PointCloud(points=points, normals=mesh.face_normals[faces].copy(),
                      colors=colors, face_ids=faces.astype(np.int64), texels=texels)


def sample_poisson(mesh: TexturedMesh, radius: float, seed: int = 0) -> PointCloud:
    """Seeded dart throwing with minimum pairwise distance >= radius.

    Stops once consecutive rejections exceed 30 x the number of accepted
    samples (its per-active-sample attempt budget in aggregate).
    """
    if radius <= 0:
        raise SamplingError("radius must be positive")
    rng = np.random.default_rng(seed)
    probs = mesh.face_areas / mesh.face_areas.sum()
    accepted_pts: list[np.ndarray] = []
    accepted_faces: list[int] = []
    accepted_bary: list[np.ndarray] = []
    # Grid hash for O(1) neighborhood rejection: with cell = radius, any
    # point within radius lies in the 3x3x3 neighborhood.
    cell = radius
    grid: dict[tuple, list[int]] = {}

    def far_enough(p: np.ndarray) -> bool:
        key = tuple((p // cell).astype(np.int64))
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for idx in grid.get((key[0] + dx, key[1] + dy, key[2] + dz), ()):
                        if np.linalg.norm(accepted_pts[idx] - p) < radius:
                            return False
        return True

    failures = 0
    while failures <= 30 * max(len(accepted_pts), 1):
        f = int(rng.choice(mesh.n_faces, p=probs))
        bary = _uniform_bary(rng, 1)[0]
        p = bary @ mesh.vertices[mesh.faces[f]]
        if far_enough(p):
            key = tuple((p // cell).astype(np.int64))
            grid.setdefault(key, []).append(len(accepted_pts))
            accepted_pts.append(p)
            accepted_faces.append(f)
            accepted_bary.append(bary)
            failures = 0
        else:
            failures += 1

    faces = np.array(accepted_faces, dtype=np.int64)
    texels = np.array([_face_texel(mesh, int(f), b)
                       for f, b in zip(faces, accepted_bary)]) if len(faces) else \
        np.zeros((0, 3), dtype=np.int64)
    colors = np.array([_color_at(mesh, t) for t in texels], dtype=np.uint8) \
        if len(faces) else np.zeros((0, 3), dtype=np.uint8)
    return PointCloud(points=np.array(accepted_pts).reshape(-1, 3),
                      normals=mesh.face_normals[faces].copy() if len(faces) else np.zeros((0, 3)),
                      colors=colors, face_ids=faces, texels=texels)


def sample_superpixel(mesh: TexturedMesh, segments: list[PlanarSegment],
                      region_size: int = 16, seed: int = 0) -> PointCloud:
    """One point per SLIC superpixel over every segment canvas.

    The point sits at the covered texel nearest the superpixel centroid,
    lifted through the canvas back-references; its color is the superpixel
    mean, its normal the owner face's.
    """
    if not any(p is not None for p in mesh.pages) or len(mesh.pages) == 0:
        raise SamplingError("superpixel sampling needs a textured mesh")
    points = []
    normals = []
    colors = []
    face_ids = []
    texels = []
    for seg in sorted(segments, key=lambda s: s.id):
        canvas = build_canvas(mesh, seg)
        sp = compute_superpixels(canvas, region_size=region_size, seed=seed,
                                 fit_gmms=False)
        centroids = sp.centroid_texels()
        for j in range(sp.n):
            x, y = (int(v) for v in centroids[j])
            lifted = canvas.lift(mesh, (x, y))
            if lifted is None:
                continue
            point, face = lifted
            sel = sp.labels == j
            mean_rgb = canvas.image[sel].mean(axis=0)
            points.append(point)
            normals.append(mesh.face_normals[face])
            colors.append(np.clip(np.round(mean_rgb), 0, 255).astype(np.uint8))
            face_ids.append(face)
            texels.append(canvas.page_coords[y, x])
    if not points:
        raise SamplingError("no superpixel samples produced")
    return PointCloud(points=np.array(points), normals=np.array(normals),
                      colors=np.array(colors, dtype=np.uint8),
                      face_ids=np.array(face_ids, dtype=np.int64),
                      texels=np.array(texels, dtype=np.int64))


def sample_points(mesh: TexturedMesh, strategy: str, seed: int = 0,
                  n_points: int = 1000, radius: float = 0.5,
                  region_size: int = 16,
                  segments: list[PlanarSegment] | None = None) -> PointCloud:
    """Dispatch over the four sampling strategies."""
    if strategy == "face_centered":
        return sample_face_centered(mesh)
    if strategy == "random":
        return sample_random(mesh, n_points, seed)
    if strategy == "poisson":
        return sample_poisson(mesh, radius, seed)
    if strategy == "superpixel":
        if segments is None:
            from .plane_segmentation import oversegment
            segments = oversegment(mesh)
        return sample_superpixel(mesh, segments, region_size, seed)
    raise SamplingError(f"unknown strategy {strategy!r}")


def label_cloud_from_truth(cloud: PointCloud, face_labels: FaceLabelMap | None = None,
                           masks: PixelLabelMask | None = None) -> PointCloud:
    """Attach truth classes to points: pixel-mask class at the source texel
    when available, the source face class otherwise."""
    labels = np.zeros(len(cloud), dtype=np.int64)
    if face_labels is not None:
        labels = face_labels.labels[cloud.face_ids].copy()
    if masks is not None:
        for i, (page, x, y) in enumerate(cloud.texels):
            if page >= 0:
                labels[i] = masks.masks[int(page)][int(y), int(x)]
    cloud.labels = labels
    return cloud


def transfer_to_faces(mesh: TexturedMesh, cloud: PointCloud,
                      taxonomy=None) -> FaceLabelMap:
    """Majority vote per face; pointless faces take the globally nearest
    point's class (ties toward the lower class id / point index)."""
    if len(cloud) == 0:
        raise SamplingError("empty cloud")
    taxonomy = taxonomy or default_taxonomy()
    labels = np.zeros(mesh.n_faces, dtype=np.int64)
    votes: dict[int, dict[int, int]] = {}
    for f, c in zip(cloud.face_ids, cloud.labels):
        votes.setdefault(int(f), {}).setdefault(int(c), 0)
        votes[int(f)][int(c)] += 1
    tree = cKDTree(cloud.points)
    for f in range(mesh.n_faces):
        v = votes.get(f)
        if v:
            best = max(v.items(), key=lambda kv: (kv[1], -kv[0]))
            labels[f] = best[0]
        else:
            _, idx = tree.query(mesh.face_centroids[f])
            labels[f] = int(cloud.labels[int(idx)])
    face_ids = set(taxonomy.face_class_ids())
    labels = np.where(np.isin(labels, list(face_ids)), labels, 0)
    return FaceLabelMap(labels, taxonomy)


def transfer_to_pixels(mesh: TexturedMesh, cloud: PointCloud,
                       taxonomy=None) -> PixelLabelMask:
    """Nearest-neighbor class per covered texel (3D Euclidean); uncovered
    texels stay unclassified."""
    if len(cloud) == 0:
        raise SamplingError("empty cloud")
    taxonomy = taxonomy or default_taxonomy()
    tree = cKDTree(cloud.points)
    pixel_ids = set(taxonomy.pixel_class_ids())
    masks = []
    for page_idx, page in enumerate(mesh.pages):
        h, w = page.shape[:2]
        mask = np.zeros((h, w), dtype=np.uint8)
        face_ids_map, positions = _page_lift_map(mesh, page_idx)
        if positions.size:
            _, idx = tree.query(positions)
            classes = cloud.labels[idx]
            classes = np.where(np.isin(classes, list(pixel_ids)), classes, 0)
            ys, xs = np.nonzero(face_ids_map >= 0)
            mask[ys, xs] = classes.astype(np.uint8)
        masks.append(mask)
    return PixelLabelMask(masks, taxonomy)


def _page_lift_map(mesh: TexturedMesh, page: int):
    """Rasterize every face of a page: texel -> owning face and 3D position."""
    h, w = mesh.pages[page].shape[:2]
    face_map = np.full((h, w), -1, dtype=np.int64)
    pos = np.zeros((h, w, 3))
    face_ids = np.nonzero(mesh.face_pages == page)[0]
    for f in face_ids:
        tri_uv = mesh.uv_pixels(int(f))
        x0 = max(int(np.floor(tri_uv[:, 0].min())), 0)
        y0 = max(int(np.floor(tri_uv[:, 1].min())), 0)
        x1 = min(int(np.ceil(tri_uv[:, 0].max())), w)
        y1 = min(int(np.ceil(tri_uv[:, 1].max())), h)
        if x1 <= x0 or y1 <= y0:
            continue
        xs = np.arange(x0, x1) + 0.5
        ys = np.arange(y0, y1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        p0, p1, p2 = tri_uv
        det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if abs(det) < 1e-12:
            continue
        b1 = ((gx - p0[0]) * (p2[1] - p0[1]) - (gy - p0[1]) * (p2[0] - p0[0])) / det
        b2 = ((p1[0] - p0[0]) * (gy - p0[1]) - (p1[1] - p0[1]) * (gx - p0[0])) / det
        b0 = 1.0 - b1 - b2
        inside = (b0 >= -1e-9) & (b1 >= -1e-9) & (b2 >= -1e-9)
        yy, xx = np.nonzero(inside)
        tx = xx + x0
        ty = yy + y0
        free = face_map[ty, tx] < 0
        tx, ty = tx[free], ty[free]
        yy, xx = yy[free], xx[free]
        tri = mesh.vertices[mesh.faces[int(f)]]
        face_map[ty, tx] = f
        pos[ty, tx] = (b0[yy, xx, None] * tri[0] + b1[yy, xx, None] * tri[1]
                       + b2[yy, xx, None] * tri[2])
    ys, xs = np.nonzero(face_map >= 0)
    return face_map, pos[ys, xs]
