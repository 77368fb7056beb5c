"""Planar over-segmentation of textured meshes.

Region growing over the face adjacency graph with a running plane estimate,
plus split/merge editing. Segments cache the statistics used by selection
and template matching.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .colors import LabColor, excess_green, rgb_to_lab
from .geometry import EigenFeatures, Plane, eigen_features, fit_plane
from .mesh_core import TexturedMesh

DEFAULT_ANGLE_THRESH_DEG = 20.0
DEFAULT_DIST_THRESH = 0.3
DEFAULT_MIN_FACES = 3


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class PlanarSegment:
    """Connected set of near-coplanar faces with cached statistics."""

    id: int
    faces: np.ndarray                 # sorted face ids
    plane: Plane
    area: float                       # sum of face areas, m^2
    mean_height: float                # area-weighted mean of face-centroid z
    verticality: float                # 1 - |n . z|
    eigen: EigenFeatures
    mean_lab: LabColor | None
    mean_excess_green: float
    absorbed: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))

    def face_set(self) -> frozenset:
        return frozenset(int(f) for f in self.faces)


def _segment_mean_rgb(mesh: TexturedMesh, faces: np.ndarray) -> np.ndarray | None:
    """Area-weighted mean of per-face UV-centroid texel colors."""
    total_w = 0.0
    acc = np.zeros(3)
    for f in faces:
        page = int(mesh.face_pages[f])
        if page < 0:
            continue
        px = mesh.uv_pixels(int(f)).mean(axis=0)
        img = mesh.pages[page]
        h, w = img.shape[:2]
        x = min(max(int(px[0]), 0), w - 1)
        y = min(max(int(px[1]), 0), h - 1)
        a = float(mesh.face_areas[f])
        acc += a * img[y, x].astype(float)
        total_w += a
    if total_w <= 0:
        return None
    return acc / total_w


def compute_segment_stats(mesh: TexturedMesh, faces, seg_id: int,
                          absorbed=None) -> PlanarSegment:
    """Build a PlanarSegment with statistics recomputed from scratch."""
    faces = np.array(sorted(int(f) for f in faces), dtype=np.int64)
    if faces.size == 0:
        raise SegmentationError("segment must contain at least one face")
    areas = mesh.face_areas[faces]
    area = float(areas.sum())
    verts_idx = np.unique(mesh.faces[faces].ravel())
    verts = mesh.vertices[verts_idx]
    # Vertex weights: incident member-face area, spreading each face over
    # its three corners.
    wmap = {int(v): 0.0 for v in verts_idx}
    for f, a in zip(faces, areas):
        for v in mesh.faces[f]:
            wmap[int(v)] += float(a) / 3.0
    weights = np.array([wmap[int(v)] for v in verts_idx])
    if verts.shape[0] >= 3:
        try:
            plane = fit_plane(verts, weights)
        except ValueError:
            n = mesh.face_normals[faces[0]]
            if n[2] < 0:
                n = -n
            plane = Plane(n, float(n @ mesh.face_centroids[faces[0]]), 0.0)
    else:
        raise SegmentationError("segment has too few vertices")
    mean_height = float((mesh.face_centroids[faces, 2] * areas).sum() / area)
    verticality = float(1.0 - abs(plane.normal[2]))
    eig = eigen_features(verts)
    mean_rgb = _segment_mean_rgb(mesh, faces)
    if mean_rgb is None:
        mean_lab, mean_exg = None, 0.0
    else:
        mean_lab = rgb_to_lab(np.clip(mean_rgb, 0, 255))
        mean_exg = excess_green(np.clip(mean_rgb, 0, 255))
    return PlanarSegment(
        id=int(seg_id), faces=faces, plane=plane, area=area,
        mean_height=mean_height, verticality=verticality, eigen=eig,
        mean_lab=mean_lab, mean_excess_green=mean_exg,
        absorbed=np.array(sorted(absorbed) if absorbed is not None else [],
                          dtype=np.int64),
    )


def _shared_boundary_length(mesh: TexturedMesh, faces_a: set, faces_b: set) -> float:
    """Total length of mesh edges shared between two face sets."""
    length = 0.0
    for f in faces_a:
        tri = mesh.faces[f]
        for k in range(3):
            u, v = int(tri[k]), int(tri[(k + 1) % 3])
            for nb in mesh.adjacency[f]:
                if int(nb) in faces_b:
                    tri2 = set(int(x) for x in mesh.faces[nb])
                    if u in tri2 and v in tri2:
                        length += float(np.linalg.norm(mesh.vertices[u] - mesh.vertices[v]))
    return length / 2.0   # each shared edge visited from both half-pairs


def oversegment(mesh: TexturedMesh, angle_thresh: float = DEFAULT_ANGLE_THRESH_DEG,
                dist_thresh: float = DEFAULT_DIST_THRESH,
                min_faces: int = DEFAULT_MIN_FACES) -> list[PlanarSegment]:
    """Partition the mesh into planar segments by region growing.

    Seeds run in descending face-area order (ties by index). A face joins
    when its normal is within angle_thresh of the running segment normal and
    all its vertices are within dist_thresh of the running plane. Fragments
    smaller than min_faces are merged into the neighbor with the largest
    shared boundary.
    """
    if angle_thresh <= 0 or dist_thresh <= 0:
        raise SegmentationError("thresholds must be positive")
    n = mesh.n_faces
    if n == 0:
        return []
    cos_thresh = math.cos(math.radians(angle_thresh))
    order = np.lexsort((np.arange(n), -mesh.face_areas))
    assigned = np.full(n, -1, dtype=np.int64)
    groups: list[list[int]] = []

    for seed in order:
        seed = int(seed)
        if assigned[seed] >= 0:
            continue
        gid = len(groups)
        member = [seed]
        assigned[seed] = gid
        n_ref = mesh.face_normals[seed].copy()
        nsum = mesh.face_areas[seed] * n_ref
        csum = mesh.face_areas[seed] * mesh.face_centroids[seed]
        asum = float(mesh.face_areas[seed])
        queue = deque([seed])
        while queue:
            f = queue.popleft()
            n_seg = nsum / max(np.linalg.norm(nsum), 1e-30)
            centroid = csum / asum
            offset = float(n_seg @ centroid)
            for nb in mesh.adjacency[f]:
                nb = int(nb)
                if assigned[nb] >= 0:
                    continue
                if abs(float(mesh.face_normals[nb] @ n_seg)) < cos_thresh:
                    continue
                verts = mesh.vertices[mesh.faces[nb]]
                if np.max(np.abs(verts @ n_seg - offset)) >= dist_thresh:
                    continue
                assigned[nb] = gid
                member.append(nb)
                queue.append(nb)
                nv = mesh.face_normals[nb]
                if float(nv @ n_seg) < 0:
                    nv = -nv
                nsum = nsum + mesh.face_areas[nb] * nv
                csum = csum + mesh.face_areas[nb] * mesh.face_centroids[nb]
                asum += float(mesh.face_areas[nb])
        groups.append(member)

    face_sets = [set(g) for g in groups]
    absorbed: list[set] = [set() for _ in groups]

    # Merge undersized fragments into their largest-boundary neighbor.
    def neighbors_of(gi: int) -> set[int]:
        out = set()
        for f in face_sets[gi]:
            for nb in mesh.adjacency[f]:
                g2 = int(assigned[int(nb)])
                if g2 != gi and g2 >= 0:
                    out.add(g2)
        return out

    while True:
        fragments = [gi for gi, fs in enumerate(face_sets)
                     if fs and len(fs) < min_faces and neighbors_of(gi)]
        if not fragments:
            break
        fragments.sort(key=lambda gi: (len(face_sets[gi]), min(face_sets[gi])))
        gi = fragments[0]
        nbrs = sorted(neighbors_of(gi))
        best = max(nbrs, key=lambda g2: (_shared_boundary_length(mesh, face_sets[gi],
                                                                 face_sets[g2]), -g2))
        absorbed[best] |= face_sets[gi] | absorbed[gi]
        face_sets[best] |= face_sets[gi]
        for f in face_sets[gi]:
            assigned[f] = best
        face_sets[gi] = set()
        absorbed[gi] = set()

    kept = [(min(fs), fs, ab) for fs, ab in zip(face_sets, absorbed) if fs]
    kept.sort(key=lambda t: t[0])
    return [
        compute_segment_stats(mesh, fs, new_id, ab)
        for new_id, (_, fs, ab) in enumerate(kept)
    ]


def face_to_segment(segments: list[PlanarSegment], n_faces: int) -> np.ndarray:
    """Map face id -> segment id (-1 when unassigned)."""
    out = np.full(n_faces, -1, dtype=np.int64)
    for seg in segments:
        out[seg.faces] = seg.id
    return out


def segment_adjacency(mesh: TexturedMesh, segments: list[PlanarSegment]) -> dict[int, set]:
    """Segment ids adjacent to each segment id."""
    fmap = face_to_segment(segments, mesh.n_faces)
    adj: dict[int, set] = {seg.id: set() for seg in segments}
    for seg in segments:
        for f in seg.faces:
            for nb in mesh.adjacency[int(f)]:
                other = int(fmap[int(nb)])
                if other >= 0 and other != seg.id:
                    adj[seg.id].add(other)
    return adj


def _is_connected(mesh: TexturedMesh, faces: set) -> bool:
    if not faces:
        return False
    start = next(iter(faces))
    seen = {start}
    queue = deque([start])
    while queue:
        f = queue.popleft()
        for nb in mesh.adjacency[f]:
            nb = int(nb)
            if nb in faces and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(faces)


def merge_segments(mesh: TexturedMesh, segments: list[PlanarSegment],
                   ids: list[int]) -> list[PlanarSegment]:
    """Replace the given segments by one; the union must be edge-connected."""
    ids = sorted(set(int(i) for i in ids))
    by_id = {seg.id: seg for seg in segments}
    for i in ids:
        if i not in by_id:
            raise SegmentationError(f"unknown segment id {i}")
    if len(ids) == 1:
        return list(segments)
    union: set = set()
    absorbed: set = set()
    for i in ids:
        union |= set(int(f) for f in by_id[i].faces)
        absorbed |= set(int(f) for f in by_id[i].absorbed)
    if not _is_connected(mesh, union):
        raise SegmentationError("merge union is not edge-connected")
    merged = compute_segment_stats(mesh, union, ids[0], absorbed)
    out = [seg for seg in segments if seg.id not in ids]
    out.append(merged)
    out.sort(key=lambda s: s.id)
    return out


def split_segment(mesh: TexturedMesh, segments: list[PlanarSegment], seg_id: int,
                  parts: list) -> list[PlanarSegment]:
    """Split one segment into connected parts covering it exactly."""
    by_id = {seg.id: seg for seg in segments}
    if seg_id not in by_id:
        raise SegmentationError(f"unknown segment id {seg_id}")
    target = by_id[seg_id]
    part_sets = [set(int(f) for f in p) for p in parts if len(p)]
    if not part_sets:
        raise SegmentationError("no parts given")
    covered: set = set()
    for ps in part_sets:
        if covered & ps:
            raise SegmentationError("parts overlap")
        covered |= ps
    if covered != set(int(f) for f in target.faces):
        raise SegmentationError("parts do not cover the segment exactly")
    for ps in part_sets:
        if not _is_connected(mesh, ps):
            raise SegmentationError("each part must be edge-connected")
    part_sets.sort(key=min)
    next_id = max(seg.id for seg in segments) + 1
    out = [seg for seg in segments if seg.id != seg_id]
    for k, ps in enumerate(part_sets):
        new_id = seg_id if k == 0 else next_id + k - 1
        out.append(compute_segment_stats(mesh, ps, new_id))
    out.sort(key=lambda s: s.id)
    return out
