"""Interactive 3D selection and 3D template matching.

Gesture classification, candidate-face extraction, protrusion labeling by
exact binary graph-cut, and feature-vector matching of planar segments and
protrusions against a user-selected template.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .colors import ciede2000
from .energy import BinaryLabelingProblem, solve_binary_labeling
from .geometry import Plane, convex_hull_volume, eigen_features, shrinking_ball_radius
from .mesh_core import TexturedMesh
from .plane_segmentation import PlanarSegment, face_to_segment, segment_adjacency

GESTURE_LASSO_RATIO = 0.2
DEFAULT_ETA = 1.0
DEFAULT_LAMBDA_F = 0.5
DEFAULT_EPS_SEG = 30.0
DEFAULT_EPS_STR = 2.0
DEFAULT_SCALE_S = 4.0
LASSO_COVER_FRACTION = 0.5


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class Gesture:
    polyline: np.ndarray       # (n, 2) screen pixels
    hit_faces: np.ndarray      # ordered face ids from the ID buffer
    kind: str                  # "lasso" | "stroke"


def classify_gesture(polyline, hit_faces, ratio_thresh: float = GESTURE_LASSO_RATIO) -> Gesture:
    """Lasso when the endpoint gap is small relative to the bbox diagonal."""
    pts = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if pts.shape[0] < 2:
        raise SelectionError("a gesture needs at least 2 points")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0:
        raise SelectionError("gesture bounding box is empty")
    ratio = float(np.linalg.norm(pts[-1] - pts[0])) / diag
    kind = "lasso" if ratio <= ratio_thresh else "stroke"
    hits = np.asarray(hit_faces, dtype=np.int64).ravel()
    return Gesture(pts, hits, kind)


def candidate_faces(mesh: TexturedMesh, segments: list[PlanarSegment],
                    gesture: Gesture) -> np.ndarray:
    """Candidate faces implied by a classified gesture.

    Lasso: segments with at least half their faces hit join in full. Stroke:
    hit faces grow by one ring, then expand to their full segments.
    """
    fmap = face_to_segment(segments, mesh.n_faces)
    by_id = {seg.id: seg for seg in segments}
    hits = [int(f) for f in gesture.hit_faces if 0 <= int(f) < mesh.n_faces]
    if gesture.kind == "lasso":
        counts: dict[int, int] = {}
        for f in set(hits):
            sid = int(fmap[f])
            if sid >= 0:
                counts[sid] = counts.get(sid, 0) + 1
        chosen = [sid for sid, c in counts.items()
                  if c >= LASSO_COVER_FRACTION * len(by_id[sid].faces)]
        faces: set[int] = set()
        for sid in chosen:
            faces.update(int(f) for f in by_id[sid].faces)
        return np.array(sorted(faces), dtype=np.int64)
    if not hits:
        raise SelectionError("stroke gesture with an empty hit set")
    grown = set(hits)
    for f in hits:
        grown.update(int(nb) for nb in mesh.adjacency[f])
    faces = set()
    for f in grown:
        sid = int(fmap[f])
        if sid >= 0:
            faces.update(int(x) for x in by_id[sid].faces)
        else:
            faces.add(f)
    return np.array(sorted(faces), dtype=np.int64)


def protrusion_score(mesh: TexturedMesh, face: int, support: Plane) -> tuple[float, float, float, float]:
    """Per-face (d, theta, omega, p) against the support plane.

    d is the max vertex distance, theta the folded normal deviation in
    [0, 1], omega the distance damping, p = d + omega * theta.
    """
    verts = mesh.vertices[mesh.faces[face]]
    d = float(np.max(np.abs(verts @ support.normal - support.offset)))
    cosang = float(np.clip(mesh.face_normals[face] @ support.normal, -1.0, 1.0))
    theta_hat = math.degrees(math.acos(cosang))
    theta = min(theta_hat, 180.0 - theta_hat) / 90.0
    omega = 1.0 if d > 1.0 else 1.0 - d
    return d, theta, omega, d + omega * theta


@dataclass
class ProtrusionProblem:
    """All per-face terms of the protrusion binary labeling instance."""

    faces: np.ndarray
    support_plane: Plane
    support_segment: int
    d: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    p: np.ndarray
    radii: np.ndarray
    z_min: float
    z_max: float
    eta: float
    lam: float
    edges: np.ndarray
    edge_weights: np.ndarray


def surface_samples(mesh: TexturedMesh,
                    segments: list[PlanarSegment] | None = None
                    ) -> tuple[np.ndarray, cKDTree]:
    """Shrinking-ball sample set: face centroids, denoised by projection
    onto their segment planes when a segmentation is available.

    Projection is the identity on exactly planar segments, so clean meshes
    are unaffected; on noisy data it keeps the medial radii tied to the
    segment structure instead of per-vertex jitter.
    """
    pts = mesh.face_centroids.copy()
    if segments is not None:
        for seg in segments:
            plane = seg.plane
            d = pts[seg.faces] @ plane.normal - plane.offset
            pts[seg.faces] = pts[seg.faces] - d[:, None] * plane.normal
    return pts, cKDTree(pts)


def shrinking_radii(mesh: TexturedMesh, faces: np.ndarray,
                    samples: np.ndarray | None = None,
                    tree: cKDTree | None = None,
                    segments: list[PlanarSegment] | None = None) -> np.ndarray:
    """Interior shrinking-ball radius at each face centroid.

    With a segmentation, seeds and normals also come from the segment
    planes (sign-aligned to the face normal), matching the projected
    samples.
    """
    if samples is None or tree is None:
        samples, tree = surface_samples(mesh, segments)
    lo, hi = mesh.bbox()
    r_init = float(np.linalg.norm(hi - lo)) / 2.0
    if r_init <= 0:
        r_init = 1.0
    seg_of = None
    if segments is not None:
        seg_of = {}
        for seg in segments:
            for f in seg.faces:
                seg_of[int(f)] = seg
    out = np.empty(len(faces))
    for k, f in enumerate(faces):
        f = int(f)
        n = mesh.face_normals[f]
        seed = mesh.face_centroids[f]
        if seg_of is not None and f in seg_of:
            plane = seg_of[f].plane
            seed = seed - (float(seed @ plane.normal) - plane.offset) * plane.normal
            n = plane.normal if float(plane.normal @ n) >= 0 else -plane.normal
        nn = np.linalg.norm(n)
        if nn <= 0:
            out[k] = r_init
            continue
        out[k] = shrinking_ball_radius(seed, n / nn, samples, r_init, tree=tree)
    return out


def build_protrusion_problem(mesh: TexturedMesh, segments: list[PlanarSegment],
                             candidates: np.ndarray, eta: float = DEFAULT_ETA,
                             lam: float = DEFAULT_LAMBDA_F,
                             samples: np.ndarray | None = None,
                             tree: cKDTree | None = None) -> ProtrusionProblem:
    """Assemble the dual-graph labeling instance over candidate faces.

    The support plane is the plane of the largest-area candidate segment
    (candidate area counted within the candidate set).
    """
    cand = np.array(sorted(set(int(f) for f in candidates)), dtype=np.int64)
    if cand.size == 0:
        raise SelectionError("no candidate faces")
    fmap = face_to_segment(segments, mesh.n_faces)
    by_id = {seg.id: seg for seg in segments}
    seg_area: dict[int, float] = {}
    for f in cand:
        sid = int(fmap[f])
        if sid >= 0:
            seg_area[sid] = seg_area.get(sid, 0.0) + float(mesh.face_areas[f])
    if not seg_area:
        raise SelectionError("candidates belong to no planar segment")
    support_id = max(seg_area.items(), key=lambda kv: (kv[1], -kv[0]))[0]
    support = by_id[support_id].plane

    scores = np.array([protrusion_score(mesh, int(f), support) for f in cand])
    d, theta, omega, p = scores.T
    radii = shrinking_radii(mesh, cand, samples, tree, segments=segments)
    verts = np.unique(mesh.faces[cand].ravel())
    z = mesh.vertices[verts, 2]
    z_min, z_max = float(z.min()), float(z.max())

    pos = {int(f): i for i, f in enumerate(cand)}
    edges = []
    for i, f in enumerate(cand):
        for nb in mesh.adjacency[int(f)]:
            j = pos.get(int(nb))
            if j is not None and j > i:
                edges.append((i, j))
    edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
    z_range = z_max - z_min
    if edges.size and z_range > 1e-12:
        dr = np.abs(radii[edges[:, 0]] - radii[edges[:, 1]])
        weights = 1.0 - np.minimum(1.0, 2.0 * dr / z_range)
    else:
        weights = np.ones(len(edges))
    return ProtrusionProblem(
        faces=cand, support_plane=support, support_segment=support_id,
        d=d, theta=theta, omega=omega, p=p, radii=radii,
        z_min=z_min, z_max=z_max, eta=float(eta), lam=float(lam),
        edges=edges, edge_weights=np.asarray(weights, dtype=float),
    )


def to_labeling_problem(problem: ProtrusionProblem) -> BinaryLabelingProblem:
    costs = np.stack([problem.eta * problem.p, problem.eta * (1.0 - problem.p)], axis=1)
    return BinaryLabelingProblem(costs, problem.edges, problem.edge_weights,
                                 smoothness=problem.lam)


def extract_protrusions(problem: ProtrusionProblem) -> np.ndarray:
    """Faces labeled protrusion by the exact graph-cut."""
    labels, _ = solve_binary_labeling(to_labeling_problem(problem))
    return problem.faces[labels == 1]


# ---------------------------------------------------------------------------
# Template matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmentFeatureVector:
    d_area: float          # |area_c - area_t| / area_t
    d_height: float        # |mean height difference| (m)
    d_verticality: float
    d_sphericity: float
    d_color: float = 0.0

    def norm(self) -> float:
        return math.sqrt(self.d_area**2 + self.d_height**2 + self.d_verticality**2
                         + self.d_sphericity**2 + self.d_color**2)


def segment_feature_vector(template: PlanarSegment, candidate: PlanarSegment,
                           use_color: bool = False) -> SegmentFeatureVector:
    if template.area <= 0:
        raise SelectionError("template segment has zero area")
    d_color = 0.0
    if use_color and template.mean_lab is not None and candidate.mean_lab is not None:
        d_color = ciede2000(template.mean_lab, candidate.mean_lab) + abs(
            template.mean_excess_green - candidate.mean_excess_green
        )
    return SegmentFeatureVector(
        d_area=abs(candidate.area - template.area) / template.area,
        d_height=abs(candidate.mean_height - template.mean_height),
        d_verticality=abs(candidate.verticality - template.verticality),
        d_sphericity=abs(candidate.eigen.sphericity - template.eigen.sphericity),
        d_color=d_color,
    )


def match_planar_segments(template: PlanarSegment, segments: list[PlanarSegment],
                          eps: float = DEFAULT_EPS_SEG,
                          use_color: bool = False) -> list[tuple[int, float]]:
    """Segments whose feature norm against the template is below eps,
    sorted by norm then id; the template itself is excluded."""
    if eps <= 0:
        raise SelectionError("eps must be positive")
    out = []
    for seg in segments:
        if seg.id == template.id:
            continue
        norm = segment_feature_vector(template, seg, use_color).norm()
        if norm < eps:
            out.append((seg.id, norm))
    out.sort(key=lambda kv: (kv[1], kv[0]))
    return out


@dataclass(frozen=True)
class ProtrusionFeatureVector:
    d_volume: float        # bbox fill-ratio difference
    d_count: float         # (max/min segment count)^min, >= 1
    d_linearity: float
    d_planarity: float
    d_sphericity: float

    def norm(self) -> float:
        return math.sqrt(self.d_volume**2 + self.d_count**2 + self.d_linearity**2
                         + self.d_planarity**2 + self.d_sphericity**2)


def _bbox_fill_ratio(points: np.ndarray) -> float:
    vol = convex_hull_volume(points)
    extent = points.max(axis=0) - points.min(axis=0)
    box = float(np.prod(extent))
    if box < 1e-12:
        return 0.0
    return vol / box


def protrusion_feature_vector(mesh: TexturedMesh, template_faces: np.ndarray,
                              n_template_segments: int,
                              candidate_faces_: np.ndarray,
                              n_candidate_segments: int) -> ProtrusionFeatureVector:
    t_faces = np.asarray(template_faces, dtype=np.int64)
    c_faces = np.asarray(candidate_faces_, dtype=np.int64)
    if t_faces.size == 0 or c_faces.size == 0:
        raise SelectionError("protrusion face sets must be nonempty")
    t_pts = mesh.vertices[np.unique(mesh.faces[t_faces].ravel())]
    c_pts = mesh.vertices[np.unique(mesh.faces[c_faces].ravel())]
    nt = max(int(n_template_segments), 1)
    nc = max(int(n_candidate_segments), 1)
    mu = min(nt, nc)
    d_count = (max(nt, nc) / min(nt, nc)) ** mu
    te = eigen_features(t_pts)
    ce = eigen_features(c_pts)
    return ProtrusionFeatureVector(
        d_volume=abs(_bbox_fill_ratio(c_pts) - _bbox_fill_ratio(t_pts)),
        d_count=float(d_count),
        d_linearity=abs(ce.linearity - te.linearity),
        d_planarity=abs(ce.planarity - te.planarity),
        d_sphericity=abs(ce.sphericity - te.sphericity),
    )


def _weighted_centroid(mesh: TexturedMesh, faces: np.ndarray) -> np.ndarray:
    a = mesh.face_areas[faces]
    return (mesh.face_centroids[faces] * a[:, None]).sum(axis=0) / a.sum()


def match_protrusions(mesh: TexturedMesh, segments: list[PlanarSegment],
                      template_faces: np.ndarray, s: float = DEFAULT_SCALE_S,
                      eps_str: float = DEFAULT_EPS_STR,
                      topology_constrained: bool = True) -> list[tuple[np.ndarray, float]]:
    """Match protrusion-like structures similar to a template face set.

    Seeds come from planar-segment matching at half the acceptance
    threshold; each seed expands over segment adjacency under spatial and
    segment-scale constraints, optionally confined to candidates sharing the
    template's support segment. Accepted candidates are ranked by feature
    norm and returned as disjoint face sets.
    """
    if s < 1.0:
        raise SelectionError("scale parameter must be >= 1")
    if eps_str <= 0:
        raise SelectionError("eps must be positive")
    t_faces = np.array(sorted(set(int(f) for f in template_faces)), dtype=np.int64)
    if t_faces.size == 0:
        raise SelectionError("empty template")
    fmap = face_to_segment(segments, mesh.n_faces)
    by_id = {seg.id: seg for seg in segments}
    t_seg_ids = sorted(set(int(fmap[f]) for f in t_faces) - {-1})
    if not t_seg_ids:
        raise SelectionError("template has no planar decomposition")
    t_set = set(int(f) for f in t_faces)

    adj = segment_adjacency(mesh, segments)
    # Support segment: largest-area segment adjacent to the template but not
    # part of it.
    support_candidates = set()
    for sid in t_seg_ids:
        support_candidates |= adj.get(sid, set())
    support_candidates -= set(t_seg_ids)
    support_id = None
    if support_candidates:
        support_id = max(support_candidates, key=lambda sid: (by_id[sid].area, -sid))

    o_t = _weighted_centroid(mesh, t_faces)
    t_radius = float(np.max(np.linalg.norm(mesh.face_centroids[t_faces] - o_t, axis=1)))
    reach = math.sqrt(s) * t_radius
    t_areas = np.array([by_id[sid].area for sid in t_seg_ids])
    area_ratio_cap = s * float(t_areas.max() / t_areas.min())

    seed_ids: list[int] = []
    seen = set()
    for sid in t_seg_ids:
        for mid, _ in match_planar_segments(by_id[sid], segments, eps=0.5 * eps_str):
            if mid not in seen:
                seen.add(mid)
                seed_ids.append(mid)

    results: list[tuple[float, frozenset, np.ndarray]] = []
    evaluated: set[frozenset] = set()
    for seed in seed_ids:
        seed_seg = by_id[seed]
        o_seed = _weighted_centroid(mesh, seed_seg.faces)
        accepted = {seed}
        queue = deque([seed])
        while queue:
            cur = queue.popleft()
            for nb in sorted(adj.get(cur, set())):
                if nb in accepted:
                    continue
                nb_seg = by_id[nb]
                if nb_seg.area / seed_seg.area >= area_ratio_cap:
                    continue
                centers = mesh.face_centroids[nb_seg.faces]
                if np.max(np.linalg.norm(centers - o_seed, axis=1)) >= reach:
                    continue
                accepted.add(nb)
                queue.append(nb)
        cand_faces: set[int] = set()
        for sid in accepted:
            cand_faces.update(int(f) for f in by_id[sid].faces)
        if cand_faces & t_set:
            continue
        key = frozenset(cand_faces)
        if key in evaluated:
            continue
        evaluated.add(key)
        if topology_constrained and support_id is not None:
            touches_support = any(support_id in adj.get(sid, set()) for sid in accepted)
            if not touches_support:
                continue
        feats = protrusion_feature_vector(
            mesh, t_faces, len(t_seg_ids),
            np.array(sorted(cand_faces), dtype=np.int64), len(accepted))
        norm = feats.norm()
        if norm < eps_str:
            results.append((norm, key, np.array(sorted(cand_faces), dtype=np.int64)))

    results.sort(key=lambda t: (t[0], min(t[1]) if t[1] else -1))
    out: list[tuple[np.ndarray, float]] = []
    used: set[int] = set()
    for norm, key, faces in results:
        if used & key:
            continue
        used |= key
        out.append((faces, norm))
    return out
