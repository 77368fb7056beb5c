"""Mesh/texture data model, label taxonomy, and UV <-> 3D lifting.

A TexturedMesh is an indexed triangle mesh with per-face UV charts into one
or more texture atlas pages. Everything is frozen after construction so the
structures can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGENERATE_AREA_FLOOR = 1e-12


class MeshError(ValueError):
    """Invalid mesh topology, geometry, or referencing."""


class LabelError(ValueError):
    """Label data inconsistent with the taxonomy or the mesh."""


@dataclass(frozen=True)
class LabelClass:
    id: int
    name: str
    role: str            # "face" | "pixel" | "both"
    color: tuple[int, int, int]


@dataclass(frozen=True)
class LabelTaxonomy:
    """Ordered class list; ids dense from 0 with `unclassified` = 0."""

    classes: tuple[LabelClass, ...]

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise LabelError("class ids must be dense from 0")
        if self.classes[0].name != "unclassified":
            raise LabelError("class 0 must be `unclassified`")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise LabelError("class names must be unique")
        for c in self.classes:
            if c.role not in ("face", "pixel", "both"):
                raise LabelError(f"unknown role {c.role!r}")

    def __len__(self) -> int:
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def by_name(self, name: str) -> LabelClass:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    def face_class_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.role in ("face", "both")]

    def pixel_class_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.role in ("pixel", "both")]

    def palette(self) -> list[int]:
        """Flat RGB palette for indexed PNG masks."""
        flat: list[int] = []
        for c in self.classes:
            flat.extend(c.color)
        flat.extend([0] * (768 - len(flat)))
        return flat


def default_taxonomy() -> LabelTaxonomy:
    """The 21-class urban taxonomy: 12 face classes, 8 texture classes,
    and `unclassified`. Face classes other than terrain double as pixel
    classes, giving the 19-class pixel track."""
    spec = [
        (0, "unclassified", "both", (60, 60, 60)),
        (1, "terrain", "face", (170, 85, 0)),
        (2, "high vegetation", "both", (0, 145, 65)),
        (3, "water", "both", (0, 100, 255)),
        (4, "car", "both", (250, 120, 30)),
        (5, "boat", "both", (120, 70, 200)),
        (6, "wall", "both", (200, 180, 140)),
        (7, "roof surface", "both", (220, 60, 60)),
        (8, "facade surface", "both", (235, 220, 170)),
        (9, "chimney", "both", (130, 30, 30)),
        (10, "dormer", "both", (255, 150, 150)),
        (11, "balcony", "both", (180, 130, 60)),
        (12, "roof installation", "both", (255, 210, 0)),
        (13, "window", "pixel", (0, 200, 255)),
        (14, "door", "pixel", (140, 90, 40)),
        (15, "low vegetation", "pixel", (140, 230, 100)),
        (16, "impervious surface", "pixel", (150, 150, 150)),
        (17, "road", "pixel", (90, 90, 90)),
        (18, "road marking", "pixel", (255, 255, 255)),
        (19, "cycle lane", "pixel", (200, 60, 160)),
        (20, "sidewalk", "pixel", (230, 230, 200)),
    ]
    return LabelTaxonomy(tuple(LabelClass(*row) for row in spec))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class TexturedMesh:
    """Indexed triangle mesh with per-face UVs into texture atlas pages.

    vertices: (V, 3) float64 meters
    faces: (F, 3) int
    face_uvs: (F, 3, 2) float64, normalized [0,1], v up (origin bottom-left)
    face_pages: (F,) int page index per face (-1 when untextured)
    pages: list of (H, W, 3) uint8 images
    """

    def __init__(self, vertices, faces, face_uvs=None, face_pages=None,
                 pages=None, dropped_faces: int = 0):
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise MeshError("face references an out-of-range vertex")
        self.vertices = _freeze(vertices)
        self.faces = _freeze(faces)
        self.pages = [np.ascontiguousarray(p, dtype=np.uint8) for p in (pages or [])]
        for p in self.pages:
            if p.ndim != 3 or p.shape[2] != 3:
                raise MeshError("texture pages must be HxWx3 uint8")
            _freeze(p)
        if face_uvs is None:
            face_uvs = np.zeros((len(faces), 3, 2))
            face_pages = np.full(len(faces), -1, dtype=np.int64)
        face_uvs = np.asarray(face_uvs, dtype=float).reshape(-1, 3, 2)
        face_pages = np.asarray(face_pages, dtype=np.int64).ravel()
        if len(face_uvs) != len(faces) or len(face_pages) != len(faces):
            raise MeshError("per-face UV arrays must match the face count")
        if np.any(face_pages >= len(self.pages)):
            raise MeshError("face references a missing texture page")
        textured = face_pages >= 0
        if np.any(face_uvs[textured] < -1e-6) or np.any(face_uvs[textured] > 1 + 1e-6):
            raise MeshError("face UVs outside the atlas page bounds")
        self.face_uvs = _freeze(np.clip(face_uvs, 0.0, 1.0))
        self.face_pages = _freeze(face_pages)
        self.dropped_faces = int(dropped_faces)

        v0 = vertices[faces[:, 0]]
        v1 = vertices[faces[:, 1]]
        v2 = vertices[faces[:, 2]]
        cross = np.cross(v1 - v0, v2 - v0)
        norms = np.linalg.norm(cross, axis=1)
        self.face_areas = _freeze(norms / 2.0)
        with np.errstate(invalid="ignore", divide="ignore"):
            normals = np.where(norms[:, None] > 0, cross / norms[:, None], 0.0)
        self.face_normals = _freeze(normals)
        self.face_centroids = _freeze((v0 + v1 + v2) / 3.0)

        self.adjacency = self._build_adjacency()
        self._page_face_index: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # -- topology ---------------------------------------------------------

    def _build_adjacency(self) -> list[np.ndarray]:
        edge_map: dict[tuple[int, int], list[int]] = {}
        for fi, (a, b, c) in enumerate(self.faces):
            for u, v in ((a, b), (b, c), (c, a)):
                key = (u, v) if u < v else (v, u)
                edge_map.setdefault(key, []).append(fi)
        neighbors: list[set[int]] = [set() for _ in range(len(self.faces))]
        for members in edge_map.values():
            if len(members) > 1:
                for i in members:
                    for j in members:
                        if i != j:
                            neighbors[i].add(j)
        return [_freeze(np.array(sorted(s), dtype=np.int64)) for s in neighbors]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def mean_edge_length(self) -> float:
        v = self.vertices
        f = self.faces
        e = np.concatenate([
            np.linalg.norm(v[f[:, 0]] - v[f[:, 1]], axis=1),
            np.linalg.norm(v[f[:, 1]] - v[f[:, 2]], axis=1),
            np.linalg.norm(v[f[:, 2]] - v[f[:, 0]], axis=1),
        ])
        return float(e.mean()) if e.size else 0.0

    # -- UV lifting -------------------------------------------------------

    def uv_pixels(self, face: int) -> np.ndarray:
        """Face UV corners in pixel coordinates of its page (x right, y down)."""
        page = self.face_pages[face]
        if page < 0:
            raise MeshError(f"face {face} is untextured")
        h, w = self.pages[page].shape[:2]
        uv = self.face_uvs[face]
        out = np.empty((3, 2))
        out[:, 0] = uv[:, 0] * w
        out[:, 1] = (1.0 - uv[:, 1]) * h
        return out

    def _page_index(self, page: int):
        cached = self._page_face_index.get(page)
        if cached is not None:
            return cached
        face_ids = np.nonzero(self.face_pages == page)[0]
        tris = np.array([self.uv_pixels(f) for f in face_ids]) if face_ids.size \
            else np.zeros((0, 3, 2))
        if face_ids.size:
            lo = tris.min(axis=1)
            hi = tris.max(axis=1)
            bboxes = np.hstack([lo, hi])
        else:
            bboxes = np.zeros((0, 4))
        entry = (face_ids, tris, bboxes)
        self._page_face_index[page] = entry
        return entry

    def lift_point(self, page: int, xy) -> tuple[np.ndarray, int] | None:
        """Lift a float pixel coordinate on a page to 3D.

        Returns (point, owner face) for the lowest-index face whose UV
        triangle covers the location, or None when uncovered.
        """
        if page < 0 or page >= len(self.pages):
            raise MeshError(f"page {page} out of range")
        x, y = float(xy[0]), float(xy[1])
        face_ids, tris, bboxes = self._page_index(page)
        if not face_ids.size:
            return None
        slack = 1e-9
        cand = np.nonzero(
            (bboxes[:, 0] <= x + slack) & (bboxes[:, 2] >= x - slack)
            & (bboxes[:, 1] <= y + slack) & (bboxes[:, 3] >= y - slack)
        )[0]
        for k in cand:   # face_ids ascending, so first hit = lowest face id
            p0, p1, p2 = tris[k]
            det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
            if abs(det) < 1e-12:
                continue
            b1 = ((x - p0[0]) * (p2[1] - p0[1]) - (y - p0[1]) * (p2[0] - p0[0])) / det
            b2 = ((p1[0] - p0[0]) * (y - p0[1]) - (p1[1] - p0[1]) * (x - p0[0])) / det
            b0 = 1.0 - b1 - b2
            if b0 >= -slack and b1 >= -slack and b2 >= -slack:
                face = int(face_ids[k])
                tri = self.vertices[self.faces[face]]
                point = b0 * tri[0] + b1 * tri[1] + b2 * tri[2]
                return point, face
        return None

    def lift_texel(self, page: int, texel) -> tuple[np.ndarray, int] | None:
        """Lift an integer texel (x, y) via its center; None when uncovered."""
        if page < 0 or page >= len(self.pages):
            raise MeshError(f"page {page} out of range")
        x, y = int(texel[0]), int(texel[1])
        h, w = self.pages[page].shape[:2]
        if not (0 <= x < w and 0 <= y < h):
            raise MeshError(f"texel ({x}, {y}) outside page bounds {w}x{h}")
        return self.lift_point(page, (x + 0.5, y + 0.5))


def lift_texel(mesh: TexturedMesh, page: int, texel):
    return mesh.lift_texel(page, texel)


@dataclass
class FaceLabelMap:
    """Per-face class id, validated against a taxonomy's face-capable roles."""

    labels: np.ndarray
    taxonomy: LabelTaxonomy = field(default_factory=default_taxonomy)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        valid = set(self.taxonomy.face_class_ids()) | {0}
        bad = set(np.unique(self.labels)) - valid
        if bad:
            raise LabelError(f"face labels contain non-face class ids {sorted(bad)}")

    @classmethod
    def empty(cls, n_faces: int, taxonomy: LabelTaxonomy | None = None):
        return cls(np.zeros(n_faces, dtype=np.int64), taxonomy or default_taxonomy())

    def copy(self) -> "FaceLabelMap":
        return FaceLabelMap(self.labels.copy(), self.taxonomy)


@dataclass
class PixelLabelMask:
    """One class-id raster per atlas page, matching page resolutions."""

    masks: list[np.ndarray]
    taxonomy: LabelTaxonomy = field(default_factory=default_taxonomy)

    def __post_init__(self):
        self.masks = [np.asarray(m, dtype=np.uint8) for m in self.masks]
        valid = set(self.taxonomy.pixel_class_ids()) | {0}
        for m in self.masks:
            bad = set(np.unique(m).tolist()) - valid
            if bad:
                raise LabelError(f"pixel masks contain non-pixel class ids {sorted(bad)}")

    @classmethod
    def empty(cls, mesh: TexturedMesh, taxonomy: LabelTaxonomy | None = None):
        masks = [np.zeros(p.shape[:2], dtype=np.uint8) for p in mesh.pages]
        return cls(masks, taxonomy or default_taxonomy())

    def copy(self) -> "PixelLabelMask":
        return PixelLabelMask([m.copy() for m in self.masks], self.taxonomy)


def build_mesh(vertices, faces, face_uvs=None, face_pages=None, pages=None) -> TexturedMesh:
    """Construct a mesh, dropping degenerate faces (tiny area or repeated
    vertex indices) and reporting the dropped count on the result."""
    vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
        raise MeshError("face references an out-of-range vertex")
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    areas = np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1) / 2.0
    distinct = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    keep = distinct & (areas >= DEGENERATE_AREA_FLOOR)
    dropped = int((~keep).sum())
    faces = faces[keep]
    if face_uvs is not None:
        face_uvs = np.asarray(face_uvs, dtype=float).reshape(-1, 3, 2)[keep]
        face_pages = np.asarray(face_pages, dtype=np.int64).ravel()[keep]
    return TexturedMesh(vertices, faces, face_uvs, face_pages, pages,
                        dropped_faces=dropped)
