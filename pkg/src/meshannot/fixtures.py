"""Synthetic desk-scale fixtures: textured box-on-ground scenes with exact
ground truth.

The generator emits a conforming mesh (box base rings share ground grid
vertices), a single texture atlas page with painted motifs (window cells,
road markings), truth face labels, truth pixel masks, and per-structure
membership lists. Output is byte-stable for a fixed spec.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .mesh_core import (FaceLabelMap, PixelLabelMask, TexturedMesh,
                        build_mesh, default_taxonomy)
from .mesh_io import save_annotations, write_mesh_obj

GROUND_COLOR = (95, 95, 95)
MARKING_COLOR = (235, 235, 235)
WALL_COLOR = (205, 190, 165)
WINDOW_COLOR = (40, 60, 120)
ROOF_COLOR = (175, 65, 55)

CLASS_TERRAIN = 1
CLASS_ROOF = 7
CLASS_FACADE = 8
CLASS_WINDOW = 13
CLASS_IMPERVIOUS = 16
CLASS_MARKING = 18


@dataclass(frozen=True)
class FixtureSpec:
    seed: int = 0
    ground_extent: float = 8.0
    ground_cell: float = 0.5
    box_edges: tuple[float, ...] = (1.0,)
    roof_style: str = "flat"            # flat | gabled
    windows_per_box: int = 1
    marking_cells: int = 4
    vertex_noise: float = 0.0           # sigma, meters
    texel_noise: float = 2.0            # sigma, 8-bit
    texels_per_meter: int = 16


@dataclass
class Fixture:
    spec: FixtureSpec
    mesh: TexturedMesh
    face_labels: FaceLabelMap
    masks: PixelLabelMask
    boxes: list[np.ndarray]             # face ids per box (the protrusion truth)
    windows: list[dict]                 # page-space rects {page,x0,y0,x1,y1,box}
    markings: list[dict]                # page-space rects for marking cells
    ground_faces: np.ndarray = field(default_factory=lambda: np.array([], dtype=np.int64))


class _Builder:
    def __init__(self):
        self.verts: list[tuple] = []
        self.vmap: dict[tuple, int] = {}
        self.faces: list[list[int]] = []
        self.uvs: list[np.ndarray] = []
        self.labels: list[int] = []

    def vertex(self, p) -> int:
        key = (round(float(p[0]), 6), round(float(p[1]), 6), round(float(p[2]), 6))
        idx = self.vmap.get(key)
        if idx is None:
            idx = len(self.verts)
            self.vmap[key] = idx
            self.verts.append(key)
        return idx

    def triangle(self, p0, p1, p2, uv0, uv1, uv2, label: int) -> int:
        self.faces.append([self.vertex(p0), self.vertex(p1), self.vertex(p2)])
        self.uvs.append([uv0, uv1, uv2])   # raw entries, resolved later
        self.labels.append(label)
        return len(self.faces) - 1

    def quad(self, corners, uv_corners, label: int) -> list[int]:
        """Two triangles for corners [c00, c10, c11, c01]."""
        c00, c10, c11, c01 = corners
        u00, u10, u11, u01 = uv_corners
        return [
            self.triangle(c00, c10, c11, u00, u10, u11, label),
            self.triangle(c00, c11, c01, u00, u11, u01, label),
        ]


class _Atlas:
    """Shelf-packed chart allocator with painted page assembly."""

    def __init__(self, gutter: int = 2):
        self.gutter = gutter
        self.shelves: list[list[int]] = []   # [y0, height, x_cursor]
        self.width = 0
        self.rects: list[tuple[int, int, int, int, tuple]] = []

    def alloc(self, w: int, h: int, color) -> tuple[int, int]:
        for shelf in self.shelves:
            if shelf[1] >= h and shelf[2] + w + self.gutter <= 4096:
                x0 = shelf[2]
                shelf[2] += w + self.gutter
                self.width = max(self.width, shelf[2])
                self.rects.append((x0, shelf[0], w, h, tuple(color)))
                return x0, shelf[0]
        y0 = (self.shelves[-1][0] + self.shelves[-1][1] + self.gutter) if self.shelves else 0
        self.shelves.append([y0, h, w + self.gutter])
        self.width = max(self.width, w + self.gutter)
        self.rects.append((0, y0, w, h, tuple(color)))
        return 0, y0

    def page(self) -> np.ndarray:
        height = self.shelves[-1][0] + self.shelves[-1][1] if self.shelves else 4
        img = np.zeros((height, max(self.width, 4), 3), dtype=np.uint8)
        for x0, y0, w, h, color in self.rects:
            img[y0:y0 + h, x0:x0 + w] = color
        return img


def _chart_uv(page_shape, x0, y0, w, h):
    """UV corners (u right, v up) of a page rect, as a rect accessor."""
    ph, pw = page_shape

    def uv(fx: float, fy: float) -> tuple[float, float]:
        # fx, fy in [0,1] within the chart, fy = 0 at the chart's visual top.
        return ((x0 + fx * w) / pw, 1.0 - (y0 + fy * h) / ph)

    return uv


def build_fixture(spec: FixtureSpec) -> Fixture:
    """Construct the scene deterministically from the spec."""
    rng = np.random.default_rng(spec.seed)
    cell = spec.ground_cell
    n_cells = int(round(spec.ground_extent / cell))
    tpm = spec.texels_per_meter
    cell_px = max(int(round(cell * tpm)), 2)

    edges = [float(e) for e in spec.box_edges]
    for e in edges:
        m = e / cell
        if abs(m - round(m)) > 1e-9:
            raise ValueError(f"box edge {e} must be a multiple of the ground cell")

    # Deterministic non-overlapping box placement on the cell grid.
    placements: list[tuple[int, int, int]] = []   # (cell_x, cell_y, m_cells)
    for e in edges:
        m = int(round(e / cell))
        placed = False
        for _ in range(1000):
            cx = int(rng.integers(1, max(n_cells - m - 1, 2)))
            cy = int(rng.integers(1, max(n_cells - m - 1, 2)))
            ok = all(
                cx + m + 1 <= ox or ox + om + 1 <= cx
                or cy + m + 1 <= oy or oy + om + 1 <= cy
                for ox, oy, om in placements
            )
            if ok:
                placements.append((cx, cy, m))
                placed = True
                break
        if not placed:
            raise ValueError("could not place all boxes; enlarge the ground")

    footprint = np.zeros((n_cells, n_cells), dtype=bool)
    for cx, cy, m in placements:
        footprint[cx:cx + m, cy:cy + m] = True

    atlas = _Atlas()
    builder = _Builder()

    # --- ground ---------------------------------------------------------
    gsize = n_cells * cell_px
    gx0, gy0 = atlas.alloc(gsize, gsize, GROUND_COLOR)

    # Choose marking cells away from boxes, deterministically.
    free_cells = [(i, j) for i in range(n_cells) for j in range(n_cells)
                  if not footprint[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2].any()]
    k = min(spec.marking_cells, len(free_cells))
    marking_idx = sorted(rng.choice(len(free_cells), size=k, replace=False).tolist()) if k else []
    marking_set = {free_cells[i] for i in marking_idx}

    ground_faces: list[int] = []
    ground_uv_rect = None   # filled after the page exists; store raw rect now
    ground_cells_uv: list = []
    for i in range(n_cells):
        for j in range(n_cells):
            if footprint[i, j]:
                continue
            x0, y0 = i * cell, j * cell
            corners = [(x0, y0, 0.0), (x0 + cell, y0, 0.0),
                       (x0 + cell, y0 + cell, 0.0), (x0, y0 + cell, 0.0)]
            ground_cells_uv.append((len(builder.faces), i, j))
            fids = builder.quad(corners, [None] * 4, CLASS_TERRAIN)
            ground_faces.extend(fids)

    # --- boxes ----------------------------------------------------------
    box_face_lists: list[list[int]] = []
    wall_charts: list[tuple] = []    # (x0, y0, m, face_fill_info...)
    box_side_charts: list[list[tuple]] = []
    for bi, (cx, cy, m) in enumerate(placements):
        e = m * cell
        h = e
        bx, by = cx * cell, cy * cell
        faces_this_box: list[int] = []
        side_charts: list[tuple] = []

        def add_wall(origin, du, dv, m_u, m_v, label):
            px_w, px_h = m_u * cell_px, m_v * cell_px
            sx, sy = atlas.alloc(px_w, px_h, WALL_COLOR if label == CLASS_FACADE else ROOF_COLOR)
            fids_grid = np.zeros((m_u, m_v, 2), dtype=np.int64)
            for iu in range(m_u):
                for iv in range(m_v):
                    p00 = tuple(np.array(origin) + iu * np.array(du) + iv * np.array(dv))
                    p10 = tuple(np.array(p00) + np.array(du))
                    p11 = tuple(np.array(p00) + np.array(du) + np.array(dv))
                    p01 = tuple(np.array(p00) + np.array(dv))
                    rect = (sx + iu * cell_px, sy + (m_v - 1 - iv) * cell_px)
                    uv_raw = [
                        ("wall", rect[0], rect[1] + cell_px),          # p00 bottom-left
                        ("wall", rect[0] + cell_px, rect[1] + cell_px),
                        ("wall", rect[0] + cell_px, rect[1]),
                        ("wall", rect[0], rect[1]),
                    ]
                    fids = builder.quad([p00, p10, p11, p01], uv_raw, label)
                    fids_grid[iu, iv] = fids
                    faces_this_box.extend(fids)
            side_charts.append((sx, sy, m_u, m_v, fids_grid))
            return sx, sy

        # Four sides, outward-wound.
        add_wall((bx, by, 0.0), (cell, 0, 0), (0, 0, cell), m, m, CLASS_FACADE)            # -y
        add_wall((bx + e, by + e, 0.0), (-cell, 0, 0), (0, 0, cell), m, m, CLASS_FACADE)   # +y
        add_wall((bx, by + e, 0.0), (0, -cell, 0), (0, 0, cell), m, m, CLASS_FACADE)       # -x
        add_wall((bx + e, by, 0.0), (0, cell, 0), (0, 0, cell), m, m, CLASS_FACADE)        # +x

        if spec.roof_style == "gabled":
            if m != 2:
                raise ValueError("gabled roofs support edge = 2 * ground_cell only")
            ridge_h = h + 0.5 * e
            half = e / 2.0
            # One row per slope so the gable slant edges conform.
            add_wall((bx, by, h), (cell, 0, 0), (0, half, ridge_h - h), m, 1, CLASS_ROOF)
            add_wall((bx + e, by + e, h), (-cell, 0, 0), (0, -half, ridge_h - h), m, 1, CLASS_ROOF)
            # Gable ends split at the wall-top midpoint so every edge is
            # shared with the walls below and the slope end columns.
            exg, eyg = atlas.alloc(2 * cell_px, cell_px, WALL_COLOR)
            for end_x, flip in ((bx, False), (bx + e, True)):
                p0 = (end_x, by, h)
                pm = (end_x, by + half, h)
                p1 = (end_x, by + e, h)
                pr = (end_x, by + half, ridge_h)
                u0 = ("wall", exg, eyg + cell_px)
                um = ("wall", exg + cell_px, eyg + cell_px)
                u1 = ("wall", exg + 2 * cell_px, eyg + cell_px)
                ur = ("wall", exg + cell_px, eyg)
                if flip:
                    p0, p1 = p1, p0
                faces_this_box.append(builder.triangle(p0, pm, pr, u0, um, ur, CLASS_FACADE))
                faces_this_box.append(builder.triangle(pm, p1, pr, um, u1, ur, CLASS_FACADE))
        else:
            add_wall((bx, by, h), (cell, 0, 0), (0, cell, 0), m, m, CLASS_ROOF)            # top

        box_face_lists.append(faces_this_box)
        box_side_charts.append(side_charts)

    # --- assemble the page ------------------------------------------------
    page = atlas.page()
    ph, pw = page.shape[:2]

    # Paint marking cells and collect their page rects.
    markings: list[dict] = []
    for (i, j) in sorted(marking_set):
        x0 = gx0 + i * cell_px
        y0 = gy0 + (n_cells - 1 - j) * cell_px
        page[y0:y0 + cell_px, x0:x0 + cell_px] = MARKING_COLOR
        markings.append({"page": 0, "x0": x0, "y0": y0,
                         "x1": x0 + cell_px, "y1": y0 + cell_px})

    # Window cells: pick wall sub-cells per box (not the bottom row), paint.
    windows: list[dict] = []
    for bi, side_charts in enumerate(box_side_charts):
        n_win = spec.windows_per_box
        wall_sides = [sc for sc in side_charts if sc[2] == sc[3]][:4]  # the 4 walls
        for wi in range(n_win):
            side = wall_sides[int(rng.integers(0, len(wall_sides)))]
            sx, sy, m_u, m_v, _ = side
            iu = int(rng.integers(0, m_u))
            iv = int(rng.integers(1, m_v)) if m_v > 1 else 0
            x0 = sx + iu * cell_px
            y0 = sy + (m_v - 1 - iv) * cell_px
            pad = max(cell_px // 8, 1)
            page[y0 + pad:y0 + cell_px - pad, x0 + pad:x0 + cell_px - pad] = WINDOW_COLOR
            windows.append({"page": 0, "x0": x0 + pad, "y0": y0 + pad,
                            "x1": x0 + cell_px - pad, "y1": y0 + cell_px - pad,
                            "box": bi})

    if spec.texel_noise > 0:
        noise = rng.normal(0.0, spec.texel_noise, size=page.shape)
        page = np.clip(page.astype(float) + noise, 0, 255).astype(np.uint8)

    # UVs resolve against the final page dimensions.
    face_uvs = np.zeros((len(builder.faces), 3, 2))
    return _finalize_fixture(spec, builder, face_uvs, page, ground_cells_uv,
                             box_face_lists, windows, markings,
                             np.array(ground_faces, dtype=np.int64),
                             gx0, gy0, n_cells, cell_px, rng)


def _finalize_fixture(spec, builder, face_uvs, page, ground_cells_uv,
                      box_face_lists, windows, markings, ground_faces,
                      gx0, gy0, n_cells, cell_px, rng) -> Fixture:
    ph, pw = page.shape[:2]

    def px_to_uv(x, y):
        return (x / pw, 1.0 - y / ph)

    # Wall/roof UVs were stored as ("wall", x, y) placeholders.
    for fi, uvs in enumerate(builder.uvs):
        for k in range(3):
            entry = uvs[k]
            if isinstance(entry, tuple) and entry[0] == "wall":
                face_uvs[fi, k] = px_to_uv(entry[1], entry[2])

    # Ground UVs from world coordinates.
    for fid0, i, j in ground_cells_uv:
        x0 = gx0 + i * cell_px
        y1 = gy0 + (n_cells - 1 - j) * cell_px   # top of the cell in page space
        y0 = y1 + cell_px                        # bottom edge
        c00 = px_to_uv(x0, y0)
        c10 = px_to_uv(x0 + cell_px, y0)
        c11 = px_to_uv(x0 + cell_px, y1)
        c01 = px_to_uv(x0, y1)
        face_uvs[fid0] = np.array([c00, c10, c11])
        face_uvs[fid0 + 1] = np.array([c00, c11, c01])

    verts = np.array(builder.verts, dtype=float)
    if spec.vertex_noise > 0:
        verts = verts + rng.normal(0.0, spec.vertex_noise, size=verts.shape)

    mesh = build_mesh(verts, np.array(builder.faces), face_uvs,
                      np.zeros(len(builder.faces), dtype=np.int64), [page])
    assert mesh.dropped_faces == 0

    taxonomy = default_taxonomy()
    labels = FaceLabelMap(np.array(builder.labels, dtype=np.int64), taxonomy)

    mask = np.zeros(page.shape[:2], dtype=np.uint8)
    gsize = n_cells * cell_px
    mask[gy0:gy0 + gsize, gx0:gx0 + gsize] = CLASS_IMPERVIOUS
    for m in markings:
        mask[m["y0"]:m["y1"], m["x0"]:m["x1"]] = CLASS_MARKING
    for wdw in windows:
        mask[wdw["y0"]:wdw["y1"], wdw["x0"]:wdw["x1"]] = CLASS_WINDOW
    masks = PixelLabelMask([mask], taxonomy)

    return Fixture(
        spec=spec, mesh=mesh, face_labels=labels, masks=masks,
        boxes=[np.array(sorted(f), dtype=np.int64) for f in box_face_lists],
        windows=windows, markings=markings, ground_faces=ground_faces,
    )


def gen_fixture(spec: FixtureSpec, out_dir) -> dict:
    """Write fixture files plus the ground-truth manifest; byte-stable."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fixture = build_fixture(spec)
    write_mesh_obj(fixture.mesh, out / "mesh.obj")
    save_annotations(fixture.mesh, fixture.face_labels, fixture.masks, out / "truth")
    structures = {
        "boxes": [b.tolist() for b in fixture.boxes],
        "windows": fixture.windows,
        "markings": fixture.markings,
        "ground_faces": fixture.ground_faces.tolist(),
    }
    (out / "truth_structures.json").write_text(
        json.dumps(structures, indent=2, sort_keys=True) + "\n")
    (out / "fixture_spec.json").write_text(
        json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n")
    return {
        "mesh": "mesh.obj",
        "truth": "truth",
        "structures": "truth_structures.json",
        "faces": fixture.mesh.n_faces,
        "boxes": len(fixture.boxes),
    }
