"""Mesh and annotation file I/O.

Formats:
- OBJ + MTL + PNG/JPEG atlas pages (per-face UVs via f v/vt indices)
- binary/ascii PLY with per-face `texcoord` + `texnumber` properties
- face labels as PLY with an integer per-face `label` property
- pixel masks as 8-bit indexed PNG (palette = taxonomy colors)
- JSON manifest tying classes and files together

Writers emit byte-stable output for identical inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .mesh_core import (FaceLabelMap, LabelClass, LabelError, LabelTaxonomy,
                        MeshError, PixelLabelMask, TexturedMesh, build_mesh,
                        default_taxonomy)

_PLY_TYPES = {
    "char": "b", "uchar": "B", "int8": "b", "uint8": "B",
    "short": "h", "ushort": "H", "int16": "h", "uint16": "H",
    "int": "i", "uint": "I", "int32": "i", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

def _read_ply(path: Path):
    """Minimal PLY reader: returns (elements, comments) where elements maps
    name -> list of row dicts."""
    data = path.read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise MeshError(f"{path} is not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]

    fmt = None
    comments: list[str] = []
    elements: list[tuple[str, int, list]] = []
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment":
            comments.append(line[len("comment "):])
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", parts[2], parts[3]))
            else:
                elements[-1][2].append((parts[2], "scalar", parts[1], None))

    out: dict[str, list[dict]] = {}
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, kind, t1, t2 in props:
                    if kind == "list":
                        n = int(tokens[pos]); pos += 1
                        vals = [float(tokens[pos + k]) for k in range(n)]
                        pos += n
                        row[pname] = [int(v) if _PLY_TYPES[t2] in "bBhHiI" else v for v in vals]
                    else:
                        v = float(tokens[pos]); pos += 1
                        row[pname] = int(v) if _PLY_TYPES[t1] in "bBhHiI" else v
                rows.append(row)
            out[name] = rows
    elif fmt == "binary_little_endian":
        pos = 0
        for name, count, props in elements:
            rows = []
            for _ in range(count):
                row = {}
                for pname, kind, t1, t2 in props:
                    if kind == "list":
                        cfmt = _PLY_TYPES[t1]
                        n = struct.unpack_from("<" + cfmt, body, pos)[0]
                        pos += struct.calcsize(cfmt)
                        vfmt = _PLY_TYPES[t2]
                        vals = struct.unpack_from("<" + str(n) + vfmt, body, pos)
                        pos += struct.calcsize(vfmt) * n
                        row[pname] = list(vals)
                    else:
                        vfmt = _PLY_TYPES[t1]
                        row[pname] = struct.unpack_from("<" + vfmt, body, pos)[0]
                        pos += struct.calcsize(vfmt)
                rows.append(row)
            out[name] = rows
    else:
        raise MeshError(f"unsupported PLY format {fmt!r}")
    return out, comments


class _PlyWriter:
    """Binary little-endian PLY writer with deterministic output."""

    def __init__(self):
        self.header: list[str] = ["ply", "format binary_little_endian 1.0"]
        self.chunks: list[bytes] = []

    def comment(self, text: str):
        self.header.append(f"comment {text}")

    def element(self, name: str, count: int, props: list[str]):
        self.header.append(f"element {name} {count}")
        self.header.extend(f"property {p}" for p in props)

    def pack(self, fmt: str, *values):
        self.chunks.append(struct.pack("<" + fmt, *values))

    def write(self, path: Path):
        self.header.append("end_header")
        payload = ("\n".join(self.header) + "\n").encode("ascii") + b"".join(self.chunks)
        path.write_bytes(payload)


def write_mesh_ply(mesh: TexturedMesh, path, page_files: list[str] | None = None):
    """Write a textured mesh as binary PLY with per-face texcoord/texnumber."""
    path = Path(path)
    w = _PlyWriter()
    page_files = page_files or [f"page_{i:04d}.png" for i in range(len(mesh.pages))]
    for name in page_files:
        w.comment(f"TextureFile {name}")
    w.element("vertex", mesh.n_vertices, ["double x", "double y", "double z"])
    w.element("face", mesh.n_faces, [
        "list uchar int vertex_indices",
        "list uchar double texcoord",
        "int texnumber",
    ])
    for v in mesh.vertices:
        w.pack("3d", *v)
    for fi in range(mesh.n_faces):
        w.pack("B3i", 3, *mesh.faces[fi])
        w.pack("B6d", 6, *mesh.face_uvs[fi].ravel())
        w.pack("i", int(mesh.face_pages[fi]))
    w.write(path)
    for name, page in zip(page_files, mesh.pages):
        Image.fromarray(page).save(path.parent / name)


def _load_ply_mesh(path: Path) -> TexturedMesh:
    elements, comments = _read_ply(path)
    if "vertex" not in elements or "face" not in elements:
        raise MeshError(f"{path} lacks vertex/face elements")
    verts = np.array([[v["x"], v["y"], v["z"]] for v in elements["vertex"]], dtype=float)
    faces = []
    uvs = []
    pagenums = []
    for row in elements["face"]:
        idx = row.get("vertex_indices") or row.get("vertex_index")
        if idx is None or len(idx) != 3:
            raise MeshError("only triangle faces are supported")
        faces.append(idx)
        if "texcoord" in row:
            uvs.append(np.array(row["texcoord"], dtype=float).reshape(3, 2))
            pagenums.append(int(row.get("texnumber", 0)))
        else:
            uvs.append(np.zeros((3, 2)))
            pagenums.append(-1)
    pages = []
    for c in comments:
        if c.startswith("TextureFile"):
            name = c.split(None, 1)[1]
            img = Image.open(path.parent / name).convert("RGB")
            pages.append(np.asarray(img))
    return build_mesh(verts, np.array(faces), np.array(uvs), np.array(pagenums), pages)


# ---------------------------------------------------------------------------
# OBJ
# ---------------------------------------------------------------------------

def _load_obj_mesh(path: Path) -> TexturedMesh:
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[int]] = []
    face_uv_idx: list[list[int]] = []
    face_mtl: list[str] = []
    mtllibs: list[str] = []
    current_mtl = ""
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(parts[1]), float(parts[2])])
        elif parts[0] == "mtllib":
            mtllibs.append(parts[1])
        elif parts[0] == "usemtl":
            current_mtl = parts[1]
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshError("only triangle faces are supported")
            vi, ti = [], []
            for token in parts[1:]:
                fields = token.split("/")
                vi.append(int(fields[0]) - 1)
                ti.append(int(fields[1]) - 1 if len(fields) > 1 and fields[1] else -1)
            faces.append(vi)
            face_uv_idx.append(ti)
            face_mtl.append(current_mtl)

    # Resolve materials to page images.
    mtl_to_page: dict[str, int] = {}
    pages: list[np.ndarray] = []
    for lib in mtllibs:
        lib_path = path.parent / lib
        if not lib_path.exists():
            continue
        name = None
        for raw in lib_path.read_text().splitlines():
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "newmtl":
                name = parts[1]
            elif parts[0] == "map_Kd" and name is not None:
                img_path = path.parent / parts[1]
                if not img_path.exists():
                    raise MeshError(f"missing texture page {img_path}")
                mtl_to_page[name] = len(pages)
                pages.append(np.asarray(Image.open(img_path).convert("RGB")))

    verts_arr = np.array(verts, dtype=float).reshape(-1, 3)
    faces_arr = np.array(faces, dtype=np.int64).reshape(-1, 3)
    uvs_arr = np.array(uvs, dtype=float).reshape(-1, 2) if uvs else np.zeros((0, 2))
    face_uvs = np.zeros((len(faces_arr), 3, 2))
    face_pages = np.full(len(faces_arr), -1, dtype=np.int64)
    for fi, (ti, mtl) in enumerate(zip(face_uv_idx, face_mtl)):
        page = mtl_to_page.get(mtl, -1)
        if page >= 0 and all(t >= 0 for t in ti):
            if max(ti) >= len(uvs_arr):
                raise MeshError("face references an out-of-range UV")
            face_uvs[fi] = uvs_arr[ti]
            face_pages[fi] = page
    return build_mesh(verts_arr, faces_arr, face_uvs, face_pages, pages)


def write_mesh_obj(mesh: TexturedMesh, path):
    """Write OBJ + MTL + page PNGs; deterministic text output."""
    path = Path(path)
    stem = path.stem
    lines = [f"mtllib {stem}.mtl"]
    for v in mesh.vertices:
        lines.append("v " + " ".join(format(x, ".9g") for x in v))
    uv_index: dict[tuple[float, float], int] = {}
    uv_lines: list[str] = []
    face_uv_ids = np.zeros((mesh.n_faces, 3), dtype=np.int64)
    for fi in range(mesh.n_faces):
        for k in range(3):
            key = (round(mesh.face_uvs[fi, k, 0], 9), round(mesh.face_uvs[fi, k, 1], 9))
            if key not in uv_index:
                uv_index[key] = len(uv_index)
                uv_lines.append(f"vt {format(key[0], '.9g')} {format(key[1], '.9g')}")
            face_uv_ids[fi, k] = uv_index[key]
    lines.extend(uv_lines)
    # Faces stay in index order so reload preserves face ids; usemtl is
    # re-emitted whenever the page changes.
    current_page = None
    for fi in range(mesh.n_faces):
        page = int(mesh.face_pages[fi])
        if page != current_page:
            lines.append(f"usemtl page{page}" if page >= 0 else "usemtl none")
            current_page = page
        f = mesh.faces[fi]
        t = face_uv_ids[fi]
        lines.append("f " + " ".join(f"{f[k] + 1}/{t[k] + 1}" for k in range(3)))
    path.write_text("\n".join(lines) + "\n")
    mtl = []
    for pi in range(len(mesh.pages)):
        mtl.extend([f"newmtl page{pi}", f"map_Kd {stem}_page{pi}.png", ""])
    (path.parent / f"{stem}.mtl").write_text("\n".join(mtl))
    for pi, page in enumerate(mesh.pages):
        Image.fromarray(page).save(path.parent / f"{stem}_page{pi}.png")


def load_mesh(path) -> TexturedMesh:
    """Load a textured mesh from OBJ (+MTL+pages) or PLY."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj_mesh(path)
    if suffix == ".ply":
        return _load_ply_mesh(path)
    raise MeshError(f"unsupported mesh format {suffix!r}")


# ---------------------------------------------------------------------------
# Labels, masks, manifest
# ---------------------------------------------------------------------------

def write_face_labels_ply(mesh: TexturedMesh, labels: np.ndarray, path):
    w = _PlyWriter()
    w.element("vertex", mesh.n_vertices, ["double x", "double y", "double z"])
    w.element("face", mesh.n_faces, ["list uchar int vertex_indices", "int label"])
    for v in mesh.vertices:
        w.pack("3d", *v)
    for fi in range(mesh.n_faces):
        w.pack("B3i", 3, *mesh.faces[fi])
        w.pack("i", int(labels[fi]))
    w.write(Path(path))


def read_face_labels_ply(path) -> np.ndarray:
    elements, _ = _read_ply(Path(path))
    if "face" not in elements:
        raise LabelError(f"{path} has no face element")
    return np.array([int(row["label"]) for row in elements["face"]], dtype=np.int64)


def write_segment_map_ply(mesh: TexturedMesh, segment_ids: np.ndarray, path):
    w = _PlyWriter()
    w.element("vertex", mesh.n_vertices, ["double x", "double y", "double z"])
    w.element("face", mesh.n_faces, ["list uchar int vertex_indices", "int segment"])
    for v in mesh.vertices:
        w.pack("3d", *v)
    for fi in range(mesh.n_faces):
        w.pack("B3i", 3, *mesh.faces[fi])
        w.pack("i", int(segment_ids[fi]))
    w.write(Path(path))


def write_mask_png(mask: np.ndarray, taxonomy: LabelTaxonomy, path):
    img = Image.fromarray(np.asarray(mask, dtype=np.uint8), mode="P")
    img.putpalette(taxonomy.palette())
    img.save(Path(path), optimize=False)


def read_mask_png(path) -> np.ndarray:
    img = Image.open(Path(path))
    if img.mode != "P":
        raise LabelError(f"{path} is not an indexed mask")
    return np.asarray(img, dtype=np.uint8)


def taxonomy_to_manifest(taxonomy: LabelTaxonomy) -> list[dict]:
    return [
        {"id": c.id, "name": c.name, "role": c.role, "color": list(c.color)}
        for c in taxonomy.classes
    ]


def taxonomy_from_manifest(rows: list[dict]) -> LabelTaxonomy:
    return LabelTaxonomy(tuple(
        LabelClass(int(r["id"]), r["name"], r["role"], tuple(r["color"])) for r in rows
    ))


def save_annotations(mesh: TexturedMesh, face_labels: FaceLabelMap,
                     masks: PixelLabelMask, out_dir) -> dict:
    """Write face labels, per-page mask rasters, and the taxonomy manifest.

    Byte-stable for identical inputs; returns the manifest dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if len(face_labels.labels) != mesh.n_faces:
        raise LabelError("face label count does not match the mesh")
    if len(masks.masks) != len(mesh.pages):
        raise LabelError("mask page count does not match the mesh")
    for m, p in zip(masks.masks, mesh.pages):
        if m.shape != p.shape[:2]:
            raise LabelError("mask resolution does not match its page")

    taxonomy = face_labels.taxonomy
    write_face_labels_ply(mesh, face_labels.labels, out / "face_labels.ply")
    mask_files = {}
    for pi, m in enumerate(masks.masks):
        name = f"mask_page_{pi:04d}.png"
        write_mask_png(m, taxonomy, out / name)
        mask_files[str(pi)] = name
    manifest = {
        "classes": taxonomy_to_manifest(taxonomy),
        "face_count": mesh.n_faces,
        "files": {"face_labels": "face_labels.ply", "masks": mask_files},
        "pages": [
            {"index": i, "width": int(p.shape[1]), "height": int(p.shape[0])}
            for i, p in enumerate(mesh.pages)
        ],
    }
    (out / "annotations.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return manifest


def load_annotations(mesh: TexturedMesh, in_dir) -> tuple[FaceLabelMap, PixelLabelMask]:
    """Inverse of save_annotations; validates taxonomy and shapes."""
    src = Path(in_dir)
    manifest_path = src / "annotations.json"
    if not manifest_path.exists():
        raise FileNotFoundError(str(manifest_path))
    manifest = json.loads(manifest_path.read_text())
    taxonomy = taxonomy_from_manifest(manifest["classes"])
    reference = default_taxonomy()
    if len(taxonomy) != len(reference) or any(
        (a.id, a.name, a.role) != (b.id, b.name, b.role)
        for a, b in zip(taxonomy.classes, reference.classes)
    ):
        raise LabelError("manifest taxonomy does not match the expected class set")
    if manifest["face_count"] != mesh.n_faces:
        raise LabelError(
            f"manifest face count {manifest['face_count']} != mesh {mesh.n_faces}"
        )
    labels = read_face_labels_ply(src / manifest["files"]["face_labels"])
    if len(labels) != mesh.n_faces:
        raise LabelError("face label count does not match the mesh")
    masks = []
    for pi, page in enumerate(mesh.pages):
        name = manifest["files"]["masks"].get(str(pi))
        if name is None or not (src / name).exists():
            raise LabelError(f"missing mask for page {pi}")
        m = read_mask_png(src / name)
        if m.shape != page.shape[:2]:
            raise LabelError(f"mask resolution {m.shape} != page {page.shape[:2]}")
        masks.append(m)
    return (FaceLabelMap(labels, taxonomy), PixelLabelMask(masks, taxonomy))


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------

def write_point_cloud_ply(points: np.ndarray, normals: np.ndarray,
                          colors: np.ndarray, labels: np.ndarray,
                          face_ids: np.ndarray, path):
    """Binary PLY with x,y,z,nx,ny,nz,red,green,blue,label,face_id."""
    w = _PlyWriter()
    n = len(points)
    w.element("vertex", n, [
        "double x", "double y", "double z",
        "double nx", "double ny", "double nz",
        "uchar red", "uchar green", "uchar blue",
        "int label", "int face_id",
    ])
    for i in range(n):
        w.pack("6d", *points[i], *normals[i])
        w.pack("3B", *(int(c) for c in colors[i]))
        w.pack("2i", int(labels[i]), int(face_ids[i]))
    w.write(Path(path))


def read_point_cloud_ply(path):
    elements, _ = _read_ply(Path(path))
    rows = elements["vertex"]
    pts = np.array([[r["x"], r["y"], r["z"]] for r in rows], dtype=float)
    normals = np.array([[r.get("nx", 0), r.get("ny", 0), r.get("nz", 0)] for r in rows], dtype=float)
    colors = np.array([[r.get("red", 0), r.get("green", 0), r.get("blue", 0)] for r in rows], dtype=np.uint8)
    labels = np.array([r.get("label", 0) for r in rows], dtype=np.int64)
    face_ids = np.array([r.get("face_id", -1) for r in rows], dtype=np.int64)
    return pts, normals, colors, labels, face_ids
