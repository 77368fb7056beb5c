"""Stateful HTTP facade over the annotation toolkit.

Sessions wrap a loaded mesh with its planar segments, label state, tunable
parameters, and an undo/redo stack. Interactive operations (gesture ->
candidates -> protrusions, template matching, click expansion, refinement)
are stateless proposals; only explicit actions mutate labels. Heavy
endpoints run under a server-side timeout.
"""

from __future__ import annotations

import base64
import io
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .face_annotation import (SelectionError, build_protrusion_problem,
                              candidate_faces, classify_gesture,
                              extract_protrusions, match_planar_segments,
                              match_protrusions)
from .mesh_core import FaceLabelMap, LabelError, MeshError, PixelLabelMask
from .mesh_io import load_mesh, save_annotations, taxonomy_to_manifest
from .plane_segmentation import (SegmentationError, merge_segments,
                                 oversegment, split_segment)
from .sampling import SamplingError
from .texture_annotation import (Region, TextureError, build_canvas,
                                 compute_superpixels, fine_segment,
                                 local_expand, match_regions)

COMPUTE_TIMEOUT_S = 60.0

_EXECUTOR = ThreadPoolExecutor(max_workers=4)


@dataclass(frozen=True)
class SessionParams:
    eta: float = 1.0
    lambda_f: float = 0.5
    lambda_s: float = 0.3
    alpha: float = 1.0
    eps_seg: float = 30.0
    eps_str: float = 2.0
    eps_seed: float = 15.0
    eps_reg: float = 30.0
    scale_s: float = 4.0
    s_reg: float = 4.0
    gesture_ratio: float = 0.2
    region_size: int = 16
    angle_thresh: float = 20.0
    dist_thresh: float = 0.3
    min_faces: int = 3
    seed: int = 0


@dataclass
class Action:
    kind: str
    payload: dict
    inverse: Any = None


class AnnotationSession:
    """Mutable labeling state over one mesh; single-writer, versioned."""

    def __init__(self, session_id: str, mesh, params: SessionParams):
        self.id = session_id
        self.mesh = mesh
        self.params = params
        self.segments = oversegment(mesh, params.angle_thresh,
                                    params.dist_thresh, params.min_faces)
        self.face_labels = FaceLabelMap.empty(mesh.n_faces)
        self.masks = PixelLabelMask.empty(mesh)
        self.version = 0
        self.undo_stack: list[Action] = []
        self.redo_stack: list[Action] = []
        self.lock = threading.Lock()
        self._canvas_cache: dict[int, tuple] = {}

    # -- canvases ----------------------------------------------------------

    def canvas_for(self, segment_id: int):
        cached = self._canvas_cache.get(segment_id)
        if cached is not None:
            return cached
        seg = self.segment(segment_id)
        canvas = build_canvas(self.mesh, seg)
        sp = compute_superpixels(canvas, region_size=self.params.region_size,
                                 seed=self.params.seed)
        self._canvas_cache[segment_id] = (canvas, sp)
        return canvas, sp

    def segment(self, segment_id: int):
        for seg in self.segments:
            if seg.id == segment_id:
                return seg
        raise KeyError(segment_id)

    # -- actions -----------------------------------------------------------

    def apply(self, action: Action) -> int:
        with self.lock:
            inverse = self._mutate(action.kind, action.payload)
            action.inverse = inverse
            self.undo_stack.append(action)
            self.redo_stack.clear()
            self.version += 1
            return self.version

    def undo(self) -> int:
        with self.lock:
            if not self.undo_stack:
                raise LabelError("nothing to undo")
            action = self.undo_stack.pop()
            self._apply_inverse(action)
            self.redo_stack.append(action)
            self.version += 1
            return self.version

    def redo(self) -> int:
        with self.lock:
            if not self.redo_stack:
                raise LabelError("nothing to redo")
            action = self.redo_stack.pop()
            action.inverse = self._mutate(action.kind, action.payload)
            self.undo_stack.append(action)
            self.version += 1
            return self.version

    def _mutate(self, kind: str, payload: dict):
        if kind == "label_faces":
            faces = np.asarray(payload["faces"], dtype=np.int64)
            class_id = int(payload["class_id"])
            if faces.size and (faces.min() < 0 or faces.max() >= self.mesh.n_faces):
                raise LabelError("face id out of range")
            old = self.face_labels.labels[faces].copy()
            trial = self.face_labels.labels.copy()
            trial[faces] = class_id
            self.face_labels = FaceLabelMap(trial, self.face_labels.taxonomy)
            return ("label_faces", faces, old)
        if kind == "label_pixels":
            segment_id = int(payload["segment"])
            class_id = int(payload["class_id"])
            mask = decode_mask(payload["mask_png_base64"])
            canvas, _ = self.canvas_for(segment_id)
            if mask.shape != canvas.shape:
                raise LabelError("mask resolution does not match the canvas")
            sel = mask & canvas.covered
            coords = canvas.page_coords[sel]
            pages = coords[:, 0]
            xs = coords[:, 1]
            ys = coords[:, 2]
            old = []
            new_masks = [m.copy() for m in self.masks.masks]
            for page in np.unique(pages):
                in_page = pages == page
                old.append((int(page), xs[in_page], ys[in_page],
                            new_masks[int(page)][ys[in_page], xs[in_page]].copy()))
                new_masks[int(page)][ys[in_page], xs[in_page]] = class_id
            self.masks = PixelLabelMask(new_masks, self.masks.taxonomy)
            return ("label_pixels", old)
        if kind == "merge_segments":
            old_segments = self.segments
            self.segments = merge_segments(self.mesh, self.segments,
                                           [int(i) for i in payload["ids"]])
            self._canvas_cache.clear()
            return ("segments", old_segments)
        if kind == "split_segment":
            old_segments = self.segments
            self.segments = split_segment(self.mesh, self.segments,
                                          int(payload["id"]), payload["parts"])
            self._canvas_cache.clear()
            return ("segments", old_segments)
        if kind == "set_params":
            old = self.params
            try:
                self.params = replace(self.params, **payload)
            except TypeError as exc:
                raise LabelError(f"unknown parameter: {exc}")
            return ("params", old)
        raise LabelError(f"unknown action kind {kind!r}")

    def _apply_inverse(self, action: Action):
        tag = action.inverse[0]
        if tag == "label_faces":
            _, faces, old = action.inverse
            trial = self.face_labels.labels.copy()
            trial[faces] = old
            self.face_labels = FaceLabelMap(trial, self.face_labels.taxonomy)
        elif tag == "label_pixels":
            _, entries = action.inverse
            new_masks = [m.copy() for m in self.masks.masks]
            for page, xs, ys, old in entries:
                new_masks[page][ys, xs] = old
            self.masks = PixelLabelMask(new_masks, self.masks.taxonomy)
        elif tag == "segments":
            self.segments = action.inverse[1]
            self._canvas_cache.clear()
        elif tag == "params":
            self.params = action.inverse[1]
        else:
            raise LabelError(f"corrupt inverse {tag!r}")


# ---------------------------------------------------------------------------
# wire helpers
# ---------------------------------------------------------------------------

def encode_png(array: np.ndarray) -> str:
    img = Image.fromarray(array)
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_mask(data: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data)))
    arr = np.asarray(img.convert("L"))
    return arr > 127


def encode_mask(mask: np.ndarray) -> str:
    return encode_png((mask.astype(np.uint8) * 255))


def region_payload(region: Region, norm: float | None = None) -> dict:
    ys, xs = np.nonzero(region.mask)
    out = {
        "mask_png_base64": encode_mask(region.mask),
        "count": int(region.count),
        "bbox": [int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1],
    }
    if norm is not None:
        out["norm"] = float(norm)
    return out


def _run_with_timeout(fn, *args, **kwargs):
    future = _EXECUTOR.submit(fn, *args, **kwargs)
    try:
        return future.result(timeout=COMPUTE_TIMEOUT_S)
    except FutureTimeout:
        raise HTTPException(status_code=504,
                            detail={"code": "timeout",
                                    "message": "solver exceeded the time budget"})


# ---------------------------------------------------------------------------
# request models
# ---------------------------------------------------------------------------

class CreateSessionRequest(BaseModel):
    mesh_path: str
    params: dict = {}


class GestureRequest(BaseModel):
    polyline: list[list[float]]
    hit_faces: list[int]


class ProtrusionRequest(BaseModel):
    candidate_faces: list[int]


class MatchSegmentsRequest(BaseModel):
    template_segment: int
    use_color: bool = False


class MatchProtrusionsRequest(BaseModel):
    template_faces: list[int]
    topology_constrained: bool = True


class ExpandRequest(BaseModel):
    texel: list[int]


class RegionBody(BaseModel):
    mask_png_base64: str


class RefineRequest(BaseModel):
    region: RegionBody
    iterations: int = 5


class MatchRegionsRequest(BaseModel):
    template_region: RegionBody


class ActionRequest(BaseModel):
    kind: str
    payload: dict


class ExportRequest(BaseModel):
    dir: str


def create_app(data_root: str | None = None, frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="meshannot annotation service")
    sessions: dict[str, AnnotationSession] = {}
    root = Path(data_root) if data_root else None

    def resolve(path: str) -> Path:
        p = Path(path)
        if not p.is_absolute() and root is not None:
            p = root / p
        return p

    def get_session(session_id: str) -> AnnotationSession:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404,
                                detail={"code": "not_found",
                                        "message": f"unknown session {session_id}"})
        return session

    @app.exception_handler(ValueError)
    def value_error_handler(request, exc):
        return JSONResponse(status_code=400,
                            content={"code": "validation", "message": str(exc)})

    @app.exception_handler(FileNotFoundError)
    def missing_file_handler(request, exc):
        return JSONResponse(status_code=400,
                            content={"code": "missing_file", "message": str(exc)})

    from fastapi.exceptions import RequestValidationError
    from starlette.exceptions import HTTPException as StarletteHTTPException

    @app.exception_handler(StarletteHTTPException)
    def http_error_handler(request, exc):
        detail = exc.detail
        if not isinstance(detail, dict):
            detail = {"code": "error", "message": str(detail)}
        return JSONResponse(status_code=exc.status_code, content=detail)

    @app.exception_handler(RequestValidationError)
    def schema_error_handler(request, exc):
        return JSONResponse(status_code=400,
                            content={"code": "validation", "message": str(exc)})

    @app.get("/taxonomy")
    def taxonomy():
        from .mesh_core import default_taxonomy
        return {"classes": taxonomy_to_manifest(default_taxonomy())}

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        mesh = load_mesh(resolve(req.mesh_path))
        params = SessionParams(**req.params)
        session_id = uuid.uuid4().hex[:12]
        session = AnnotationSession(session_id, mesh, params)
        sessions[session_id] = session
        return {"session": session_id, "faces": mesh.n_faces,
                "segments": len(session.segments), "version": session.version}

    @app.get("/sessions/{session_id}")
    def session_info(session_id: str):
        s = get_session(session_id)
        labeled = int((s.face_labels.labels != 0).sum())
        return {"session": s.id, "version": s.version, "faces": s.mesh.n_faces,
                "segments": len(s.segments), "labeled_faces": labeled,
                "params": asdict(s.params)}

    @app.get("/sessions/{session_id}/mesh")
    def session_mesh(session_id: str):
        s = get_session(session_id)
        return {
            "vertices": s.mesh.vertices.tolist(),
            "faces": s.mesh.faces.tolist(),
            "face_uvs": s.mesh.face_uvs.tolist(),
            "face_pages": s.mesh.face_pages.tolist(),
            "pages": [encode_png(p) for p in s.mesh.pages],
            "face_labels": s.face_labels.labels.tolist(),
        }

    @app.get("/sessions/{session_id}/labels")
    def session_labels(session_id: str):
        s = get_session(session_id)
        return {"version": s.version, "face_labels": s.face_labels.labels.tolist()}

    @app.get("/sessions/{session_id}/segments")
    def session_segments(session_id: str):
        s = get_session(session_id)
        return {"segments": [
            {
                "id": seg.id,
                "n_faces": int(len(seg.faces)),
                "faces": seg.faces.tolist(),
                "area": seg.area,
                "mean_height": seg.mean_height,
                "verticality": seg.verticality,
                "normal": seg.plane.normal.tolist(),
                "textured": bool(np.all(s.mesh.face_pages[seg.faces] >= 0)),
            }
            for seg in s.segments
        ]}

    @app.post("/sessions/{session_id}/gesture")
    def gesture(session_id: str, req: GestureRequest):
        s = get_session(session_id)
        g = classify_gesture(np.array(req.polyline, dtype=float),
                             np.array(req.hit_faces, dtype=np.int64),
                             ratio_thresh=s.params.gesture_ratio)
        cand = candidate_faces(s.mesh, s.segments, g)
        return {"kind": g.kind, "candidate_faces": cand.tolist()}

    @app.post("/sessions/{session_id}/protrusions")
    def protrusions(session_id: str, req: ProtrusionRequest):
        s = get_session(session_id)

        def work():
            problem = build_protrusion_problem(
                s.mesh, s.segments, np.array(req.candidate_faces, dtype=np.int64),
                eta=s.params.eta, lam=s.params.lambda_f)
            return extract_protrusions(problem)

        faces = _run_with_timeout(work)
        return {"faces": faces.tolist()}

    @app.post("/sessions/{session_id}/match/segments")
    def match_segments_ep(session_id: str, req: MatchSegmentsRequest):
        s = get_session(session_id)
        try:
            template = s.segment(req.template_segment)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail={"code": "not_found",
                                        "message": f"unknown segment {req.template_segment}"})
        matches = _run_with_timeout(match_planar_segments, template, s.segments,
                                    s.params.eps_seg, req.use_color)
        return {"matches": [{"segment": mid, "norm": norm} for mid, norm in matches]}

    @app.post("/sessions/{session_id}/match/protrusions")
    def match_protrusions_ep(session_id: str, req: MatchProtrusionsRequest):
        s = get_session(session_id)
        matches = _run_with_timeout(
            match_protrusions, s.mesh, s.segments,
            np.array(req.template_faces, dtype=np.int64),
            s.params.scale_s, s.params.eps_str, req.topology_constrained)
        return {"matches": [faces.tolist() for faces, _ in matches],
                "norms": [norm for _, norm in matches]}

    @app.get("/sessions/{session_id}/segments/{segment_id}/canvas")
    def canvas(session_id: str, segment_id: int):
        s = get_session(session_id)
        try:
            canvas_, sp = _run_with_timeout(s.canvas_for, segment_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail={"code": "not_found",
                                        "message": f"unknown segment {segment_id}"})
        h, w = canvas_.shape
        labels16 = (sp.labels + 1).astype(np.uint16)   # 0 = uncovered
        return {
            "png_base64": encode_png(canvas_.image),
            "width": w,
            "height": h,
            "covered_png_base64": encode_mask(canvas_.covered),
            "superpixels": {
                "count": sp.n,
                "labels_base64": base64.b64encode(labels16.tobytes()).decode("ascii"),
                "dtype": "uint16",
            },
        }

    @app.post("/sessions/{session_id}/segments/{segment_id}/expand")
    def expand(session_id: str, segment_id: int, req: ExpandRequest):
        s = get_session(session_id)
        try:
            _, sp = s.canvas_for(segment_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail={"code": "not_found",
                                        "message": f"unknown segment {segment_id}"})
        region = _run_with_timeout(local_expand, sp, tuple(req.texel),
                                   s.params.alpha, s.params.lambda_s,
                                   s.params.seed)
        return {"region": region_payload(region)}

    @app.post("/sessions/{session_id}/segments/{segment_id}/refine")
    def refine(session_id: str, segment_id: int, req: RefineRequest):
        s = get_session(session_id)
        try:
            canvas_, _ = s.canvas_for(segment_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail={"code": "not_found",
                                        "message": f"unknown segment {segment_id}"})
        mask = decode_mask(req.region.mask_png_base64)
        if mask.shape != canvas_.shape:
            raise HTTPException(status_code=400,
                                detail={"code": "validation",
                                        "message": "mask resolution mismatch"})
        coarse = Region.from_mask(canvas_, mask, seed=s.params.seed)
        refined = _run_with_timeout(fine_segment, canvas_, coarse,
                                    req.iterations, s.params.seed)
        return {"mask_png_base64": encode_mask(refined)}

    @app.post("/sessions/{session_id}/segments/{segment_id}/match/regions")
    def match_regions_ep(session_id: str, segment_id: int, req: MatchRegionsRequest):
        s = get_session(session_id)
        try:
            canvas_, sp = s.canvas_for(segment_id)
        except KeyError:
            raise HTTPException(status_code=404,
                                detail={"code": "not_found",
                                        "message": f"unknown segment {segment_id}"})
        mask = decode_mask(req.template_region.mask_png_base64)
        if mask.shape != canvas_.shape:
            raise HTTPException(status_code=400,
                                detail={"code": "validation",
                                        "message": "mask resolution mismatch"})
        template = Region.from_mask(canvas_, mask, seed=s.params.seed)
        matches = _run_with_timeout(match_regions, canvas_, sp, template,
                                    s.params.eps_seed, s.params.eps_reg,
                                    s.params.s_reg, s.params.seed)
        return {"regions": [region_payload(r, norm) for r, norm in matches]}

    @app.post("/sessions/{session_id}/actions")
    def actions(session_id: str, req: ActionRequest):
        s = get_session(session_id)
        version = s.apply(Action(kind=req.kind, payload=req.payload))
        return {"version": version}

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        s = get_session(session_id)
        return {"version": s.undo()}

    @app.post("/sessions/{session_id}/redo")
    def redo(session_id: str):
        s = get_session(session_id)
        return {"version": s.redo()}

    @app.post("/sessions/{session_id}/export")
    def export(session_id: str, req: ExportRequest):
        s = get_session(session_id)
        out = resolve(req.dir)
        try:
            manifest = save_annotations(s.mesh, s.face_labels, s.masks, out)
        except OSError as exc:
            raise HTTPException(status_code=400,
                                detail={"code": "io", "message": str(exc)})
        return {"manifest": manifest, "dir": str(out)}

    if frontend_dir and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app
