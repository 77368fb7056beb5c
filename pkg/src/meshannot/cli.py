"""Command-line entry points: segmentation export, sampling, label transfer,
evaluation, fixture generation, and the HTTP server."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import mesh_io
from .fixtures import FixtureSpec, gen_fixture
from .mesh_core import default_taxonomy
from .metrics import (ConfusionMatrix, boundary_iou, boundary_iou_mesh,
                      segmentation_scores)
from .plane_segmentation import oversegment
from .sampling import (label_cloud_from_truth, sample_points,
                       transfer_to_faces, transfer_to_pixels)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2


class CliError(ValueError):
    pass


def _load_params(raw: str | None) -> dict:
    if not raw:
        return {}
    try:
        params = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CliError(f"--params is not valid JSON: {exc}")
    if not isinstance(params, dict):
        raise CliError("--params must be a JSON object")
    return params


def _emit(args, payload: dict):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        for key, value in payload.items():
            print(f"{key}: {value}")


def cmd_segment(args) -> int:
    mesh = mesh_io.load_mesh(args.mesh)
    params = _load_params(args.params)
    segments = oversegment(
        mesh,
        angle_thresh=params.get("angle_thresh", 20.0),
        dist_thresh=params.get("dist_thresh", 0.3),
        min_faces=params.get("min_faces", 3),
    )
    from .plane_segmentation import face_to_segment
    seg_map = face_to_segment(segments, mesh.n_faces)
    mesh_io.write_segment_map_ply(mesh, seg_map, args.out)
    _emit(args, {"segments": len(segments), "faces": mesh.n_faces,
                 "out": str(args.out)})
    return EXIT_OK


def cmd_sample(args) -> int:
    mesh = mesh_io.load_mesh(args.mesh)
    cloud = sample_points(mesh, args.strategy, seed=args.seed,
                          n_points=args.n_points, radius=args.radius,
                          region_size=args.region_size)
    if args.labels:
        labels, masks = mesh_io.load_annotations(mesh, args.labels)
        if args.label_track == "face":
            label_cloud_from_truth(cloud, labels, None)
        else:
            label_cloud_from_truth(cloud, None, masks)
    mesh_io.write_point_cloud_ply(cloud.points, cloud.normals, cloud.colors,
                                  cloud.labels, cloud.face_ids, args.out)
    _emit(args, {"points": len(cloud), "strategy": args.strategy,
                 "out": str(args.out)})
    return EXIT_OK


def cmd_transfer(args) -> int:
    mesh = mesh_io.load_mesh(args.mesh)
    pts, normals, colors, labels, face_ids = mesh_io.read_point_cloud_ply(args.cloud)
    from .sampling import PointCloud
    cloud = PointCloud(points=pts, normals=normals, colors=colors,
                       face_ids=face_ids,
                       texels=np.full((len(pts), 3), -1, dtype=np.int64),
                       labels=labels)
    face_labels = transfer_to_faces(mesh, cloud)
    if args.mode in ("pixels", "both"):
        masks = transfer_to_pixels(mesh, cloud)
    else:
        from .mesh_core import PixelLabelMask
        masks = PixelLabelMask.empty(mesh)
    mesh_io.save_annotations(mesh, face_labels, masks, args.out)
    _emit(args, {"faces": mesh.n_faces, "out": str(args.out)})
    return EXIT_OK


def cmd_eval(args) -> int:
    mesh = mesh_io.load_mesh(args.mesh)
    pred_labels, pred_masks = mesh_io.load_annotations(mesh, args.pred)
    truth_labels, truth_masks = mesh_io.load_annotations(mesh, args.truth)
    taxonomy = default_taxonomy()

    def track_report(scores, biou):
        # Both tracks exclude `unclassified` from per-class means.
        per_class = {k: v for k, v in scores.per_class_iou.items() if k != 0}
        return {
            "overall_accuracy": scores.overall_accuracy,
            "mean_accuracy": scores.mean_accuracy,
            "mean_iou": float(np.mean(list(per_class.values()))) if per_class else 0.0,
            "boundary_iou": biou,
            "per_class_iou": {str(k): v for k, v in per_class.items()},
        }

    confusion = ConfusionMatrix.from_labels(
        truth_labels.labels, pred_labels.labels, weights=mesh.face_areas,
        n_classes=len(taxonomy), ignore_truth_zero=True)
    scores = segmentation_scores(confusion)
    face_biou = boundary_iou_mesh(mesh, pred_labels.labels, truth_labels.labels)
    report = {"face": track_report(scores, face_biou)}

    if any(m.any() for m in truth_masks.masks):
        truth_flat = np.concatenate([m.ravel() for m in truth_masks.masks])
        pred_flat = np.concatenate([m.ravel() for m in pred_masks.masks])
        pix_conf = ConfusionMatrix.from_labels(truth_flat, pred_flat,
                                               n_classes=len(taxonomy),
                                               ignore_truth_zero=True)
        pixel_scores = segmentation_scores(pix_conf)
        pixel_biou = float(np.mean([
            boundary_iou(p, t) for p, t in zip(pred_masks.masks, truth_masks.masks)
        ]))
        report["pixel"] = track_report(pixel_scores, pixel_biou)
    print(json.dumps(report, sort_keys=True, indent=None if args.json else 2))

    if args.csv:
        rows = ["class_id,class_name,track,iou"]
        for track in ("face", "pixel"):
            if track not in report:
                continue
            for cid, iou in sorted(report[track]["per_class_iou"].items(),
                                   key=lambda kv: int(kv[0])):
                name = taxonomy.classes[int(cid)].name
                rows.append(f"{cid},{name},{track},{iou:.6f}")
        Path(args.csv).write_text("\n".join(rows) + "\n")
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    spec = FixtureSpec(
        seed=args.seed,
        ground_extent=args.ground_extent,
        ground_cell=args.ground_cell,
        box_edges=tuple(args.box_edges),
        roof_style=args.roof_style,
        windows_per_box=args.windows_per_box,
        marking_cells=args.marking_cells,
        vertex_noise=args.vertex_noise,
        texel_noise=args.texel_noise,
        texels_per_meter=args.texels_per_meter,
    )
    summary = gen_fixture(spec, args.out)
    _emit(args, summary)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    app = create_app(data_root=args.data_root, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshannot",
        description="Interactive part-level annotation toolkit for urban textured meshes",
    )
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--params", type=str, default=None,
                        help="JSON object of algorithm parameters")
    parser.add_argument("--json", action="store_true",
                        help="machine-readable JSON reports on stdout")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap for parallel kernels")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="planar over-segmentation to PLY")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sample", help="generate a point cloud from a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", required=True,
                   choices=["face_centered", "random", "poisson", "superpixel"])
    p.add_argument("--n-points", type=int, default=1000)
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--region-size", type=int, default=16)
    p.add_argument("--labels", default=None,
                   help="annotation dir whose classes are attached to points")
    p.add_argument("--label-track", choices=["face", "pixel"], default="face",
                   help="which label track the attached classes come from")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("transfer", help="transfer point labels back to the mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["faces", "pixels", "both"], default="both")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval", help="score predictions against truth")
    p.add_argument("--mesh", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--csv", default=None, help="per-class CSV output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-fixture", help="generate a synthetic truth fixture")
    p.add_argument("--out", required=True)
    p.add_argument("--ground-extent", type=float, default=8.0)
    p.add_argument("--ground-cell", type=float, default=0.5)
    p.add_argument("--box-edges", type=float, nargs="+", default=[1.0])
    p.add_argument("--roof-style", choices=["flat", "gabled"], default="flat")
    p.add_argument("--windows-per-box", type=int, default=1)
    p.add_argument("--marking-cells", type=int, default=4)
    p.add_argument("--vertex-noise", type=float, default=0.0)
    p.add_argument("--texel-noise", type=float, default=2.0)
    p.add_argument("--texels-per-meter", type=int, default=16)
    p.set_defaults(func=cmd_gen_fixture)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--data-root", default=".")
    p.add_argument("--frontend", default=None,
                   help="directory of built UI assets to serve at /")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
