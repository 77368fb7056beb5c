"""Acceptance suite: one test per criterion, each printing a PASS line.

Every tolerance is pinned here; fixtures are generated in-process so the
whole gate runs from a clean checkout.
"""

import math
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from meshannot.colors import (GaussianMixture1D, LabColor, ciede2000,
                              wasserstein_gmm_1d)
from meshannot.energy import brute_force_labeling, solve_binary_labeling
from meshannot.face_annotation import (build_protrusion_problem,
                                       candidate_faces, classify_gesture,
                                       extract_protrusions, match_protrusions)
from meshannot.fixtures import FixtureSpec, build_fixture, gen_fixture
from meshannot.geometry import min_area_rect, shrinking_ball_radius
from meshannot.metrics import (UserStudyRecord, aggregate_user_study, mean_iou)
from meshannot.plane_segmentation import oversegment
from meshannot.sampling import (label_cloud_from_truth, sample_points,
                                transfer_to_faces, transfer_to_pixels,
                                _page_lift_map)
from meshannot.service import create_app
from meshannot.texture_annotation import (Region, TextureCanvas,
                                          compute_superpixels,
                                          expansion_energy_problem,
                                          fine_segment, local_expand,
                                          match_regions, ncc_match)

from test_colors import CIEDE2000_PAIRS
from test_energy import _random_problem


def _within(got: float, target: float, tol: float) -> bool:
    # Inclusive tolerance with a float-representation guard.
    return abs(got - target) <= tol + 1e-9


def _report(criterion: int, detail: str):
    print(f"[ACCEPTANCE] criterion {criterion}: PASS - {detail}")


# -- 1. metric arithmetic vs published tables --------------------------------

def test_criterion_1_metric_arithmetic():
    t0 = time.perf_counter()

    rf_mrf_row = (81.6, 86.6, 81.3, 84.5, 24.8, 3.7, 73.3, 27.6, 0.0, 4.8, 0.4, 5.9)
    assert mean_iou(rf_mrf_row) == pytest.approx(39.5, abs=0.05)

    def rec(scene, oper=0.0, time_s=0.0, iou=(), biou=(), sr=0.0):
        return UserStudyRecord(scene=scene, user="u", iou_per_class=tuple(iou),
                               biou_per_class=tuple(biou), operations=oper,
                               time_s=time_s, smart_ratio=sr)

    manual_oper = aggregate_user_study(
        [rec(f"s{i}", oper=v) for i, v in enumerate((18154, 1589, 3559, 3714))])
    assert _within(manual_oper.mean_operations, 6754, 0.5)

    seg_oper = aggregate_user_study(
        [rec(f"s{i}", oper=v) for i, v in enumerate((17645, 1407, 2529, 2894))])
    assert _within(seg_oper.mean_operations, 6119, 0.5)

    manual_time = aggregate_user_study(
        [rec(f"s{i}", time_s=v) for i, v in enumerate((11401.0, 969.5, 2146.5, 2215.8))])
    assert _within(manual_time.mean_time, 4183.2, 0.05)

    ours_time = aggregate_user_study(
        [rec(f"s{i}", time_s=v) for i, v in enumerate((9107.2, 498.0, 1105.9, 1257.5))])
    assert _within(ours_time.mean_time, 2992.1, 0.05)

    ours_miou = aggregate_user_study(
        [rec(f"s{i}", iou=(v,)) for i, v in enumerate((89.5, 94.2, 92.9, 92.2))])
    assert _within(ours_miou.mean_iou, 92.2, 0.05)

    ours_biou = aggregate_user_study(
        [rec(f"s{i}", biou=(v,)) for i, v in enumerate((72.4, 84.5, 71.9, 71.0))])
    assert _within(ours_biou.mean_biou, 75.0, 0.05)

    ours_sr = aggregate_user_study(
        [rec(f"s{i}", sr=v) for i, v in enumerate((66.5, 94.9, 85.8, 84.8))])
    assert _within(ours_sr.mean_smart_ratio, 83.0, 0.05)

    sam_time = aggregate_user_study(
        [rec(f"s{i}", time_s=v) for i, v in
         enumerate((565.5, 150.6, 460.9, 389.5, 800.6, 1476.5))])
    assert _within(sam_time.mean_time, 640.6, 0.05)

    # The main table's operation figure for the interactive method is
    # inconsistent with its own per-scene values; the supplement arithmetic
    # is reproduced instead and the discrepancy is asserted.
    ours_oper = aggregate_user_study(
        [rec(f"s{i}", oper=v) for i, v in enumerate((13231, 909, 1797, 1957))])
    assert _within(ours_oper.mean_operations, 4473.5, 0.5)
    assert abs(ours_oper.mean_operations - 2992) > 1000

    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report(1, f"published aggregation values reproduced in {elapsed:.3f}s")


# -- 2. solver exactness -------------------------------------------------------

def test_criterion_2_solver_exactness():
    rng = np.random.default_rng(20_24)
    t0 = time.perf_counter()
    for _ in range(500):
        problem = _random_problem(rng, n_max=15)
        _, solver_energy = solve_binary_labeling(problem)
        _, oracle_energy = brute_force_labeling(problem)
        assert solver_energy == oracle_energy
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _report(2, f"500 instances exact in {elapsed:.2f}s")


# -- 3. protrusion extraction ---------------------------------------------------

def _box_stroke(fx, segments):
    mesh = fx.mesh
    box = fx.boxes[0]
    centroids = mesh.face_centroids[box]
    top_z = centroids[:, 2].max()
    top = box[centroids[:, 2] > top_z - 0.2]
    low = box[centroids[:, 2] < centroids[:, 2].min() + 0.2]
    hits = low[:2].tolist() + top.tolist()
    return classify_gesture(np.array([[0.0, 0.0], [50.0, 45.0]]), hits)


def _extract_box(fx):
    segments = oversegment(fx.mesh)
    gesture = _box_stroke(fx, segments)
    cand = candidate_faces(fx.mesh, segments, gesture)
    problem = build_protrusion_problem(fx.mesh, segments, cand)
    return set(extract_protrusions(problem).tolist())


def test_criterion_3_protrusion_extraction():
    clean = build_fixture(FixtureSpec(seed=11))
    truth = set(clean.boxes[0].tolist())

    t0 = time.perf_counter()
    got = _extract_box(clean)
    clean_elapsed = time.perf_counter() - t0
    iou_clean = len(got & truth) / len(got | truth)
    assert iou_clean == 1.0
    assert clean_elapsed < 1.0

    sigma = 0.2 * clean.mesh.mean_edge_length()
    noisy = build_fixture(FixtureSpec(seed=11, vertex_noise=sigma))
    t0 = time.perf_counter()
    got_noisy = _extract_box(noisy)
    noisy_elapsed = time.perf_counter() - t0
    truth_noisy = set(noisy.boxes[0].tolist())
    iou_noisy = len(got_noisy & truth_noisy) / len(got_noisy | truth_noisy)
    assert iou_noisy >= 0.9
    assert noisy_elapsed < 1.0
    _report(3, f"clean IoU 1.0 ({clean_elapsed:.2f}s), "
               f"noisy IoU {iou_noisy:.3f} at sigma={sigma:.3f} ({noisy_elapsed:.2f}s)")


# -- 4. 3D template matching ----------------------------------------------------

def test_criterion_4_protrusion_matching(five_box_fixture):
    fx = five_box_fixture
    segments = oversegment(fx.mesh)
    template = fx.boxes[0]

    t0 = time.perf_counter()
    matches = match_protrusions(fx.mesh, segments, template)
    elapsed = time.perf_counter() - t0

    got = [set(f.tolist()) for f, _ in matches]
    copies = [set(b.tolist()) for b in fx.boxes[1:5]]
    distractors = [set(b.tolist()) for b in fx.boxes[5:]]
    tp = sum(1 for c in copies if c in got)
    precision = tp / len(got) if got else 0.0
    recall = tp / len(copies)
    assert precision == 1.0 and recall == 1.0
    assert all(not (g & d) for g in got for d in distractors)
    assert elapsed < 2.0
    _report(4, f"4/4 copies, 0 false positives in {elapsed:.2f}s")


# -- 5. 2D matching invariance ---------------------------------------------------

def _facade_canvas():
    """Beige facade with 12 solid window motifs at 2 scales x 2 orientations
    plus two distractor shapes."""
    rng = np.random.default_rng(55)
    img = np.full((150, 210, 3), (205, 192, 168), dtype=np.uint8)
    windows = []

    def put(x, y, w, h):
        img[y:y + h, x:x + w] = (45, 62, 118)
        windows.append((x, y, w, h))

    # Scale 1 horizontal (16x8), 3 of them.
    for x, y in ((12, 12), (52, 12), (92, 12)):
        put(x, y, 16, 8)
    # Scale 1 vertical (8x16).
    for x, y in ((14, 40), (54, 40), (94, 40)):
        put(x, y, 8, 16)
    # Scale 1.5 horizontal (24x12).
    for x, y in ((12, 80), (62, 80), (112, 80)):
        put(x, y, 24, 12)
    # Scale 1.5 vertical (12x24).
    for x, y in ((14, 112), (64, 112), (114, 112)):
        put(x, y, 12, 24)

    distractors = []
    # A long thin banner: wrong aspect ratio.
    img[20:24, 140:196] = (45, 62, 118)
    distractors.append((140, 20, 56, 4))
    # A hollow frame: wrong fill ratio.
    img[60:76, 150:180] = (45, 62, 118)
    img[64:72, 155:175] = (205, 192, 168)
    distractors.append((150, 60, 30, 16))

    img = np.clip(img.astype(float) + rng.normal(0, 2.0, img.shape), 0, 255)
    return TextureCanvas.from_image(img.astype(np.uint8)), windows, distractors


def test_criterion_5_region_matching_invariance():
    canvas, windows, distractors = _facade_canvas()
    tx, ty, tw, th = windows[0]
    template_mask = np.zeros(canvas.shape, dtype=bool)
    template_mask[ty:ty + th, tx:tx + tw] = True

    t0 = time.perf_counter()
    sp = compute_superpixels(canvas, region_size=8, seed=0)
    template = Region.from_mask(canvas, template_mask)
    matches = match_regions(canvas, sp, template)
    elapsed = time.perf_counter() - t0

    def rect_mask(x, y, w, h):
        m = np.zeros(canvas.shape, dtype=bool)
        m[y:y + h, x:x + w] = True
        return m

    hit = [False] * len(windows)
    false_positives = 0
    for region, _ in matches:
        matched_any = False
        for k, (x, y, w, h) in enumerate(windows):
            wm = rect_mask(x, y, w, h)
            inter = (region.mask & wm).sum()
            if inter >= 0.5 * wm.sum():
                hit[k] = True
                matched_any = True
        if not matched_any:
            false_positives += 1
    hit[0] = True   # the template instance itself
    recall = sum(hit)
    assert recall >= 11
    assert false_positives <= 1

    # The correlation baseline cannot find any rotated instance.
    patch = canvas.image[ty - 1:ty + th + 1, tx - 1:tx + tw + 1]
    boxes = ncc_match(canvas, patch, threshold=0.9)
    rotated = [w for w in windows if w[3] > w[2]]
    for x, y, w, h in rotated:
        for bx, by, bw, bh, _ in boxes:
            ix = max(0, min(x + w, bx + bw) - max(x, bx))
            iy = max(0, min(y + h, by + bh) - max(y, by))
            assert ix * iy < 0.25 * w * h, "NCC matched a rotated instance"

    assert elapsed < 5.0
    _report(5, f"recall {recall}/12, {false_positives} false positives, "
               f"NCC blind to rotations, in {elapsed:.2f}s")


# -- 6. color oracles -------------------------------------------------------------

def test_criterion_6_color_oracles():
    for lab1, lab2, expected in CIEDE2000_PAIRS:
        got = ciede2000(LabColor(*lab1), LabColor(*lab2))
        assert abs(got - expected) < 1e-4

    rng = np.random.default_rng(66)
    for _ in range(1000):
        m = int(rng.integers(1, 6))
        n = int(rng.integers(1, 6))
        g1 = GaussianMixture1D(rng.dirichlet(np.ones(m)),
                               rng.uniform(0, 255, m), rng.uniform(0.5, 25, m))
        g2 = GaussianMixture1D(rng.dirichlet(np.ones(n)),
                               rng.uniform(0, 255, n), rng.uniform(0.5, 25, n))
        d12 = wasserstein_gmm_1d(g1, g2)
        d21 = wasserstein_gmm_1d(g2, g1)
        assert abs(d12 - d21) <= 1e-9
        assert d12 >= 0.0
        assert wasserstein_gmm_1d(g1, g1) <= 1e-9

    mu1, mu2 = 13.25, 201.5
    a = GaussianMixture1D(np.array([1.0]), np.array([mu1]), np.array([2.0]))
    b = GaussianMixture1D(np.array([1.0]), np.array([mu2]), np.array([2.0]))
    assert wasserstein_gmm_1d(a, b) == abs(mu1 - mu2)
    _report(6, "34 reference pairs within 1e-4; 1000 mixture properties hold")


# -- 7. geometry oracles -----------------------------------------------------------

def test_criterion_7_geometry_oracles():
    rng = np.random.default_rng(77)
    v = rng.normal(size=(4000, 3))
    sphere = v / np.linalg.norm(v, axis=1, keepdims=True)
    from scipy.spatial import cKDTree
    tree = cKDTree(sphere)
    radii = np.array([
        shrinking_ball_radius(sphere[i], sphere[i], sphere, r_init=3.0, tree=tree)
        for i in range(0, 4000, 20)
    ])
    frac = float((np.abs(radii - 1.0) <= 0.01).mean())
    assert frac >= 0.95

    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(6, 60))
        pts = np.column_stack([rng.normal(0, 12, n), rng.normal(0, 5, n)])
        ang = rng.uniform(0, math.pi)
        rot = np.array([[math.cos(ang), -math.sin(ang)],
                        [math.sin(ang), math.cos(ang)]])
        pts = pts @ rot.T + rng.uniform(20, 40, 2)
        rect = min_area_rect(pts)
        best = np.inf
        for deg in np.arange(0.0, 90.0, 0.1):
            a = math.radians(deg)
            c, s = math.cos(a), math.sin(a)
            x = pts @ np.array([c, s])
            y = pts @ np.array([-s, c])
            best = min(best, max(float(np.ptp(x)), 1.0) * max(float(np.ptp(y)), 1.0))
        assert rect.area <= best * 1.05 + 1e-9
        worst = max(worst, rect.area / best)
    _report(7, f"sphere radii within 1% for {frac:.0%} of seeds; "
               f"rect area within {worst:.4f}x of the sweep optimum")


# -- 8. sampling round trip ----------------------------------------------------------

def test_criterion_8_sampling_round_trip(box_fixture):
    fx = box_fixture
    mesh = fx.mesh
    segments = oversegment(mesh)
    face_map, _ = _page_lift_map(mesh, 0)
    covered = face_map >= 0

    strategies = {
        "face_centered": {},
        "random": {"n_points": 3 * mesh.n_faces},
        "poisson": {"radius": 0.2},
        "superpixel": {"region_size": 4, "segments": segments},
    }
    details = []
    for strategy, kwargs in strategies.items():
        cloud = sample_points(mesh, strategy, seed=8, **kwargs)
        if strategy == "face_centered":
            assert len(cloud) == mesh.n_faces
        if strategy != "face_centered":
            assert len(cloud) >= mesh.n_faces, f"{strategy} density below 1 pt/face"

        face_cloud = label_cloud_from_truth(cloud, fx.face_labels, None)
        out_faces = transfer_to_faces(mesh, face_cloud)
        agree = out_faces.labels == fx.face_labels.labels
        area_frac = float(mesh.face_areas[agree].sum() / mesh.face_areas.sum())
        assert area_frac >= 0.99, f"{strategy}: {area_frac}"

        pix_cloud = label_cloud_from_truth(cloud, None, fx.masks)
        out_masks = transfer_to_pixels(mesh, pix_cloud)
        ok = (out_masks.masks[0] == fx.masks.masks[0]) & covered
        texel_frac = float(ok.sum() / covered.sum())
        assert texel_frac >= 0.97, f"{strategy}: {texel_frac}"
        details.append(f"{strategy} {area_frac:.3f}/{texel_frac:.3f}")
    _report(8, "area/texel agreement " + ", ".join(details))


# -- 9. local expansion & fine segmentation -------------------------------------------

def test_criterion_9_expansion_and_refinement():
    rng = np.random.default_rng(99)

    # Two-tone rectangle: expansion equals the color-flood oracle exactly.
    img = np.full((96, 96, 3), 22, dtype=np.uint8)
    img[30:70, 24:60] = 228
    img = np.clip(img.astype(float) + rng.normal(0, 1.5, img.shape), 0, 255).astype(np.uint8)
    canvas = TextureCanvas.from_image(img)
    sp = compute_superpixels(canvas, region_size=8, seed=0)
    region = local_expand(sp, (40, 50))
    bright = canvas.image.mean(axis=2) > 125
    flood = np.zeros(canvas.shape, dtype=bool)
    for j in range(sp.n):
        sel = sp.labels == j
        if bright[sel].mean() > 0.5:
            flood |= sel
    assert np.array_equal(region.mask, flood)

    # Anti-aliased disc: refined boundary within 2 texels of the circle.
    size = 72
    yy, xx = np.mgrid[0:size, 0:size]
    acc = np.zeros((size, size))
    for oy in (0.25, 0.75):
        for ox in (0.25, 0.75):
            acc += ((xx + ox - 36) ** 2 + (yy + oy - 36) ** 2 <= 20 ** 2)
    disc_img = (38 + (acc / 4.0) * 172)[..., None].repeat(3, axis=2)
    disc_img = np.clip(disc_img + rng.normal(0, 1.0, disc_img.shape), 0, 255).astype(np.uint8)
    disc_canvas = TextureCanvas.from_image(disc_img)
    disc_sp = compute_superpixels(disc_canvas, region_size=8, seed=0)
    coarse = local_expand(disc_sp, (36, 36))
    refined = fine_segment(disc_canvas, coarse)
    dist = np.sqrt((xx + 0.5 - 36) ** 2 + (yy + 0.5 - 36) ** 2)
    assert not (refined & (dist > 22)).any()
    assert not (~refined & (dist < 18)).any()

    # Expansion energy equals brute force on small superpixel graphs.
    checked = 0
    for trial in range(6):
        small = np.clip(
            np.kron(rng.integers(0, 4, (3, 5)) * 70,
                    np.ones((10, 10)))[..., None].repeat(3, axis=2)
            + rng.normal(0, 2.0, (30, 50, 3)), 0, 255).astype(np.uint8)
        c = TextureCanvas.from_image(small)
        s = compute_superpixels(c, region_size=10, seed=trial)
        if s.n > 15:
            continue
        problem = expansion_energy_problem(s, s0=0)
        _, solver_energy = solve_binary_labeling(problem)
        _, oracle_energy = brute_force_labeling(problem)
        assert solver_energy == oracle_energy
        checked += 1
    assert checked >= 3
    _report(9, f"flood oracle exact; disc boundary within 2 texels; "
               f"{checked} expansion energies exact")


# -- 10. service determinism -----------------------------------------------------------

def _scripted_session(client, export_dir: str) -> dict:
    info = client.post("/sessions", json={"mesh_path": "scene/mesh.obj"}).json()
    session = info["session"]

    segs = client.get(f"/sessions/{session}/segments").json()["segments"]
    ground = max(segs, key=lambda s: s["area"])
    box_segs = [s for s in segs if s["id"] != ground["id"]]
    # Hit faces: a low wall face and the top of the first box (boxes are
    # separated components of the segment list by construction order).
    walls = sorted([s for s in box_segs if s["verticality"] > 0.9],
                   key=lambda s: min(s["faces"]))
    tops = sorted([s for s in box_segs if s["verticality"] < 0.1],
                  key=lambda s: min(s["faces"]))
    first_walls = walls[:4]
    first_top = tops[0]
    hits = [first_walls[0]["faces"][0]] + first_top["faces"] + [first_walls[1]["faces"][0]]

    g = client.post(f"/sessions/{session}/gesture",
                    json={"polyline": [[0, 0], [60, 50]], "hit_faces": hits}).json()
    assert g["kind"] == "stroke"
    extracted = client.post(f"/sessions/{session}/protrusions",
                            json={"candidate_faces": g["candidate_faces"]}).json()["faces"]
    client.post(f"/sessions/{session}/actions",
                json={"kind": "label_faces",
                      "payload": {"faces": extracted, "class_id": 8}})
    matches = client.post(f"/sessions/{session}/match/protrusions",
                          json={"template_faces": extracted}).json()["matches"]
    for faces in matches:
        client.post(f"/sessions/{session}/actions",
                    json={"kind": "label_faces",
                          "payload": {"faces": faces, "class_id": 8}})
    r = client.post(f"/sessions/{session}/export", json={"dir": export_dir})
    assert r.status_code == 200
    return {"session": session, "matches": len(matches), "extracted": len(extracted)}


def test_criterion_10_service_determinism(tmp_path):
    gen_fixture(FixtureSpec(seed=21, box_edges=(1.0, 1.0), windows_per_box=0),
                tmp_path / "scene")
    app = create_app(data_root=str(tmp_path))
    files = ("annotations.json", "face_labels.ply", "mask_page_0000.png")
    with TestClient(app) as client:
        outputs = []
        for run in range(3):
            out = tmp_path / f"export_{run}"
            result = _scripted_session(client, str(out))
            assert result["matches"] == 1, "the twin box must match"
            outputs.append({name: (out / name).read_bytes() for name in files})
    for name in files:
        assert outputs[0][name] == outputs[1][name] == outputs[2][name]

    from meshannot.mesh_io import load_annotations, load_mesh
    mesh = load_mesh(tmp_path / "scene" / "mesh.obj")
    labels, masks = load_annotations(mesh, tmp_path / "export_0")
    assert (labels.labels == 8).sum() == 2 * 40
    _report(10, "3 scripted runs byte-identical; export reloads equal")
