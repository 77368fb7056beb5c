import numpy as np
import pytest

from meshannot.energy import brute_force_labeling
from meshannot.face_annotation import (SelectionError, build_protrusion_problem,
                                       candidate_faces, classify_gesture,
                                       extract_protrusions,
                                       match_planar_segments, match_protrusions,
                                       protrusion_feature_vector,
                                       protrusion_score, segment_feature_vector,
                                       to_labeling_problem)
from meshannot.fixtures import FixtureSpec, build_fixture
from meshannot.geometry import Plane
from meshannot.plane_segmentation import face_to_segment, oversegment


@pytest.fixture(scope="module")
def box_scene(box_fixture):
    segments = oversegment(box_fixture.mesh)
    return box_fixture, segments


@pytest.fixture(scope="module")
def five_box_scene(five_box_fixture):
    segments = oversegment(five_box_fixture.mesh)
    return five_box_fixture, segments


def _stroke_over_box(fx, segments):
    """Hit faces tracing up one wall, across the top, and down the other."""
    mesh = fx.mesh
    box_faces = set(fx.boxes[0].tolist())
    walls = [s for s in segments if s.verticality > 0.9
             and set(s.faces.tolist()) <= box_faces]
    top = next(s for s in segments if s.verticality < 0.1
               and set(s.faces.tolist()) <= box_faces)
    w0 = walls[0]
    w2 = next(w for w in walls[1:]
              if abs(float(w.plane.normal @ w0.plane.normal)) > 0.9)
    low0 = int(w0.faces[np.argmin(mesh.face_centroids[w0.faces, 2])])
    low2 = int(w2.faces[np.argmin(mesh.face_centroids[w2.faces, 2])])
    hits = [low0] + top.faces.tolist() + [low2]
    polyline = np.array([[0, 0], [40, 35]])
    return classify_gesture(polyline, hits)


# -- gestures ---------------------------------------------------------------

def test_classify_gesture_lasso_and_stroke():
    loop = np.array([[0, 0], [10, 0], [10, 10], [0, 10], [0, 0]])
    assert classify_gesture(loop, [1]).kind == "lasso"
    line = np.array([[0, 0], [10, 10]])
    assert classify_gesture(line, [1]).kind == "stroke"
    # Ratio 0.15 falls at the lasso side of the 0.2 default.
    almost = np.array([[0, 0], [10, 0], [10, 10], [0, 10], [1.06, 1.06]])
    g = classify_gesture(almost, [1])
    ratio = np.linalg.norm(almost[-1] - almost[0]) / np.linalg.norm([10, 10])
    assert ratio < 0.2
    assert g.kind == "lasso"


def test_classify_gesture_errors():
    with pytest.raises(SelectionError):
        classify_gesture(np.array([[1, 1]]), [])
    with pytest.raises(SelectionError):
        classify_gesture(np.array([[1, 1], [1, 1]]), [])


def test_candidate_faces_lasso_full_segment(box_scene):
    fx, segments = box_scene
    seg = next(s for s in segments if s.verticality > 0.9)
    gesture = classify_gesture(np.array([[0, 0], [9, 0], [9, 9], [0, 9], [0, 0]]),
                               seg.faces.tolist())
    cand = candidate_faces(fx.mesh, segments, gesture)
    assert set(cand.tolist()) >= set(seg.faces.tolist())


def test_candidate_faces_lasso_small_hit_excluded(box_scene):
    fx, segments = box_scene
    seg = next(s for s in segments if len(s.faces) >= 8)
    hits = seg.faces[: max(1, len(seg.faces) // 10)].tolist()   # ~10% of faces
    gesture = classify_gesture(np.array([[0, 0], [9, 0], [9, 9], [0, 9], [0, 0]]),
                               hits)
    cand = candidate_faces(fx.mesh, segments, gesture)
    assert not set(seg.faces.tolist()) <= set(cand.tolist())


def test_candidate_faces_stroke_expands_to_segments(box_scene):
    fx, segments = box_scene
    gesture = _stroke_over_box(fx, segments)
    cand = set(candidate_faces(fx.mesh, segments, gesture).tolist())
    fmap = face_to_segment(segments, fx.mesh.n_faces)
    hit_segments = {int(fmap[f]) for f in gesture.hit_faces}
    for seg in segments:
        if seg.id in hit_segments:
            assert set(seg.faces.tolist()) <= cand
    # The 1-ring pulls in the ground, so its segment joins as well.
    assert len(cand) > len(gesture.hit_faces)


def test_candidate_faces_stroke_empty_hits_rejected(box_scene):
    fx, segments = box_scene
    gesture = classify_gesture(np.array([[0, 0], [10, 10]]), [])
    with pytest.raises(SelectionError):
        candidate_faces(fx.mesh, segments, gesture)


# -- protrusion scores --------------------------------------------------------

def _flat_mesh():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                      [0, 0, 0.5], [1, 0, 0.5], [0, 1, 0.5],
                      [0, 0, 2], [1, 0, 2], [1, 1, 2]], dtype=float)
    faces = np.array([[0, 1, 2], [3, 4, 5], [6, 7, 8]])
    from meshannot.mesh_core import build_mesh
    return build_mesh(verts, faces)


def test_protrusion_score_cases():
    mesh = _flat_mesh()
    support = Plane(np.array([0.0, 0.0, 1.0]), 0.0, 0.0)
    d, theta, omega, p = protrusion_score(mesh, 0, support)
    assert (d, theta, omega, p) == (0.0, 0.0, 1.0, 0.0)

    d, theta, omega, p = protrusion_score(mesh, 1, support)
    assert d == pytest.approx(0.5)
    assert theta == pytest.approx(0.0)
    assert omega == pytest.approx(0.5)
    assert p == pytest.approx(0.5)

    d, theta, omega, p = protrusion_score(mesh, 2, support)
    assert d == pytest.approx(2.0)
    assert omega == 1.0
    assert p == pytest.approx(2.0)


def test_protrusion_score_perpendicular_normal():
    from meshannot.mesh_core import build_mesh
    verts = np.array([[0, 0, 0], [0, 1, 0], [0, 0.5, 0.5]], dtype=float)
    mesh = build_mesh(verts, np.array([[0, 1, 2]]))
    support = Plane(np.array([0.0, 0.0, 1.0]), 0.0, 0.0)
    d, theta, omega, p = protrusion_score(mesh, 0, support)
    assert theta == pytest.approx(1.0)
    assert d == pytest.approx(0.5)
    assert p == pytest.approx(0.5 + 0.5 * 1.0)


# -- extraction ---------------------------------------------------------------

def test_extract_all_coplanar_empty(box_scene):
    fx, segments = box_scene
    ground = max(segments, key=lambda s: s.area)
    problem = build_protrusion_problem(fx.mesh, segments, ground.faces)
    assert extract_protrusions(problem).size == 0


def test_extract_box_exactly(box_scene):
    fx, segments = box_scene
    gesture = _stroke_over_box(fx, segments)
    cand = candidate_faces(fx.mesh, segments, gesture)
    problem = build_protrusion_problem(fx.mesh, segments, cand)
    got = set(extract_protrusions(problem).tolist())
    assert got == set(fx.boxes[0].tolist())


def test_extract_matches_brute_force(box_scene):
    fx, segments = box_scene
    rng = np.random.default_rng(8)
    box = fx.boxes[0]
    for _ in range(10):
        take = rng.choice(box, size=6, replace=False)
        ground_take = rng.choice(fx.ground_faces, size=6, replace=False)
        cand = np.concatenate([take, ground_take])
        problem = build_protrusion_problem(fx.mesh, segments, cand)
        lp = to_labeling_problem(problem)
        from meshannot.energy import solve_binary_labeling
        _, energy = solve_binary_labeling(lp)
        _, bf_energy = brute_force_labeling(lp)
        assert energy == bf_energy


# -- segment matching ---------------------------------------------------------

def test_segment_feature_vector_cases(five_box_scene):
    fx, segments = five_box_scene
    seg = segments[0]
    f = segment_feature_vector(seg, seg)
    assert f.norm() == 0.0

    import dataclasses
    bigger = dataclasses.replace(seg, area=seg.area * 1.5)
    f = segment_feature_vector(seg, bigger)
    assert f.d_area == pytest.approx(0.5)

    higher = dataclasses.replace(seg, mean_height=seg.mean_height + 2.0)
    f = segment_feature_vector(seg, higher)
    assert f.d_height == pytest.approx(2.0)


def test_match_identical_walls(five_box_scene):
    fx, segments = five_box_scene
    box_sets = [set(b.tolist()) for b in fx.boxes[:5]]
    walls0 = [s for s in segments if s.verticality > 0.9
              and set(s.faces.tolist()) <= box_sets[0]]
    template = walls0[0]
    matches = match_planar_segments(template, segments, eps=0.5)
    assert matches, "identical walls elsewhere should match"
    best_norm = matches[0][1]
    assert best_norm < 0.1
    # Monotonicity in eps.
    more = match_planar_segments(template, segments, eps=5.0)
    assert {m[0] for m in matches} <= {m[0] for m in more}


def test_match_double_area_rejected(five_box_scene):
    fx, segments = five_box_scene
    import dataclasses
    seg = segments[1]
    double = dataclasses.replace(seg, id=9999, area=seg.area * 2)
    matches = match_planar_segments(seg, [double], eps=0.1)
    assert matches == []


def test_match_five_identical_roofs(five_box_scene):
    fx, segments = five_box_scene
    box_sets = [set(b.tolist()) for b in fx.boxes]
    # Roof of each unit box: the horizontal segment inside the box faces.
    roofs = []
    for bs in box_sets[:5]:
        roofs.append(next(s for s in segments
                          if s.verticality < 0.1 and set(s.faces.tolist()) <= bs))
    template = roofs[0]
    matches = match_planar_segments(template, segments, eps=30.0)
    matched_ids = {m[0] for m in matches}
    for roof in roofs[1:]:
        assert roof.id in matched_ids


# -- protrusion matching --------------------------------------------------------

def test_protrusion_feature_vector_cases(five_box_scene):
    fx, segments = five_box_scene
    box = fx.boxes[0]
    f = protrusion_feature_vector(fx.mesh, box, 5, box, 5)
    assert f.d_volume == pytest.approx(0.0, abs=1e-12)
    assert f.d_count == 1.0
    assert f.d_linearity == 0.0

    f = protrusion_feature_vector(fx.mesh, box, 4, box, 5)
    assert f.d_count == pytest.approx((5 / 4) ** 4)


def test_match_protrusions_finds_copies(five_box_scene):
    fx, segments = five_box_scene
    template = fx.boxes[0]
    matches = match_protrusions(fx.mesh, segments, template)
    got_sets = [set(f.tolist()) for f, _ in matches]
    true_sets = [set(b.tolist()) for b in fx.boxes[1:5]]
    for ts in true_sets:
        assert any(g == ts for g in got_sets), "missing an identical box"
    distractors = [set(b.tolist()) for b in fx.boxes[5:]]
    ground = set(fx.ground_faces.tolist())
    for g in got_sets:
        assert not (g & ground)
        assert all(not (g & d) for d in distractors)
    assert len(got_sets) == 4


def test_match_protrusions_translation_invariance(five_box_scene):
    fx, segments = five_box_scene
    template = fx.boxes[0]
    base = match_protrusions(fx.mesh, segments, template)
    from meshannot.mesh_core import TexturedMesh
    moved = TexturedMesh(fx.mesh.vertices + np.array([11.0, -7.0, 3.0]),
                         fx.mesh.faces, fx.mesh.face_uvs, fx.mesh.face_pages,
                         fx.mesh.pages)
    segments2 = oversegment(moved)
    shifted = match_protrusions(moved, segments2, template_faces=template)
    assert [set(f.tolist()) for f, _ in base] == [set(f.tolist()) for f, _ in shifted]
    for (_, n1), (_, n2) in zip(base, shifted):
        assert n1 == pytest.approx(n2, abs=1e-6)


def test_match_protrusions_empty_template(five_box_scene):
    fx, segments = five_box_scene
    with pytest.raises(SelectionError):
        match_protrusions(fx.mesh, segments, np.array([], dtype=np.int64))
