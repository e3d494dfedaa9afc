import numpy as np
import pytest

from augface.assets import load_basis, load_shape_set, write_image
from augface.augment import (
    AugmentConfig,
    DatasetEntry,
    align_in_plane,
    alignment_templates,
    augment_dataset,
    augment_image,
    bbox_crop,
    classify_alignment,
    discover_entries,
    output_name,
    read_manifest,
    warp_similarity,
)
from augface.errors import AlignmentError
from augface.landmarks import FRONTAL9, LEFT_EYE, NOSE_TIP, RIGHT_EYE, LandmarkSet2D, write_landmarks
from augface.synthetic import build_dataset, render_face


def _landmarks_at(points9):
    pts = np.full((68, 2), 128.0)
    pts[list(FRONTAL9)] = points9
    return LandmarkSet2D.from_points(pts)


def _rot(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])


@pytest.mark.parametrize("yaw,cls", [(0, "frontal"), (30, "frontal"), (-30, "frontal"),
                                     (30.01, "profile"), (-75, "profile")])
def test_classify(yaw, cls):
    assert classify_alignment(yaw, 30.0) == cls


def test_classify_rejects_nan():
    with pytest.raises(ValueError):
        classify_alignment(np.nan)
    with pytest.raises(ValueError):
        AugmentConfig(frontal_threshold=95.0)


def test_templates_plausible():
    tpl = alignment_templates()
    f = tpl.frontal
    eye_r, eye_l = f[0:2].mean(axis=0), f[2:4].mean(axis=0)
    assert eye_r[0] < eye_l[0] and abs(eye_r[1] - eye_l[1]) < 1e-6
    # scale is set on 6-point eye centres; corner midpoints sit slightly apart
    assert abs(np.linalg.norm(eye_l - eye_r) / (0.35 * 256) - 1.0) < 0.1
    assert f[8, 1] > f[4, 1] > eye_r[1]  # chin below nose below eyes


def test_identity_alignment(frontal_face):
    img = frontal_face.image
    out = align_in_plane(img, _landmarks_at(alignment_templates().frontal), "frontal")
    assert np.abs(out - img).mean() < 1 / 255


def test_rotated_input_realigns(frontal_face):
    img = frontal_face.image
    c = np.array([127.5, 127.5])
    R = _rot(15.0)
    t = c - R @ c
    rotated = warp_similarity(img, 1.0, R, t, (256, 256))
    tpl = alignment_templates().frontal
    out = align_in_plane(rotated, _landmarks_at(tpl @ R.T + t), "frontal")
    inner = (slice(64, 192), slice(64, 192))
    assert np.abs(out[inner] - img[inner]).mean() < 3 / 255


def test_frontal_needs_nine(frontal_face):
    lm = _landmarks_at(alignment_templates().frontal)
    vis = lm.visible.copy()
    vis[FRONTAL9[0]] = False
    with pytest.raises(AlignmentError):
        align_in_plane(frontal_face.image, LandmarkSet2D(lm.points, vis), "frontal")


def test_profile_with_far_eye_missing(identity, shapes):
    face = render_face(identity, shapes[0], 70.0, rng=np.random.default_rng(1))
    vis = face.landmarks.visible.copy()
    tpl_eye, dst = alignment_templates().profile[1]
    far = LEFT_EYE if tpl_eye == RIGHT_EYE else RIGHT_EYE
    vis[list(far)] = False
    lm = LandmarkSet2D(face.landmarks.points, vis)
    out = align_in_plane(face.image, lm, "profile", 70.0)
    assert out.shape == (256, 256, 3)
    # the visible eye centre lands on the template
    from augface.augment import alignment_transform
    from augface.geometry import apply_similarity
    s, R, t = alignment_transform(lm, "profile", 70.0)
    src = np.vstack([lm.points[list(tpl_eye)].mean(axis=0), lm.points[NOSE_TIP]])
    np.testing.assert_allclose(apply_similarity(src, s, R, t), dst, atol=1e-9)


def test_bbox_crop():
    img = np.zeros((100, 200, 3))
    img[20:60, 50:90] = 1.0
    out = bbox_crop(img, (50, 20, 90, 60), (64, 64))
    assert out[8:56, 8:56].min() > 0.99
    centre = bbox_crop(img, None, (64, 64))
    assert centre.shape == (64, 64, 3)
    with pytest.raises(ValueError):
        bbox_crop(img, (10, 10, 5, 20))


def test_output_name(tmp_path):
    e = DatasetEntry("s1", tmp_path / "s1" / "img.png", tmp_path / "s1" / "img.pts", None)
    assert output_name(e, "pose_render", -40.0, 3) == "s1/img_pose_render_-40_s3.png"
    assert output_name(e, "aligned") == "s1/img_aligned.png"
    assert e.source_id == "s1/img.png"


def test_augment_image_variants(tmp_path, shapes):
    build_dataset(tmp_path / "in", 1, 1, shapes, seed=4)
    (entry,) = discover_entries(tmp_path / "in")
    res = augment_image(entry, shapes, load_basis(), AugmentConfig(seed=1), tmp_path / "out")
    variants = [r["variant"] for r in res.rows]
    assert variants[0] == "aligned" and variants.count("pose_render") == 3
    assert res.rows[0]["alignment"] in ("frontal9", "profile2")
    renders = [r for r in res.rows if r["variant"] == "pose_render"]
    assert len({r["shape_id"] for r in renders}) == 1
    assert sorted(abs(r["yaw"]) for r in renders) == [0.0, 40.0, 75.0]
    assert all(r["subject_label"] == "subject_0000" for r in res.rows)
    for r in res.rows:
        assert (tmp_path / "out" / r["output_path"]).exists()


def test_no_shapes_and_no_expression(tmp_path, shapes):
    build_dataset(tmp_path / "in", 1, 1, shapes, seed=4)
    (entry,) = discover_entries(tmp_path / "in")
    res = augment_image(entry, shapes, load_basis(), AugmentConfig(expression=False, shapes=False))
    assert len(res.rows) == 4
    assert all(r["shape_id"] is None for r in res.rows)


def test_fallback_on_bad_landmarks(tmp_path, frontal_face):
    sub = tmp_path / "in" / "s1"
    sub.mkdir(parents=True)
    write_image(sub / "a.png", frontal_face.image)
    pts = np.column_stack([np.linspace(10, 200, 68), np.full(68, 100.0)])
    write_landmarks(sub / "a.pts", LandmarkSet2D.from_points(pts))
    (sub / "a.bbox").write_text("60 60 200 200\n")
    rows = augment_dataset(tmp_path / "in", tmp_path / "out")
    assert len(rows) == 1 and rows[0]["alignment"] == "bbox_fallback"
    assert "fallback" in (tmp_path / "out" / "augment.log").read_text()


def test_unreadable_entry_skipped(tmp_path, shapes):
    build_dataset(tmp_path / "in", 1, 2, shapes, seed=2)
    (tmp_path / "in" / "subject_0000" / "img_0001.pts").unlink()
    rows = augment_dataset(tmp_path / "in", tmp_path / "out", AugmentConfig(expression=False))
    assert {r["source_path"] for r in rows} == {"subject_0000/img_0000.png"}
    assert "skipped" in (tmp_path / "out" / "augment.log").read_text()


def test_dataset_manifest_and_multiplier(tmp_path, shapes):
    build_dataset(tmp_path / "in", 2, 2, shapes, seed=9)
    rows = augment_dataset(tmp_path / "in", tmp_path / "out", AugmentConfig(seed=5))
    assert 16 <= len(rows) <= 20
    assert read_manifest(tmp_path / "out" / "manifest.jsonl") == rows
    subjects = {r["subject_label"] for r in rows}
    assert subjects == {"subject_0000", "subject_0001"}
    for r in rows:
        assert r["output_path"].startswith(r["subject_label"] + "/")
