import numpy as np
import pytest

from augface.landmarks import (
    FRONTAL9,
    LOWER_JAW,
    MOUTH,
    N_SLOTS,
    RIGID,
    SLOT_NAMES,
    LandmarkSet2D,
    read_landmarks,
    write_landmarks,
)


def test_schema_layout():
    assert N_SLOTS == 68
    assert len(set(SLOT_NAMES)) == 68
    assert len(FRONTAL9) == 9
    assert set(MOUTH) == set(range(48, 68))
    assert not set(RIGID) & (set(MOUTH) | set(LOWER_JAW))


def test_round_trip(tmp_path, rng):
    pts = rng.uniform(0, 200, size=(68, 2))
    vis = rng.random(68) > 0.2
    lm = LandmarkSet2D(pts, vis)
    write_landmarks(tmp_path / "a.pts", lm)
    back = read_landmarks(tmp_path / "a.pts")
    np.testing.assert_allclose(back.points, pts, atol=1e-6)
    np.testing.assert_array_equal(back.visible, vis)


def test_header_required(tmp_path):
    (tmp_path / "b.pts").write_text("0 1 2 1\n")
    with pytest.raises(ValueError):
        read_landmarks(tmp_path / "b.pts")


def test_wrong_count_rejected():
    with pytest.raises(ValueError):
        LandmarkSet2D(np.zeros((5, 2)), np.ones(5, dtype=bool))


def test_nonfinite_rejected():
    pts = np.zeros((68, 2))
    pts[3, 0] = np.nan
    with pytest.raises(ValueError):
        LandmarkSet2D.from_points(pts)


def test_subset_hides_other_slots():
    lm = LandmarkSet2D.from_points(np.zeros((68, 2)))
    sub = lm.subset([30, 36])
    assert sub.n_visible == 2
    assert sub.visible[30] and not sub.visible[0]
