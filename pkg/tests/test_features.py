import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from augface.errors import EmbeddingNotFoundError, ZeroVarianceError
from augface.features import (
    Conditioner,
    PrecomputedBackend,
    ToyBackend,
    pca_apply,
    pca_fit,
    pca_inverse,
    read_embeddings,
    read_pca,
    root_normalize,
    video_pool,
    write_embeddings,
    write_pca,
)
from augface.fusion import ncc

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_toy_constant_image_is_degenerate():
    fv = ToyBackend().embed(np.full((40, 40), 0.3))
    assert fv.degenerate
    assert not fv.values.any()


def test_toy_deterministic_and_unit(frontal_face):
    b = ToyBackend()
    a1, a2 = b.embed(frontal_face.image), b.embed(frontal_face.image)
    assert a1.values.shape == (1024,)
    assert np.array_equal(a1.values, a2.values)
    assert abs(np.linalg.norm(a1.values) - 1.0) < 1e-12
    assert abs(a1.values.mean()) < 1e-12


def test_toy_shift_robust(frontal_face):
    b = ToyBackend()
    shifted = np.roll(frontal_face.image, 1, axis=1)
    assert ncc(b.embed(frontal_face.image).values, b.embed(shifted).values) > 0.9


def test_toy_rejects_empty():
    with pytest.raises(ValueError):
        ToyBackend().embed(np.zeros((0, 0)))


def test_embedding_file_round_trip(tmp_path, rng):
    table = {"a/b": rng.normal(size=7), "ünï": rng.normal(size=7)}
    write_embeddings(tmp_path / "e.bin", table)
    back = read_embeddings(tmp_path / "e.bin")
    assert list(back) == list(table)
    for k in table:
        np.testing.assert_array_equal(back[k], table[k].astype(np.float32))
    raw = (tmp_path / "e.bin").read_bytes()
    assert raw[:4] == b"EMB1" and int.from_bytes(raw[4:8], "little") == 7


def test_embedding_file_truncated(tmp_path, rng):
    write_embeddings(tmp_path / "e.bin", {"a": rng.normal(size=4)})
    data = (tmp_path / "e.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-3])
    with pytest.raises(ValueError):
        read_embeddings(tmp_path / "t.bin")


def test_precomputed_miss():
    backend = PrecomputedBackend({"x": np.ones(3)})
    assert backend.dimension == 3
    np.testing.assert_array_equal(backend.embed(source_id="x").values, np.ones(3))
    with pytest.raises(EmbeddingNotFoundError):
        backend.embed(source_id="y")


# -- video pooling -------------------------------------------------------------

def test_pool_identical_frames():
    v = np.array([0.3, -0.2, 0.9])
    out = video_pool([("v", "video", v), ("v", "video", v), ("v", "video", v)])
    assert len(out) == 1
    np.testing.assert_allclose(out[0][1], v, rtol=0, atol=1e-15)


def test_pool_mean():
    out = video_pool([("v", "video", [1.0, 0.0]), ("v", "video", [0.0, 1.0])])
    np.testing.assert_array_equal(out[0][1], [0.5, 0.5])


def test_pool_keeps_videos_apart():
    items = [("v1", "video", [1.0]), ("img", "image", [5.0]), ("v2", "video", [3.0]),
             ("v1", "video", [2.0]), ("v2", "video", [4.0])]
    out = video_pool(items)
    assert [m for m, _ in out] == ["v1", "img", "v2"]
    np.testing.assert_array_equal([v[0] for _, v in out], [1.5, 5.0, 3.5])


def test_pool_idempotent(rng):
    items = [("v1", "video", rng.normal(size=3)) for _ in range(3)] + [("s", "image", rng.normal(size=3))]
    once = video_pool(items)
    types = {"v1": "video", "s": "image"}
    twice = video_pool((m, types[m], v) for m, v in once)
    for (m1, v1), (m2, v2) in zip(once, twice):
        assert m1 == m2
        np.testing.assert_allclose(v1, v2, rtol=0, atol=1e-15)


def test_pool_unknown_type():
    with pytest.raises(ValueError):
        video_pool([("a", "gif", [1.0])])


# -- PCA -------------------------------------------------------------------------

def test_pca_first_axis():
    X = np.column_stack([np.linspace(-3, 3, 20), np.zeros(20)])
    m = pca_fit(X)
    np.testing.assert_allclose(np.abs(m.components[:, 0]), [1.0, 0.0], atol=1e-12)


def test_pca_full_rank_round_trip(rng):
    X = rng.normal(size=(50, 10))
    m = pca_fit(X)
    np.testing.assert_allclose(m.components.T @ m.components, np.eye(10), atol=1e-8)
    np.testing.assert_allclose(pca_inverse(m, pca_apply(m, X)), X, atol=1e-8)


def test_pca_rank_deficient_keeps_all_components(rng):
    X = rng.normal(size=(5, 12))
    m = pca_fit(X)
    assert m.components.shape == (12, 12)
    np.testing.assert_allclose(m.components.T @ m.components, np.eye(12), atol=1e-8)


def test_pca_decorrelates(rng):
    X = rng.normal(size=(200, 6)) @ rng.normal(size=(6, 6))
    m = pca_fit(X)
    Y = pca_apply(m, X)
    C = np.cov(Y, rowvar=False)
    off = C - np.diag(np.diag(C))
    assert np.abs(off).max() < 1e-6 * np.diag(C).max()
    assert np.all(np.diff(np.diag(C)) <= 1e-9)
    assert np.abs(Y.mean(axis=0)).max() < 1e-8


def test_pca_apply_properties(rng):
    X = rng.normal(size=(30, 5))
    m = pca_fit(X)
    np.testing.assert_allclose(pca_apply(m, m.mean), 0.0, atol=1e-12)
    x = rng.normal(size=5)
    assert abs(np.linalg.norm(pca_apply(m, x)) - np.linalg.norm(x - m.mean)) < 1e-8
    with pytest.raises(ValueError):
        pca_apply(m, np.ones(4))


def test_pca_zero_variance():
    with pytest.raises(ZeroVarianceError):
        pca_fit(np.ones((5, 3)))


def test_pca_file_round_trip(tmp_path, rng):
    m = pca_fit(rng.normal(size=(20, 4)))
    write_pca(tmp_path / "p.bin", m)
    back = read_pca(tmp_path / "p.bin")
    np.testing.assert_array_equal(back.mean, m.mean)
    np.testing.assert_array_equal(back.components, m.components)
    assert back.digest() == m.digest()
    np.testing.assert_allclose(back.components.T @ back.components, np.eye(4), atol=1e-12)


# -- root normalization -------------------------------------------------------------

def test_root_normalize_examples():
    assert root_normalize(0.0, 0.65) == 0.0
    np.testing.assert_array_equal(root_normalize([4.0, -4.0], 0.5), [2.0, -2.0])
    x = np.array([-3.0, 0.5, 7.0])
    np.testing.assert_array_equal(root_normalize(x, 1.0), x)
    with pytest.raises(ValueError):
        root_normalize(x, 0.0)


@given(arrays(np.float64, 8, elements=finite), st.floats(0.05, 1.0))
def test_root_normalize_odd_and_monotone(x, c):
    np.testing.assert_array_equal(root_normalize(-x, c), -root_normalize(x, c))
    order = np.argsort(x, kind="stable")
    assert np.all(np.diff(root_normalize(x, c)[order]) >= 0)


def test_conditioning_deterministic(rng, frontal_face):
    X = rng.normal(size=(40, 1024))
    cond = Conditioner(pca_fit(X))
    e = ToyBackend().embed(frontal_face.image).values
    np.testing.assert_array_equal(cond(e), cond(e))
