import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from augface.fusion import (
    DegenerateFeatureWarning,
    FusionConfig,
    TemplateFeatures,
    baseline_pool,
    fuse_scores,
    ncc,
    ncc_matrix,
    select_mutual_view,
    softmax_pool,
    template_score,
    template_similarity,
)

# frozen oracles, evaluated at 50 digits with mpmath
SOFTMAX_02_08_B5 = 0.7715444760934599
FUSE_02_08 = 0.7594921143830966
SOFTMAX_3_B3 = 0.32722272115624724
FUSE_3 = 0.35951244101853546

score_lists = arrays(np.float64, st.integers(1, 12), elements=st.floats(-1, 1, allow_nan=False))


def _naive_softmax(s, beta):
    w = [math.exp(beta * x) for x in s]
    return sum(a * b for a, b in zip(w, s)) / sum(w)


def _naive_ncc(x, y):
    mx, my = sum(x) / len(x), sum(y) / len(y)
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))
    return num / den


def test_softmax_oracles():
    assert softmax_pool([0.2, 0.8], 5) == pytest.approx(SOFTMAX_02_08_B5, abs=1e-12)
    assert softmax_pool([0.1, 0.4, 0.35], 3) == pytest.approx(SOFTMAX_3_B3, abs=1e-12)


def test_fuse_oracles():
    assert fuse_scores([0.2, 0.8]) == pytest.approx(FUSE_02_08, abs=1e-12)
    assert fuse_scores([0.1, 0.4, 0.35]) == pytest.approx(FUSE_3, abs=1e-12)


def test_softmax_limits():
    s = [0.1, -0.3, 0.7, 0.2]
    assert softmax_pool(s, 0) == pytest.approx(np.mean(s), abs=1e-15)
    assert softmax_pool(s, 1e6) == pytest.approx(0.7, abs=1e-12)
    assert softmax_pool(s, -1e6) == pytest.approx(-0.3, abs=1e-12)


def test_softmax_large_beta_stable():
    assert np.isfinite(softmax_pool([1.0, 0.999], 1e4))


@given(score_lists, st.floats(0, 20), st.floats(0, 20))
def test_softmax_monotone_in_beta(s, b1, b2):
    lo, hi = sorted((b1, b2))
    assert softmax_pool(s, lo) <= softmax_pool(s, hi) + 1e-12


@given(score_lists, st.floats(-20, 20))
def test_softmax_bounded_and_permutation_invariant(s, beta):
    v = softmax_pool(s, beta)
    assert s.min() - 1e-12 <= v <= s.max() + 1e-12
    assert softmax_pool(s[::-1], beta) == pytest.approx(v, abs=1e-12)


@given(score_lists)
def test_fuse_at_least_mean(s):
    assert fuse_scores(s) >= s.mean() - 1e-12


@given(score_lists, st.floats(-5, 20))
def test_softmax_matches_naive(s, beta):
    assert softmax_pool(s, beta) == pytest.approx(_naive_softmax(s, beta), abs=1e-9)


def test_pool_errors():
    with pytest.raises(ValueError):
        fuse_scores([])
    with pytest.raises(ValueError):
        softmax_pool([0.1, np.nan], 1.0)
    with pytest.raises(ValueError):
        fuse_scores([0.1], betas=())
    with pytest.raises(ValueError):
        baseline_pool([0.1], "median")
    with pytest.raises(ValueError):
        FusionConfig(strategy="median")


def test_baselines():
    s = [0.3, -0.1, 0.5]
    assert baseline_pool(s, "min") == -0.1
    assert baseline_pool(s, "max") == 0.5
    assert baseline_pool(s, "mean") == pytest.approx(0.7 / 3)


# -- NCC ----------------------------------------------------------------------------------

def test_ncc_examples(rng):
    x = rng.normal(size=16)
    assert ncc(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ncc(x, -x) == pytest.approx(-1.0, abs=1e-12)
    assert ncc(x, 3 * x + 2) == pytest.approx(1.0, abs=1e-12)
    y = rng.normal(size=16)
    assert ncc(x, y) == pytest.approx(_naive_ncc(x, y), abs=1e-12)


def test_ncc_degenerate_warns():
    with pytest.warns(DegenerateFeatureWarning):
        assert ncc(np.ones(5), np.arange(5.0)) == 0.0


def test_ncc_dimension_mismatch():
    with pytest.raises(ValueError):
        ncc(np.ones(3), np.ones(4))


@given(arrays(np.float64, 6, elements=st.floats(-10, 10)), arrays(np.float64, 6, elements=st.floats(-10, 10)))
def test_ncc_symmetric_and_bounded(x, y):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateFeatureWarning)
        a, b = ncc(x, y), ncc(y, x)
    assert a == pytest.approx(b, abs=1e-12)
    assert -1.0 <= a <= 1.0


# -- template composition --------------------------------------------------------------------

def test_three_by_four_composition_oracle(rng):
    P = rng.normal(size=(3, 20))
    Q = rng.normal(size=(4, 20))
    flat = [_naive_ncc(p, q) for p in P for q in Q]
    expected = sum(_naive_softmax(flat, b) for b in range(21)) / 21
    TP = TemplateFeatures("p", "a", P)
    TQ = TemplateFeatures("q", "b", Q)
    np.testing.assert_allclose(ncc_matrix(P, Q).ravel(), flat, atol=1e-12)
    assert template_similarity(TP, TQ, FusionConfig(use_rendered=False)) == pytest.approx(expected, abs=1e-12)


def _with_views(tid, rng, yaws, D=12):
    M = len(yaws)
    return TemplateFeatures(tid, tid, rng.normal(size=(2, D)),
                            {v: rng.normal(size=(M, D)) for v in (0, 40, 75)}, np.asarray(yaws, float))


def test_rendered_uses_mutual_view(rng):
    P = _with_views("p", rng, [10.0, 70.0])
    Q = _with_views("q", rng, [-5.0, 65.0, 45.0])
    s = template_score(P, Q)
    expected_rendered = []
    for i, a in enumerate(P.yaws):
        for j, b in enumerate(Q.yaws):
            v = select_mutual_view(a, b)
            expected_rendered.append(_naive_ncc(P.rendered[v][i], Q.rendered[v][j]))
    fused_r = sum(_naive_softmax(expected_rendered, b) for b in range(21)) / 21
    flat = [_naive_ncc(p, q) for p in P.in_plane for q in Q.in_plane]
    fused_i = sum(_naive_softmax(flat, b) for b in range(21)) / 21
    assert s.rendered == pytest.approx(fused_r, abs=1e-12)
    assert s.in_plane == pytest.approx(fused_i, abs=1e-12)
    assert s.value == pytest.approx((fused_r + fused_i) / 2, abs=1e-12)
    assert not s.degraded


def test_degraded_when_rendered_missing(rng):
    P = _with_views("p", rng, [10.0])
    Q = TemplateFeatures("q", "q", rng.normal(size=(2, 12)))
    s = template_score(P, Q)
    assert s.degraded and s.rendered is None
    assert s.value == s.in_plane


def test_no_shared_variant_raises(rng):
    P = TemplateFeatures("p", "p", np.zeros((0, 4)), {v: rng.normal(size=(1, 4)) for v in (0, 40, 75)},
                         np.array([0.0]))
    Q = TemplateFeatures("q", "q", rng.normal(size=(1, 4)))
    with pytest.raises(ValueError):
        template_score(P, Q)


def test_template_symmetric(rng):
    P = _with_views("p", rng, [10.0, -70.0])
    Q = _with_views("q", rng, [35.0])
    assert template_similarity(P, Q) == pytest.approx(template_similarity(Q, P), abs=1e-12)


@pytest.mark.parametrize("a,b,view", [
    (0, 0, 0), (30, -30, 0), (-25, 10, 0), (31, 0, 40), (40, 40, 40),
    (59, 75, 40), (60, 60, 75), (-75, 70, 75), (0, 75, 40),
])
def test_mutual_view_examples(a, b, view):
    assert select_mutual_view(a, b) == view
    assert select_mutual_view(b, a) == view


def test_mutual_view_rejects_nan():
    with pytest.raises(ValueError):
        select_mutual_view(np.nan, 0.0)
