"""Image-level similarity and template-level score fusion."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

BETAS = tuple(range(21))
STRATEGIES = ("min", "max", "mean", "softmax")
VIEWS = (0, 40, 75)
NEAR_FRONTAL = 30.0
NEAR_PROFILE = 60.0


class DegenerateFeatureWarning(RuntimeWarning):
    pass


def _center(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Xc = X - X.mean(axis=1, keepdims=True)
    n = np.linalg.norm(Xc, axis=1)
    return Xc, n


def ncc(x, y) -> float:
    """Pearson correlation of two feature vectors; 0 if either is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"feature dimensions differ: {x.shape} vs {y.shape}")
    return float(ncc_matrix(x[None], y[None])[0, 0])


def ncc_matrix(A, B) -> np.ndarray:
    """All-pairs NCC between the rows of ``A`` and ``B``."""
    Ac, na = _center(A)
    Bc, nb = _center(B)
    if Ac.shape[1] != Bc.shape[1]:
        raise ValueError(f"feature dimensions differ: {Ac.shape[1]} vs {Bc.shape[1]}")
    bad_a, bad_b = na < 1e-12, nb < 1e-12
    if bad_a.any() or bad_b.any():
        warnings.warn("degenerate feature scored as 0", DegenerateFeatureWarning, stacklevel=3)
    Ac = Ac / np.where(bad_a, 1.0, na)[:, None]
    Bc = Bc / np.where(bad_b, 1.0, nb)[:, None]
    S = np.clip(Ac @ Bc.T, -1.0, 1.0)
    S[bad_a, :] = 0.0
    S[:, bad_b] = 0.0
    return S


def _scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("cannot pool an empty score list")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s


def softmax_pool(scores, beta: float) -> float:
    """``sum(s * exp(beta s)) / sum(exp(beta s))``; the shift by max(beta s) cancels."""
    s = _scores(scores)
    z = beta * s
    w = np.exp(z - z.max())
    return float(np.dot(w, s) / w.sum())


def fuse_scores(scores, betas: Sequence[float] = BETAS) -> float:
    """Average of the SoftMax pools over ``betas`` (default: 0, 1, ..., 20)."""
    s = _scores(scores)
    if len(betas) == 0:
        raise ValueError("beta range must be nonempty")
    return float(np.mean([softmax_pool(s, b) for b in betas]))


def baseline_pool(scores, strategy: str) -> float:
    s = _scores(scores)
    if strategy == "min":
        return float(s.min())
    if strategy == "max":
        return float(s.max())
    if strategy == "mean":
        return float(s.mean())
    raise ValueError(f"unknown baseline strategy {strategy!r}")


def pool(scores, strategy: str = "softmax", betas: Sequence[float] = BETAS) -> float:
    if strategy == "softmax":
        return fuse_scores(scores, betas)
    return baseline_pool(scores, strategy)


def select_mutual_view(yaw_p: float, yaw_q: float) -> int:
    """Common render yaw magnitude for a pair of items with estimated yaws."""
    if not (np.isfinite(yaw_p) and np.isfinite(yaw_q)):
        raise ValueError("yaws must be finite")
    a, b = abs(yaw_p), abs(yaw_q)
    if a <= NEAR_FRONTAL and b <= NEAR_FRONTAL:
        return 0
    if a >= NEAR_PROFILE and b >= NEAR_PROFILE:
        return 75
    return 40


@dataclass(frozen=True)
class FusionConfig:
    strategy: str = "softmax"
    betas: tuple = BETAS
    use_rendered: bool = True

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if len(self.betas) == 0:
            raise ValueError("beta range must be nonempty")


@dataclass
class TemplateFeatures:
    """Per-item features of one template after video pooling.

    ``in_plane`` is (N, D). ``rendered`` maps a view yaw in :data:`VIEWS` to
    an (M, D) array; all views share the same M items, whose estimated yaws
    are in ``yaws``.
    """

    template_id: str
    subject: str
    in_plane: np.ndarray
    rendered: Mapping[int, np.ndarray] = field(default_factory=dict)
    yaws: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_rendered(self) -> int:
        return len(self.yaws) if self.rendered else 0

    @property
    def n_in_plane(self) -> int:
        return 0 if self.in_plane is None else len(self.in_plane)


def rendered_score_matrix(P: TemplateFeatures, Q: TemplateFeatures) -> np.ndarray:
    """Scores of every item pair compared at their mutual view."""
    S = np.empty((P.n_rendered, Q.n_rendered))
    views = np.array([[select_mutual_view(a, b) for b in Q.yaws] for a in P.yaws], dtype=int).reshape(S.shape)
    for v in np.unique(views):
        full = ncc_matrix(P.rendered[int(v)], Q.rendered[int(v)])
        sel = views == v
        S[sel] = full[sel]
    return S


@dataclass(frozen=True)
class TemplateScore:
    value: float
    in_plane: float | None
    rendered: float | None

    @property
    def degraded(self) -> bool:
        return self.in_plane is None or self.rendered is None


def template_score(P: TemplateFeatures, Q: TemplateFeatures,
                   config: FusionConfig = FusionConfig()) -> TemplateScore:
    parts = {}
    if P.n_in_plane and Q.n_in_plane:
        parts["in_plane"] = pool(ncc_matrix(P.in_plane, Q.in_plane), config.strategy, config.betas)
    if config.use_rendered and P.n_rendered and Q.n_rendered:
        parts["rendered"] = pool(rendered_score_matrix(P, Q), config.strategy, config.betas)
    if not parts:
        raise ValueError(f"templates {P.template_id!r} and {Q.template_id!r} share no feature variant")
    return TemplateScore(float(np.mean(list(parts.values()))), parts.get("in_plane"), parts.get("rendered"))


def template_similarity(P: TemplateFeatures, Q: TemplateFeatures,
                        config: FusionConfig = FusionConfig()) -> float:
    """Mean of the fused in-plane and fused mutual-view scores."""
    return template_score(P, Q, config).value
