"""Template protocols, feature assembly and the benchmark runner.

A protocol directory holds:

``templates.csv``  ``template_id,subject_id,media_id,media_type,item_id``
``pairs.csv``      ``template_a,template_b,label,fold`` (verification, optional)
``gallery.csv``    ``template_id`` (identification, optional, with probes.csv)
``probes.csv``     ``template_id``
``train.csv``      ``template_id`` (templates whose items train the PCA)
``yaws.csv``       ``item_id,yaw`` (optional; estimated yaw per item)

Embedding tables key in-plane features by ``item_id`` and mutually rendered
views by ``item_id#r0``, ``item_id#r40`` and ``item_id#r75``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import EmbeddingNotFoundError, LeakageError, ProtocolError
from .features import Conditioner, pca_fit, video_pool
from .fusion import VIEWS, FusionConfig, TemplateFeatures, template_score
from .metrics import FARS, RANKS, cmc, eer, eer_and_accuracy, roc, tar_at_far

log = logging.getLogger(__name__)

TEMPLATE_FIELDS = ("template_id", "subject_id", "media_id", "media_type", "item_id")
PAIR_FIELDS = ("template_a", "template_b", "label", "fold")


def view_key(item_id: str, view: int) -> str:
    return f"{item_id}#r{int(view)}"


@dataclass(frozen=True)
class MediaRef:
    media_id: str
    media_type: str
    items: tuple


@dataclass(frozen=True)
class ProtocolTemplate:
    template_id: str
    subject_id: str
    media: tuple

    @property
    def items(self) -> list[str]:
        return [i for m in self.media for i in m.items]


@dataclass(frozen=True)
class Pair:
    template_a: str
    template_b: str
    same: bool
    fold: int


@dataclass
class Protocol:
    templates: dict
    pairs: list = field(default_factory=list)
    gallery: list = field(default_factory=list)
    probes: list = field(default_factory=list)
    train: list = field(default_factory=list)
    yaws: dict = field(default_factory=dict)

    @property
    def eval_ids(self) -> set:
        ids = set(self.gallery) | set(self.probes)
        for p in self.pairs:
            ids.update((p.template_a, p.template_b))
        return ids


# -- CSV io -------------------------------------------------------------------------

def read_csv(path, required) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in reader.fieldnames or []]
        missing = [f for f in required if f not in header]
        if missing:
            raise ProtocolError(f"{path}: missing columns {missing}")
        reader.fieldnames = header
        return [{k: (v or "").strip() for k, v in row.items()} for row in reader]


def write_csv(path, fields, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        w.writerows(rows)


def parse_templates(rows) -> dict:
    acc: dict = {}
    subjects: dict = {}
    for r in rows:
        tid = r["template_id"]
        if not tid or not r["item_id"]:
            raise ProtocolError("template rows need template_id and item_id")
        if r["media_type"] not in ("image", "video"):
            raise ProtocolError(f"template {tid}: unknown media type {r['media_type']!r}")
        if subjects.setdefault(tid, r["subject_id"]) != r["subject_id"]:
            raise ProtocolError(f"template {tid} has more than one subject")
        media = acc.setdefault(tid, {})
        key = r["media_id"] or r["item_id"]
        mtype, items = media.setdefault(key, (r["media_type"], []))
        if mtype != r["media_type"]:
            raise ProtocolError(f"template {tid}: media {key} has mixed types")
        items.append(r["item_id"])
    return {tid: ProtocolTemplate(tid, subjects[tid],
                                  tuple(MediaRef(m, t, tuple(i)) for m, (t, i) in media.items()))
            for tid, media in acc.items()}


def _resolve(templates, tid, where):
    if tid not in templates:
        raise ProtocolError(f"{where} references unknown template {tid!r}")
    return tid


def load_protocol(directory) -> Protocol:
    d = Path(directory)
    rows = read_csv(d / "templates.csv", TEMPLATE_FIELDS)
    ids = [r["template_id"] for r in rows]
    # rows of one template must be contiguous; a reappearing id is a duplicate
    seen, prev = set(), None
    for tid in ids:
        if tid != prev and tid in seen:
            raise ProtocolError(f"duplicate template id {tid!r}")
        seen.add(tid)
        prev = tid
    templates = parse_templates(rows)
    proto = Protocol(templates)
    if (d / "pairs.csv").exists():
        for r in read_csv(d / "pairs.csv", PAIR_FIELDS):
            a = _resolve(templates, r["template_a"], "pairs.csv")
            b = _resolve(templates, r["template_b"], "pairs.csv")
            if r["label"] not in ("0", "1"):
                raise ProtocolError(f"pairs.csv: label must be 0 or 1, got {r['label']!r}")
            proto.pairs.append(Pair(a, b, r["label"] == "1", int(r["fold"] or 0)))
        labels = {p.same for p in proto.pairs}
        if proto.pairs and labels != {True, False}:
            raise ProtocolError("pairs.csv needs at least one genuine and one impostor pair")
    for name, dest in (("gallery", proto.gallery), ("probes", proto.probes), ("train", proto.train)):
        p = d / f"{name}.csv"
        if p.exists():
            dest.extend(_resolve(templates, r["template_id"], p.name)
                        for r in read_csv(p, ("template_id",)))
    if bool(proto.gallery) != bool(proto.probes):
        raise ProtocolError("identification needs both gallery.csv and probes.csv")
    if not proto.pairs and not proto.gallery:
        raise ProtocolError(f"{d}: no pairs.csv and no gallery/probes")
    if (d / "yaws.csv").exists():
        proto.yaws = read_yaws(d / "yaws.csv")
    return proto


def read_yaws(path) -> dict:
    return {r["item_id"]: float(r["yaw"]) for r in read_csv(path, ("item_id", "yaw"))}


def write_yaws(path, yaws: Mapping[str, float]) -> None:
    write_csv(path, ("item_id", "yaw"), [(k, repr(float(v))) for k, v in sorted(yaws.items())])


def write_protocol(directory, proto: Protocol) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = [(t.template_id, t.subject_id, m.media_id, m.media_type, i)
            for t in proto.templates.values() for m in t.media for i in m.items]
    write_csv(d / "templates.csv", TEMPLATE_FIELDS, rows)
    if proto.pairs:
        write_csv(d / "pairs.csv", PAIR_FIELDS,
                  [(p.template_a, p.template_b, int(p.same), p.fold) for p in proto.pairs])
    for name, ids in (("gallery", proto.gallery), ("probes", proto.probes), ("train", proto.train)):
        if ids:
            write_csv(d / f"{name}.csv", ("template_id",), [(i,) for i in ids])
    if proto.yaws:
        write_yaws(d / "yaws.csv", proto.yaws)


# -- features ------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditioningConfig:
    pca: bool = True
    exponent: float = 0.65


def _lookup(table, key):
    try:
        return table[key]
    except KeyError:
        raise EmbeddingNotFoundError(f"embedding not found: {key!r}") from None


def has_rendered(table, item_id) -> bool:
    return all(view_key(item_id, v) in table for v in VIEWS)


def pooled_media(template: ProtocolTemplate, table, yaws=None):
    """Video-pooled in-plane vectors, rendered views and yaws for one template."""
    flat = [(m.media_id, m.media_type, i) for m in template.media for i in m.items]
    in_plane = [v for _, v in video_pool((mid, mt, _lookup(table, i)) for mid, mt, i in flat)]
    rendered_ok = yaws is not None and all(has_rendered(table, i) and i in yaws for *_, i in flat)
    rendered, pooled_yaws = {}, []
    if rendered_ok:
        for v in VIEWS:
            rendered[v] = np.array([x for _, x in video_pool(
                (mid, mt, table[view_key(i, v)]) for mid, mt, i in flat)])
        pooled_yaws = [float(np.asarray(y)[0]) for _, y in video_pool(
            (mid, mt, np.array([yaws[i]])) for mid, mt, i in flat)]
    return np.array(in_plane), rendered, np.array(pooled_yaws)


def fit_conditioners(proto: Protocol, table, train_ids, config: ConditioningConfig):
    """PCA for in-plane and rendered features, fitted on training templates only."""
    leak = set(train_ids) & proto.eval_ids
    if leak:
        raise LeakageError(f"training templates overlap evaluation templates: {sorted(leak)[:5]}")
    eval_items = {i for t in proto.eval_ids for i in proto.templates[t].items}
    train_items = [i for t in train_ids for i in proto.templates[t].items]
    shared = eval_items.intersection(train_items)
    if shared:
        raise LeakageError(f"training items also appear in evaluation templates: {sorted(shared)[:5]}")
    if not config.pca or not train_items:
        if config.pca:
            log.warning("no training templates; PCA skipped")
        return Conditioner(None, config.exponent), Conditioner(None, config.exponent)
    plain = pca_fit([_lookup(table, i) for i in train_items])
    views = [table[view_key(i, v)] for i in train_items if has_rendered(table, i) for v in VIEWS]
    rend = pca_fit(views) if len(views) >= 2 else None
    return Conditioner(plain, config.exponent), Conditioner(rend, config.exponent)


def template_features(proto: Protocol, table, tid, cond_plain, cond_rend) -> TemplateFeatures:
    t = proto.templates[tid]
    yaws = proto.yaws if proto.yaws else None
    in_plane, rendered, ys = pooled_media(t, table, yaws)
    rendered = {v: cond_rend(x) for v, x in rendered.items()}
    return TemplateFeatures(tid, t.subject_id, cond_plain(in_plane), rendered, ys)


# -- benchmark -----------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    tar_at_far: dict | None
    cmc: dict | None
    accuracy: float | None
    eer_complement: float | None
    n_genuine: int = 0
    n_impostor: int = 0
    n_probes: int = 0
    strategy: str = "softmax"
    rendered: bool = True
    pca_digest: dict | None = None

    def to_json(self) -> str:
        d = asdict(self)
        for k in ("tar_at_far", "cmc"):
            if d[k] is not None:
                d[k] = {str(a): b for a, b in d[k].items()}
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        lines = [f"strategy={self.strategy} rendered={self.rendered}"]
        if self.tar_at_far is not None:
            for far, tar in self.tar_at_far.items():
                lines.append(f"TAR@FAR={far:<8g} {tar:8.4f}")
            lines.append(f"{'100%-EER':<16} {self.eer_complement:8.4f}")
            if self.accuracy is not None:
                lines.append(f"{'accuracy':<16} {self.accuracy:8.4f}")
        if self.cmc is not None:
            for k, rate in self.cmc.items():
                lines.append(f"{'rank-' + str(k):<16} {rate:8.4f}")
        return "\n".join(lines) + "\n"


@dataclass
class BenchmarkScores:
    pair_scores: np.ndarray
    identification: np.ndarray | None
    pca_digest: dict


def score_benchmark(proto: Protocol, table, fusion: FusionConfig = FusionConfig(),
                    conditioning: ConditioningConfig = ConditioningConfig()) -> BenchmarkScores:
    cp, cr = fit_conditioners(proto, table, proto.train, conditioning)
    cache: dict = {}

    def feats(tid):
        if tid not in cache:
            cache[tid] = template_features(proto, table, tid, cp, cr)
        return cache[tid]

    pair_scores = np.array([template_score(feats(p.template_a), feats(p.template_b), fusion).value
                            for p in proto.pairs])
    ident = None
    if proto.gallery:
        ident = np.array([[template_score(feats(p), feats(g), fusion).value for g in proto.gallery]
                          for p in proto.probes])
    digest = {"in_plane": cp.pca.digest() if cp.pca else None,
              "rendered": cr.pca.digest() if cr.pca else None}
    return BenchmarkScores(pair_scores, ident, digest)


def run_benchmark(proto: Protocol, table, fusion: FusionConfig = FusionConfig(),
                  conditioning: ConditioningConfig = ConditioningConfig()) -> MetricsReport:
    """Condition features, score every pair/probe and reduce to metrics."""
    scores = score_benchmark(proto, table, fusion, conditioning)
    tar = eerc = acc = ranks = None
    n_gen = n_imp = 0
    if proto.pairs:
        labels = np.array([p.same for p in proto.pairs])
        folds = np.array([p.fold for p in proto.pairs])
        s = scores.pair_scores
        curve = roc(s[labels], s[~labels])
        tar = {far: tar_at_far(curve, far) for far in FARS}
        n_gen, n_imp = int(labels.sum()), int((~labels).sum())
        if len(np.unique(folds)) >= 2:
            eerc, acc = eer_and_accuracy(s, labels, folds)
        else:
            eerc = 1.0 - eer(s[labels], s[~labels])
    if scores.identification is not None:
        subj = lambda ids: [proto.templates[t].subject_id for t in ids]  # noqa: E731
        ranks = cmc(scores.identification, subj(proto.probes), subj(proto.gallery), RANKS)
    return MetricsReport(tar, ranks, acc, eerc, n_gen, n_imp, len(proto.probes),
                         fusion.strategy, fusion.use_rendered, scores.pca_digest)


def write_report(path, report: MetricsReport) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(report.to_json(), encoding="utf-8")
