"""Command line entry point: ``augface <stage> ...``.

Exit codes: 0 success, 1 input error (bad flags, missing or malformed
files), 2 internal failure. Diagnostics go to stderr, results to files or
stdout. A ``--config`` file (``key = value`` lines under ``[stage]``
sections, ``[general]`` for shared keys) supplies defaults; flags win.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AugfaceError

log = logging.getLogger("augface")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _seed(text) -> int:
    v = int(text)
    if not -(2**63) <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def _yaws(text) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad yaw list {text!r}") from None


def _workers(text) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("workers must be >= 1")
    return v


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"no such file or directory: {p}")
    return p


# -- stages --------------------------------------------------------------------------

def cmd_pose(args):
    from .assets import load_shape_set, read_image
    from .geometry import estimate_pose, rotation_to_euler
    from .landmarks import read_landmarks

    img = read_image(_existing(args.image))
    lm = read_landmarks(_existing(args.landmarks))
    h, w = img.shape[:2]
    intr, pose, rms = estimate_pose(lm, load_shape_set()[args.shape], (w, h))
    e = rotation_to_euler(pose.rotation)
    print(json.dumps({"yaw": e.yaw, "pitch": e.pitch, "roll": e.roll, "reliable": e.reliable,
                      "residual": rms, "focal": intr.focal}, sort_keys=True))


def cmd_render(args):
    from .assets import load_shape_set, read_image, write_image
    from .landmarks import read_landmarks
    from .synth import render_novel_views

    img = read_image(_existing(args.image))
    lm = read_landmarks(_existing(args.landmarks))
    views = render_novel_views(img, lm, load_shape_set()[args.shape], args.yaws)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for yaw, v in zip(args.yaws, views):
        write_image(out / f"{stem}_{int(round(yaw))}.png", v.image, v.mask)
        if v.flags:
            log.info("yaw %g: %s", yaw, ",".join(sorted(v.flags)))


def cmd_augment(args):
    from .augment import AugmentConfig, augment_dataset

    cfg = AugmentConfig(yaws=args.yaws, seed=args.seed, frontal_threshold=args.frontal_threshold,
                        expression=not args.no_expression, shapes=not args.no_shapes)
    rows = augment_dataset(_existing(args.input), args.out, cfg, args.workers)
    print(f"{len(rows)} rows -> {Path(args.out) / 'manifest.jsonl'}", file=sys.stderr)


def _protocol_items(protocol_dir):
    from .protocol import load_protocol

    proto = load_protocol(_existing(protocol_dir))
    return sorted({i for t in proto.templates.values() for i in t.items})


def cmd_embed(args):
    from .features import write_embeddings
    from .pipeline import embed_items
    from .protocol import write_yaws

    root = _existing(args.images)
    if args.protocol:
        items = _protocol_items(args.protocol)
    else:
        items = sorted(str(p.relative_to(root).with_suffix("")) for p in root.rglob("*.png"))
    if not items:
        raise InputError(f"no items to embed under {root}")
    table, yaws = embed_items(root, items, not args.no_views, args.workers)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(args.out, dict(sorted(table.items())))
    if args.yaws_out:
        write_yaws(args.yaws_out, yaws)
    print(f"{len(table)} vectors -> {args.out}", file=sys.stderr)


def cmd_pca(args):
    from .features import pca_fit, read_embeddings, write_pca
    from .protocol import load_protocol

    table = read_embeddings(_existing(args.embeddings))
    if args.protocol:
        proto = load_protocol(_existing(args.protocol))
        keys = [i for t in proto.train for i in proto.templates[t].items]
        if set(proto.train) & proto.eval_ids:
            from .errors import LeakageError
            raise LeakageError("training templates overlap evaluation templates")
    else:
        keys = sorted(k for k in table if "#" not in k)
    missing = [k for k in keys if k not in table]
    if missing:
        raise InputError(f"embedding not found: {missing[0]!r}")
    model = pca_fit([table[k] for k in keys])
    write_pca(args.out, model)
    print(model.digest(), file=sys.stderr)


def _single_template(path):
    from .protocol import TEMPLATE_FIELDS, parse_templates, read_csv

    tpls = parse_templates(read_csv(_existing(path), TEMPLATE_FIELDS))
    if len(tpls) != 1:
        raise InputError(f"{path}: expected exactly one template, found {len(tpls)}")
    return next(iter(tpls.values()))


def cmd_match(args):
    from .features import Conditioner, read_embeddings, read_pca
    from .fusion import FusionConfig, template_score
    from .protocol import read_yaws, template_features, Protocol

    table = read_embeddings(_existing(args.embeddings))
    p, g = _single_template(args.probe_template), _single_template(args.gallery_template)
    proto = Protocol({p.template_id: p, g.template_id: g})
    if args.yaws:
        proto.yaws = read_yaws(_existing(args.yaws))
    pca = read_pca(_existing(args.pca)) if args.pca else None
    cp = Conditioner(pca)
    cr = Conditioner(read_pca(_existing(args.pca_rendered)) if args.pca_rendered else None)
    cfg = FusionConfig(args.strategy, use_rendered=bool(args.yaws))
    fp = template_features(proto, table, p.template_id, cp, cr)
    fg = template_features(proto, table, g.template_id, cp, cr)
    print(repr(template_score(fp, fg, cfg).value))


def cmd_eval(args):
    from .features import read_embeddings
    from .fusion import FusionConfig
    from .protocol import ConditioningConfig, load_protocol, read_yaws, run_benchmark, write_report

    proto = load_protocol(_existing(args.protocol))
    if args.yaws:
        proto.yaws = read_yaws(_existing(args.yaws))
    table = read_embeddings(_existing(args.embeddings))
    fusion = FusionConfig(args.strategy, use_rendered=not args.no_render and bool(proto.yaws))
    report = run_benchmark(proto, table, fusion, ConditioningConfig(not args.no_pca, args.exponent))
    write_report(args.report, report)
    sys.stdout.write(report.table())


def cmd_bench_fusion(args):
    from .fusion import BETAS, baseline_pool, fuse_scores

    sets: dict = {}
    with open(_existing(args.scores), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{args.scores} is empty")
        cols = [h.strip() for h in header]
        if "score" not in cols:
            raise InputError(f"{args.scores}: needs a 'score' column")
        si, ki = cols.index("score"), cols.index("set") if "set" in cols else None
        for row in reader:
            if not row:
                continue
            key = row[ki].strip() if ki is not None else "all"
            sets.setdefault(key, []).append(float(row[si]))
    print(f"{'set':<12} {'n':>5} {'min':>10} {'max':>10} {'mean':>10} {'softmax':>10}")
    for key, vals in sets.items():
        s = np.array(vals)
        print(f"{key:<12} {len(s):>5} {baseline_pool(s, 'min'):>10.6f} {baseline_pool(s, 'max'):>10.6f} "
              f"{baseline_pool(s, 'mean'):>10.6f} {fuse_scores(s, BETAS):>10.6f}")


def cmd_synth_dataset(args):
    from .assets import load_shape_set
    from .synthetic import build_dataset

    paths = build_dataset(args.out, args.subjects, args.images, load_shape_set(), args.seed)
    print(f"{len(paths)} images -> {args.out}", file=sys.stderr)


def cmd_synth_benchmark(args):
    from .benchmark import BenchmarkSpec, build_benchmark

    proto = build_benchmark(args.out, BenchmarkSpec(n_identities=args.identities, n_train=args.train,
                                                    seed=args.seed))
    print(f"{len(proto.templates)} templates -> {args.out}", file=sys.stderr)


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="augface", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="store_true", help="print version and asset hashes")
    p.add_argument("--config", help="key = value defaults file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    workers = dict(type=_workers, default=os.cpu_count() or 1, help="parallel worker processes")

    s = sub.add_parser("pose", help="estimate head pose from landmarks")
    s.add_argument("--image", required=True)
    s.add_argument("--landmarks", required=True)
    s.add_argument("--shape", type=int, default=0, choices=range(10))
    s.set_defaults(func=cmd_pose)

    s = sub.add_parser("render", help="render novel yaw views of one face")
    s.add_argument("--image", required=True)
    s.add_argument("--landmarks", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--yaws", type=_yaws, default=(0.0, 40.0, 75.0))
    s.add_argument("--shape", type=int, default=0, choices=range(10))
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("augment", help="augment a labeled face dataset")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--yaws", type=_yaws, default=(0.0, 40.0, 75.0))
    s.add_argument("--frontal-threshold", type=float, default=30.0)
    s.add_argument("--no-expression", action="store_true")
    s.add_argument("--no-shapes", action="store_true")
    s.add_argument("--workers", **workers)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("embed", help="toy embeddings of in-plane and rendered views")
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--protocol", help="embed only the items of this protocol")
    s.add_argument("--yaws-out")
    s.add_argument("--no-views", action="store_true")
    s.add_argument("--workers", **workers)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("pca", help="fit a full-rank PCA model")
    s.add_argument("--embeddings", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--protocol", help="fit on this protocol's training templates")
    s.set_defaults(func=cmd_pca)

    s = sub.add_parser("match", help="score one probe template against one gallery template")
    s.add_argument("--probe-template", required=True)
    s.add_argument("--gallery-template", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--strategy", default="softmax", choices=("min", "max", "mean", "softmax"))
    s.add_argument("--yaws", help="item yaws; enables mutual-view scores")
    s.add_argument("--pca")
    s.add_argument("--pca-rendered")
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("eval", help="run a verification/identification protocol")
    s.add_argument("--protocol", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--yaws")
    s.add_argument("--strategy", default="softmax", choices=("min", "max", "mean", "softmax"))
    s.add_argument("--no-render", action="store_true")
    s.add_argument("--no-pca", action="store_true")
    s.add_argument("--exponent", type=float, default=0.65)
    s.add_argument("--seed", type=_seed, default=0, help="accepted for uniformity; eval is deterministic")
    s.add_argument("--workers", **workers)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench-fusion", help="min/max/mean/softmax pooling of score sets")
    s.add_argument("--scores", required=True)
    s.set_defaults(func=cmd_bench_fusion)

    s = sub.add_parser("synth-dataset", help="write a synthetic labeled face dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int, default=10)
    s.add_argument("--images", type=int, default=10)
    s.add_argument("--seed", type=_seed, default=0)
    s.set_defaults(func=cmd_synth_dataset)

    s = sub.add_parser("synth-benchmark", help="write the synthetic template benchmark")
    s.add_argument("--out", required=True)
    s.add_argument("--identities", type=int, default=20)
    s.add_argument("--train", type=int, default=10)
    s.add_argument("--seed", type=_seed, default=0)
    s.set_defaults(func=cmd_synth_benchmark)
    return p


def apply_config(parser: argparse.ArgumentParser, path) -> None:
    """Install ``[general]`` and ``[<stage>]`` values as subcommand defaults."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(_existing(path), encoding="utf-8"):
        raise InputError(f"cannot read config {path}")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in sub.choices.items():
        known = {a.dest: a for a in sp._actions if a.dest != "help"}
        for section in ("general", name):
            if not cp.has_section(section):
                continue
            for key in cp[section]:
                dest = key.replace("-", "_")
                if dest not in known:
                    if section == name:
                        raise InputError(f"config [{section}]: unknown key {key!r}")
                    continue
                action = known[dest]
                if isinstance(action, argparse._StoreTrueAction):
                    value = cp[section].getboolean(key)
                else:
                    raw = cp[section][key]
                    value = action.type(raw) if action.type else raw
                sp.set_defaults(**{dest: value})
                action.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        if "--config" in argv:
            i = argv.index("--config")
            if i + 1 >= len(argv):
                parser.error("--config needs a path")
            apply_config(parser, argv[i + 1])
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.INFO)
        if args.version:
            from .assets import asset_hashes
            print(f"augface {__version__}")
            for name, digest in asset_hashes().items():
                print(f"{name} {digest}")
            return 0
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        args.func(args)
        return 0
    except SystemExit as exc:
        return int(exc.code or 0)
    except (InputError, AugfaceError, FileNotFoundError, ValueError, KeyError, csv.Error) as exc:
        print(f"augface: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
