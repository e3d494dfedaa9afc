"""Build a small template benchmark and compare fusion strategies.

Run: python demos/benchmark_walkthrough.py OUT_DIR
"""
import sys
from pathlib import Path

from augface.benchmark import BenchmarkSpec, build_benchmark
from augface.fusion import FusionConfig
from augface.pipeline import embed_items
from augface.protocol import ConditioningConfig, run_benchmark


def main(out):
    out = Path(out)
    proto = build_benchmark(out, BenchmarkSpec(n_identities=8, n_train=4, seed=1))
    ids = [i for t in proto.templates.values() for i in t.items]
    table, proto.yaws = embed_items(out / "images", ids)
    print(f"{len(proto.templates)} templates, {len(ids)} items embedded")
    for strategy in ("min", "max", "mean", "softmax"):
        for rendered in (False, True):
            r = run_benchmark(proto, table, FusionConfig(strategy, use_rendered=rendered), ConditioningConfig())
            print(f"{strategy:<8} rendered={rendered!s:<5} rank-1 {r.cmc[1]:.3f}  "
                  f"TAR@1e-2 {r.tar_at_far[0.01]:.3f}  1-EER {r.eer_complement:.3f}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "demo_bench")
