"""Render one synthetic face, estimate its pose and write every augmentation variant.

Run: python demos/augment_walkthrough.py OUT_DIR
"""
import sys
from pathlib import Path

from augface.assets import load_shape_set, read_image
from augface.augment import AugmentConfig, augment_dataset
from augface.geometry import decompose_yaw, estimate_pose
from augface.landmarks import read_landmarks
from augface.synthetic import build_dataset


def main(out):
    out = Path(out)
    shapes = load_shape_set()
    paths = build_dataset(out / "input", n_subjects=2, n_images=2, shape_set=shapes, seed=1)
    print(f"wrote {len(paths)} synthetic source images")

    img = read_image(paths[0])
    _, pose, rms = estimate_pose(read_landmarks(paths[0].with_suffix(".pts")), shapes[0], img.shape[1::-1])
    print(f"{paths[0].name}: yaw {decompose_yaw(pose):+.1f} deg, reprojection rms {rms:.2f} px")

    rows = augment_dataset(out / "input", out / "augmented", AugmentConfig(seed=3))
    for r in rows[:5]:
        print(f"  {r['variant']:<12} yaw={r['yaw']!s:<6} shape={r['shape_id']!s:<4} {r['output_path']}")
    print(f"{len(rows)} manifest rows from {len(paths)} sources "
          f"({len(rows) / len(paths):.0f}x); see {out / 'augmented' / 'manifest.jsonl'}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
