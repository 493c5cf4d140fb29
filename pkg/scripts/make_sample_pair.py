"""Write a synthetic view pair to disk and record the oracle-mode estimate as the golden pose.

    python scripts/make_sample_pair.py --seed 7 --out tests/data/sample_pair
"""
import argparse
import shutil
import tempfile
from pathlib import Path

from refpose.synth.scene import make_pair
from refpose.toolkit.cli import main
from refpose.toolkit.io import write_color, write_depth, write_intrinsics, write_mask, write_pose


def write_view(view, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    write_color(view.image, directory / "color.png")
    write_depth(view.depth, directory / "depth.png")
    write_mask(view.mask, directory / "mask.png")
    if view.pose is not None:
        write_pose(view.pose, directory / "pose.json")


def main_(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", type=Path, default=Path("tests/data/sample_pair"))
    args = ap.parse_args(argv)
    pair = make_pair(args.seed)
    write_view(pair.reference, args.out / "reference")
    write_view(pair.query, args.out / "query")
    write_intrinsics(pair.intrinsics, args.out / "intrinsics.json")
    write_pose(pair.gt_query_pose, args.out / "gt_pose.json")
    tmp = Path(tempfile.mkdtemp())
    code = main(["estimate", str(args.out / "reference"), str(args.out / "query"),
                 "--intrinsics", str(args.out / "intrinsics.json"), "--gt-pose", str(args.out / "gt_pose.json"),
                 "--seed", "0", "--out-dir", str(tmp)])
    if code != 0:
        raise SystemExit(f"estimate exited with {code}")
    shutil.copy(tmp / "pose.json", args.out / "expected_pose.json")
    shutil.rmtree(tmp)
    print(f"sample pair written to {args.out}")


if __name__ == "__main__":
    main_()
