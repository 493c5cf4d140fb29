"""Selective scan against the naive recurrence, both precisions, with per-length errors.

    python scripts/scan_check.py --instances 100
"""
import argparse
import time

import numpy as np

from refpose.seqmodel.scan import selective_scan
from refpose.toolkit.checks import ScanCheckConfig, naive_selective_scan, random_scan_instance


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--instances", type=int, default=ScanCheckConfig.instances)
    ap.add_argument("--max-len", type=int, default=ScanCheckConfig.max_len)
    ap.add_argument("--max-state", type=int, default=ScanCheckConfig.max_state)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    for dtype in (np.float32, np.float64):
        rng = np.random.default_rng(args.seed)
        start = time.perf_counter()
        errs, lens = [], []
        for _ in range(args.instances):
            sp, x = random_scan_instance(rng, args.max_len, args.max_state, ScanCheckConfig.channels, dtype)
            errs.append(np.abs(selective_scan(sp, x).astype(np.float64) - naive_selective_scan(sp, x)).max())
            lens.append(len(x))
        errs, lens = np.array(errs), np.array(lens)
        print(f"{np.dtype(dtype).name}: max {errs.max():.3e}  median {np.median(errs):.3e}  "
              f"({time.perf_counter() - start:.1f} s)")
        for lo, hi in [(1, 256), (256, 1024), (1024, args.max_len + 1)]:
            sel = (lens >= lo) & (lens < hi)
            if sel.any():
                print(f"  L in [{lo}, {hi}): {sel.sum():3d} instances, max {errs[sel].max():.3e}")


if __name__ == "__main__":
    main()
