#!/usr/bin/env python3
"""Time network forward passes against the median-scan baseline.

Reports median wall times per preset at a chosen input size. Values are
informational: the interesting quantity is the ratio between the dense
network forward and the per-pixel median scan on equal input.
"""

import argparse
import json
import sys

from mcseg.pipeline import bench


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--presets", nargs="+", default=["tiny", "small"])
    parser.add_argument("--height", type=int, default=256)
    parser.add_argument("--width", type=int, default=154)
    parser.add_argument("--channels", type=int, default=3)
    parser.add_argument("--runs", type=int, default=5)
    args = parser.parse_args(argv)

    for preset in args.presets:
        report = bench(
            preset=preset,
            height=args.height,
            width=args.width,
            channels=args.channels,
            runs=args.runs,
        )
        print(json.dumps(report, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
