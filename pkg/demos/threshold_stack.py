#!/usr/bin/env python3
"""Show what the refinement stage actually sees: nested threshold masks.

Takes a synthetic sample, corrupts its ground truth into a noisy
probability map (blur plus additive noise), binarizes it at the default
thresholds, and writes the probability heatmap, each threshold layer, and
the per-threshold DSC against the clean mask. Low thresholds recover
faint detail but admit noise; high thresholds are clean but erode — the
nested stack hands the second model both.

Also demonstrates that sliding-window stitching preserves the map: the
blended reconstruction from overlapping windows matches the full map.
"""

import argparse
import os

import numpy as np

from ctiunet.augment import gaussian_smooth
from ctiunet.cascade import (ThresholdSet, WindowSpec, binarize_multi,
                             heatmap_u8, save_png, sliding_window_infer)
from ctiunet.data import generate_synthetic
from ctiunet.metrics import confusion, dsc

THRESHOLDS = (0.01, 0.1, 0.6)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="threshold_demo", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=0.15,
                    help="additive noise sigma on the blurred ground truth")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    sample = generate_synthetic(1, 64, seed=args.seed)[0]
    rng = np.random.default_rng(args.seed)
    probs = gaussian_smooth(sample.mask.astype(np.float64), 1.0)
    probs = np.clip(probs + rng.normal(0.0, args.noise, probs.shape), 0.0, 1.0)
    save_png(os.path.join(args.out, "probs.png"), heatmap_u8(probs))

    ts = ThresholdSet(THRESHOLDS)
    stack = binarize_multi(probs, ts)
    print(f"noisy teacher at sigma {args.noise}:")
    for t, layer in zip(ts.values, stack):
        score = dsc(confusion(layer, sample.mask[0]))
        save_png(os.path.join(args.out, f"mask_t{t:g}.png"),
                 np.where(layer >= 0.5, 255, 0).astype(np.uint8))
        print(f"  threshold {t:<5g} foreground {int(layer.sum()):4d}px  "
              f"DSC {score:.4f}")

    # nesting: every higher-threshold layer sits inside the lower one
    for lo, hi in zip(stack, stack[1:]):
        assert np.all(hi <= lo)

    # stitching identity: blending overlapping copies of the map changes
    # nothing, whichever weighting is used
    for blend in ("constant", "gaussian"):
        spec = WindowSpec(window=32, overlap=0.5, blend=blend)
        rebuilt = sliding_window_infer(lambda tile: tile[:1], probs, spec)
        print(f"stitching ({blend}): max deviation "
              f"{np.abs(rebuilt - probs).max():.2e}")
    print(f"\nlayers written to {args.out}/")


if __name__ == "__main__":
    main()
