"""Write per-slice SSIM heatmaps (P5) comparing linear interpolation with a checkpoint.

    python3 scripts/ssim_maps.py --checkpoint runs/desk_unet/checkpoint.smdl --out runs/maps
"""

import argparse
from pathlib import Path

import numpy as np

from sliceinterp.checkpoint import load_checkpoint
from sliceinterp.metrics import ssim, ssim_map, write_graymap
from sliceinterp.training import baseline_predictor, model_predictor
from sliceinterp.volume import PhantomParams, extract_triplets, phantom_cohort, stack_triplets


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--seed", type=int, default=123)
    ap.add_argument("--slices", nargs="+", type=int, default=[10, 20, 30])
    ap.add_argument("--out", default="runs/maps")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, _, _ = load_checkpoint(args.checkpoint)
    vol = phantom_cohort(1, PhantomParams(), args.seed)[0]
    triplets = [t for t in extract_triplets(vol, 1) if t.slice_index in args.slices]
    cond, target = stack_triplets(triplets)
    for name, predict in (("linear", baseline_predictor("linear")), ("model", model_predictor(model))):
        pred = np.asarray(predict(cond, triplets))
        for t, p, y in zip(triplets, pred, target):
            write_graymap(ssim_map(p[0], y[0]), out / f"{name}_slice{t.slice_index:02d}.pgm")
            print(f"{name} slice {t.slice_index}: SSIM {ssim(p[0], y[0]):.4f}")


if __name__ == "__main__":
    main()
