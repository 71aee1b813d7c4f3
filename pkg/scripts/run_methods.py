"""Train every method at desk scale on one phantom cohort and print a results table.

    python3 scripts/run_methods.py --methods linear nearest unet edsr --out runs/methods
"""

import argparse
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from sliceinterp.models import desk_config
from sliceinterp.training import baseline_predictor, desk_train_config, evaluate, predictor_for, regime_of, train_architecture
from sliceinterp.volume import PhantomParams, build_dataset, phantom_cohort

BASELINES = ("linear", "nearest")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--methods", nargs="+", default=["linear", "nearest", "unet", "edsr", "gan_basic", "ddpm_unet"])
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--volumes", type=int, default=20)
    ap.add_argument("--z-frequency", type=float, default=2.0)
    ap.add_argument("--epochs", type=int, help="override the desk preset")
    ap.add_argument("--out", default="runs/methods")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vols = phantom_cohort(args.volumes, PhantomParams(z_frequency=args.z_frequency), args.seed)
    ds = build_dataset(vols, args.k, seed=args.seed)
    print("triplets:", ds.counts())

    lines = []
    with threadpool_limits(1):
        for method in args.methods:
            start = time.perf_counter()
            if method in BASELINES:
                predict = baseline_predictor(method)
            else:
                cfg = desk_train_config(regime_of(method))
                cfg.seed = args.seed
                if args.epochs:
                    cfg.epochs = args.epochs
                trained = train_architecture(desk_config(method), ds.splits["train"], ds.splits["val"], cfg,
                                             checkpoint_path=out / f"{method}.smdl")
                trained.history.write_csv(out / f"{method}_history.csv")
                predict = predictor_for(trained, cfg)
            report = evaluate(predict, ds.splits["test"], args.k, method)
            report.write_csv(out / f"{method}_k{args.k}_samples.csv")
            lines.append(report.summary_line())
            print(f"{report.summary_line()}  [{time.perf_counter() - start:.0f}s]", flush=True)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
