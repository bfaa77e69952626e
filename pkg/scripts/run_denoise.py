"""Desk-scale denoising run: ABIPNN against the concatenated-band DNN at matched size.

Usage: python3 scripts/run_denoise.py [--out runs/denoise] [--epochs 500] [--baselines dnn_concat,dnn_parallel]
"""
import argparse
import json
import logging

import numpy as np

from abipnn.io import read_history
from abipnn.tasks import DenoiseConfig, run_denoise_experiment


def smoothed_rises(path, window=20):
    mse = read_history(path)[:, 1]
    smooth = np.convolve(mse, np.ones(window) / window, mode="valid")
    return int((np.diff(smooth) > 0).sum())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/denoise")
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--baselines", default="dnn_concat")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = DenoiseConfig()
    cfg.train.max_epochs = args.epochs
    cfg.train.seed = args.seed
    cfg.baselines = [b for b in args.baselines.split(",") if b]
    report = run_denoise_experiment(cfg, args.out)
    with open(f"{args.out}/report.json", "w") as f:
        json.dump(report, f, indent=2)

    print(f"noisy input        {report['psnr_noisy']:.2f} dB")
    for name, row in report["methods"].items():
        psnr = row.get("psnr")
        shown = f"{psnr:.2f} dB" if isinstance(psnr, float) else str(psnr)
        print(f"{name:<18} {shown}  params={row['params']}  epochs={row['epochs']}")
        if "history_csv" in row:
            print(f"{'':<18} smoothed-MSE rises: {smoothed_rises(f'{args.out}/{row['history_csv']}')}")


if __name__ == "__main__":
    main()
