#!/usr/bin/env python3
"""Sweep sampling step counts for a trained checkpoint.

Reproduces the strided-sampler robustness analysis at desk scale: evaluates
the same model with progressively fewer deterministic sampling steps and
prints a PSNR/SSIM table.
"""

import argparse

from rgb2raw.checkpoint import load_checkpoint
from rgb2raw.dataio import load_manifest
from rgb2raw.metrics import patch_grid_eval
from rgb2raw.sampling import SamplerSpec
from rgb2raw.schedule import make_linear_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--steps", type=int, nargs="+", default=[100, 48, 24, 12, 6, 3, 2])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ddpm", action="store_true", help="include the full ancestral sampler")
    args = ap.parse_args()

    model, meta = load_checkpoint(args.checkpoint)
    card = meta["extra"]
    schedule = make_linear_schedule(card["timesteps"], card["beta_1"], card["beta_T"])
    manifest = load_manifest(args.manifest)

    specs = ([SamplerSpec("ddpm", schedule.T)] if args.ddpm else [])
    specs += [SamplerSpec("ddim", s) for s in args.steps]
    print(f"{'sampler':>12s} {'PSNR (dB)':>10s} {'SSIM':>8s}")
    for spec in specs:
        report = patch_grid_eval(model, manifest, schedule, spec, seed=args.seed)
        print(f"{spec.kind + '-' + str(spec.steps):>12s} "
              f"{report.psnr_mean:>10.2f} {report.ssim_mean:>8.4f}")


if __name__ == "__main__":
    main()
