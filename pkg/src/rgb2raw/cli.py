"""Command-line entry point.

Subcommands: make-synth, train, sample, generate-dataset, evaluate.
Exit codes: 0 success, 1 usage (bad flags or config), 2 data problems,
3 runtime failures. Every command is deterministic given its full argument
set including --seed. When --out-dir is omitted for train/evaluate, the
RGB2RAW_RUN_DIR environment variable supplies the parent directory.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
from pathlib import Path

import numpy as np
import yaml

from .bayer import RgbImage, denormalize_raw
from .checkpoint import CheckpointError, load_checkpoint
from .dataio import (
    DataError,
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    make_synthetic_dataset,
    read_rgb_png,
    save_manifest,
    write_raw,
    write_rgb_png,
)
from .isp import IspParams, default_isp_params
from .metrics import patch_grid_eval
from .runconfig import RunConfig, RunConfigError, run_config_from_dict
from .sampling import SamplerSpec, make_denoise_fn, run_sampler
from .schedule import ScheduleError, make_linear_schedule
from .training import ResumeError, TrainingDiverged, fit

RUN_DIR_ENV = "RGB2RAW_RUN_DIR"


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> Parser:
    parser = Parser(prog="rgb2raw", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("make-synth", help="generate a synthetic (RAW, RGB) dataset")
    p.add_argument("--n", type=int, required=True, help="number of image pairs")
    p.add_argument("--size", type=int, required=True, help="RGB height (and width unless --width)")
    p.add_argument("--width", type=int, default=None, help="RGB width if not square")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--isp-preset", choices=["default"], default="default")
    p.add_argument("--noise", type=float, default=None, help="override read-noise sigma")

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", default=None, help="YAML run config; defaults used when omitted")
    p.add_argument("--out-dir", default=None,
                   help=f"run directory (default: ${RUN_DIR_ENV}/<name>)")
    p.add_argument("--name", default="run", help="run name under the default run directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config value (flags win)")

    p = sub.add_parser("sample", help="generate RAW from one RGB image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb", required=True, help="input RGB (PNG)")
    p.add_argument("--sampler", choices=["ddpm", "ddim"], default="ddim")
    p.add_argument("--steps", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output RAW container path")
    p.add_argument("--preview", action="store_true",
                   help="also write an 8-bit preview PNG (gamma 1/2.2)")

    p = sub.add_parser("generate-dataset", help="convert an RGB corpus to a RAW dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb-manifest", required=True,
                   help="dataset manifest JSON or a directory of PNG files")
    p.add_argument("--sampler", choices=["ddpm", "ddim"], default="ddim")
    p.add_argument("--steps", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="patch-grid evaluation against ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="test dataset manifest")
    p.add_argument("--sampler", choices=["ddpm", "ddim"], default="ddim")
    p.add_argument("--steps", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", type=int, default=3)
    p.add_argument("--out-dir", default=None,
                   help=f"report directory (default: ${RUN_DIR_ENV}/<name>)")
    p.add_argument("--name", default="eval", help="report name under the default run directory")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself (self-test mode)")
    return parser


def _usage_error(message: str):
    print(f"rgb2raw: error: {message}", file=sys.stderr)
    raise SystemExit(1)


def _resolve_out_dir(args) -> Path:
    if args.out_dir is not None:
        return Path(args.out_dir)
    root = os.environ.get(RUN_DIR_ENV)
    if not root:
        _usage_error(f"--out-dir required (or set ${RUN_DIR_ENV})")
    return Path(root) / args.name


def cmd_make_synth(args) -> int:
    if args.n < 1:
        _usage_error("--n must be >= 1")
    if args.size < 16 or args.size % 2 or (args.width or args.size) % 2:
        _usage_error("--size/--width must be even and >= 16")
    params = default_isp_params()
    if args.noise is not None:
        d = params.to_dict()
        d["noise_sigma"] = args.noise
        params = IspParams.from_dict(d)
    manifest_path = make_synthetic_dataset(
        args.n, (args.size, args.width or args.size), params, args.seed, args.out_dir,
        split=args.split,
    )
    print(manifest_path)
    return 0


def _parse_overrides(pairs: list) -> dict:
    doc = {}
    for item in pairs:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            _usage_error(f"override must look like section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        doc.setdefault(section, {})[name] = yaml.safe_load(value)
    return doc


def cmd_train(args) -> int:
    doc = {}
    if args.config is not None:
        path = Path(args.config)
        if not path.exists():
            raise DataError(f"config not found: {path}")
        doc = yaml.safe_load(path.read_text()) or {}
    for section, values in _parse_overrides(args.overrides).items():
        doc.setdefault(section, {}).update(values)
    cfg = run_config_from_dict(doc)
    final = fit(cfg, _resolve_out_dir(args), resume=args.resume)
    print(final)
    return 0


def _schedule_from_meta(meta: dict):
    card = meta.get("extra", {})
    required = ("timesteps", "beta_1", "beta_T", "black_level", "white_level", "cfa")
    missing = [k for k in required if k not in card]
    if missing:
        raise CheckpointError(f"checkpoint lacks training metadata fields {missing}")
    return make_linear_schedule(card["timesteps"], card["beta_1"], card["beta_T"]), card


def _check_ladder_dims(rgb_h: int, rgb_w: int, levels: int):
    unit = 1 << levels  # RGB dims must be even and the pack must divide 2**(levels-1)
    bad = [d for d in (rgb_h, rgb_w) if d % unit]
    if bad:
        nearest = {d: (d // unit * unit, (d // unit + 1) * unit) for d in bad}
        hints = ", ".join(f"{d} -> {lo} or {hi}" for d, (lo, hi) in nearest.items())
        raise DataError(
            f"RGB dims {rgb_h}x{rgb_w} incompatible with the {levels}-level ladder "
            f"(need multiples of {unit}); nearest valid: {hints}"
        )


def _write_preview(path, raw, card):
    lin = (raw.planes - card["black_level"]) / (card["white_level"] - card["black_level"])
    rgb = np.stack([lin[0], (lin[1] + lin[2]) / 2.0, lin[3]])
    rgb = np.power(np.clip(rgb, 0.0, 1.0), 1.0 / 2.2)
    write_rgb_png(path, RgbImage(rgb.astype(np.float32)))


def _sample_one(model, schedule, card, rgb_path, spec: SamplerSpec, rng):
    rgb = read_rgb_png(rgb_path)
    _check_ladder_dims(rgb.height, rgb.width, model.cfg.levels)
    rgb_n = (rgb.planes * 2.0 - 1.0).astype(np.float32)[None]
    denoise_fn = make_denoise_fn(model, rgb_n, schedule)
    shape = (1, model.cfg.raw_channels, rgb.height // 2, rgb.width // 2)
    raw_n = run_sampler(denoise_fn, shape, schedule, spec, rng)[0]
    return denormalize_raw(raw_n, card["black_level"], card["white_level"])


def cmd_sample(args) -> int:
    if args.steps < 1:
        _usage_error("--steps must be >= 1")
    model, meta = load_checkpoint(args.checkpoint)
    schedule, card = _schedule_from_meta(meta)
    spec = SamplerSpec(args.sampler, args.steps)
    rng = np.random.default_rng(args.seed)
    raw = _sample_one(model, schedule, card, args.rgb, spec, rng)
    write_raw(args.out, raw)
    print(args.out)
    if args.preview:
        _write_preview(Path(args.out).with_suffix(".preview.png"), raw, card)
    return 0


def _collect_rgb_inputs(source: str) -> list:
    path = Path(source)
    if path.is_dir():
        files = sorted(path.glob("*.png"))
        if not files:
            raise DataError(f"no PNG files in {path}")
        return files
    manifest = load_manifest(path)
    return [manifest.rgb_file(i) for i in range(len(manifest))]


def cmd_generate_dataset(args) -> int:
    if args.steps < 1:
        _usage_error("--steps must be >= 1")
    model, meta = load_checkpoint(args.checkpoint)
    schedule, card = _schedule_from_meta(meta)
    spec = SamplerSpec(args.sampler, args.steps)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    inputs = _collect_rgb_inputs(args.rgb_manifest)
    seeds = np.random.SeedSequence(args.seed).spawn(len(inputs))
    entries, failures = [], 0
    for rgb_path, child in zip(inputs, seeds):
        try:
            raw = _sample_one(model, schedule, card, rgb_path, spec,
                              np.random.default_rng(child))
        except (DataError, OSError) as e:
            print(f"skipping {rgb_path}: {e}", file=sys.stderr)
            failures += 1
            continue
        stem = Path(rgb_path).stem
        raw_name = f"{stem}.rawd"
        rgb_name = f"{stem}.png"
        write_raw(out_dir / raw_name, raw)
        if Path(rgb_path).resolve() != (out_dir / rgb_name).resolve():
            shutil.copyfile(rgb_path, out_dir / rgb_name)
        for sidecar in Path(rgb_path).parent.glob(f"{stem}.*"):
            if sidecar.suffix.lower() not in (".png", ".rawd") and sidecar.is_file():
                shutil.copyfile(sidecar, out_dir / sidecar.name)
        entries.append(ManifestEntry(rgb_name, raw_name, isp_params_ref="generated"))

    if not entries:
        raise DataError("no images converted")
    manifest = DatasetManifest(entries=entries, split="train", seed=args.seed,
                               cfa=card["cfa"], isp_params=None, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    print(out_dir / "manifest.json")
    if failures:
        print(f"{failures} of {len(inputs)} inputs failed", file=sys.stderr)
        return 2
    return 0


def cmd_evaluate(args) -> int:
    if args.steps < 1:
        _usage_error("--steps must be >= 1")
    model, meta = load_checkpoint(args.checkpoint)
    schedule, _ = _schedule_from_meta(meta)
    manifest = load_manifest(args.manifest)
    spec = SamplerSpec(args.sampler, args.steps)
    report = patch_grid_eval(model, manifest, schedule, spec, seed=args.seed,
                             grid=args.grid, oracle=args.oracle)
    out_dir = _resolve_out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save(out_dir / "report.json", out_dir / "patches.csv")
    print(f"PSNR {report.psnr_mean:.2f} dB  SSIM {report.ssim_mean:.4f}  "
          f"({report.n_patches} patches, {report.n_inf_excluded} at zero error)")
    return 0


_COMMANDS = {
    "make-synth": cmd_make_synth,
    "train": cmd_train,
    "sample": cmd_sample,
    "generate-dataset": cmd_generate_dataset,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except RunConfigError as e:
        print(f"rgb2raw: config error: {e}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as e:
        print(f"rgb2raw: data error: {e}", file=sys.stderr)
        return 2
    except (CheckpointError, ResumeError, TrainingDiverged, ScheduleError, ValueError) as e:
        print(f"rgb2raw: runtime error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
