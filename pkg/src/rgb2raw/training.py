"""Training loop: dataset mixing, CFA-aware augmentation, AdamW with linear decay,
periodic checkpointing, and seeded resume.

All randomness (source choice, crops, augmentation, timesteps, noise) is drawn
from one numpy Generator whose state is checkpointed, so an interrupted run
continued from a checkpoint retraces the uninterrupted run exactly. Metrics
are appended to ``metrics.csv`` with columns
step, lr, loss_total, loss_mse, loss_l1, loss_logl1, wall_time.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .bayer import NormalizedPair, normalize_raw
from .dataio import DataError, DatasetManifest, load_manifest, read_raw, read_rgb_png
from .losses import LossConfig, loss_total
from .runconfig import RunConfig, save_run_config
from .schedule import VarianceSchedule, make_linear_schedule, q_sample
from .unet import GuidedUNet
from . import checkpoint as ckpt


class TrainingDiverged(RuntimeError):
    pass


class ResumeError(RuntimeError):
    pass


class PairDataset:
    """Eagerly loaded (raw_n, rgb_n) pairs from a manifest, all in [-1, 1]."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self.pairs = []
        for i in range(len(manifest)):
            raw = read_raw(manifest.raw_file(i))
            rgb = read_rgb_png(manifest.rgb_file(i))
            raw_n = normalize_raw(raw).astype(np.float32)
            rgb_n = (rgb.planes * 2.0 - 1.0).astype(np.float32)
            self.pairs.append(NormalizedPair(raw_n, rgb_n))
        self.black_level = float(raw.black_level)
        self.white_level = float(raw.white_level)
        self.cfa = raw.cfa

    def __len__(self):
        return len(self.pairs)


@dataclass
class MixingSpec:
    """Chooses between the original corpus and a generated one per sample."""

    original: PairDataset
    generated: PairDataset | None = None
    p_gen: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_gen <= 1.0:
            raise ValueError(f"p_gen must be in [0, 1], got {self.p_gen}")
        if self.p_gen > 0.0 and self.generated is None:
            raise ValueError("p_gen > 0 requires a generated dataset")

    def pick_source(self, rng: np.random.Generator) -> PairDataset:
        if self.generated is not None and rng.random() < self.p_gen:
            return self.generated
        return self.original


# Plane reorder that relabels the two green planes; needed whenever an
# augmentation op exchanges row-parity and column-parity (odd 90-degree turns).
_GREEN_SWAP = [0, 2, 1, 3]


def augment_pair(raw_n: np.ndarray, rgb_n: np.ndarray, rot_k: int, flip_h: bool, flip_v: bool):
    """Apply the same flip/rotation to a RAW pack and its RGB image.

    Flips keep each green plane in its own row parity; odd rotations exchange
    them, so the green planes are swapped to preserve CFA channel semantics.
    """
    if flip_h:
        raw_n = raw_n[..., ::-1]
        rgb_n = rgb_n[..., ::-1]
    if flip_v:
        raw_n = raw_n[..., ::-1, :]
        rgb_n = rgb_n[..., ::-1, :]
    rot_k %= 4
    if rot_k:
        raw_n = np.rot90(raw_n, rot_k, axes=(-2, -1))
        rgb_n = np.rot90(rgb_n, rot_k, axes=(-2, -1))
        if rot_k % 2:
            raw_n = raw_n[_GREEN_SWAP]
    return np.ascontiguousarray(raw_n), np.ascontiguousarray(rgb_n)


def sample_training_batch(mixing: MixingSpec, patch_size: int, batch_size: int,
                          rng: np.random.Generator, augment: bool = True):
    """Draw a batch of aligned (RAW pack, RGB) patches.

    patch_size is in RGB pixels; crops are sampled on the RAW pack grid so the
    RGB crop origin is always even and the pack crop is CFA-exact.
    """
    pack_patch = patch_size // 2
    raws, rgbs = [], []
    for _ in range(batch_size):
        source = mixing.pick_source(rng)
        pair = source.pairs[rng.integers(len(source))]
        h, w = pair.raw_n.shape[1:]
        if pack_patch > h or pack_patch > w:
            raise DataError(
                f"patch {patch_size} (pack {pack_patch}) exceeds image pack dims {(h, w)}"
            )
        y0 = int(rng.integers(h - pack_patch + 1))
        x0 = int(rng.integers(w - pack_patch + 1))
        raw_c = pair.raw_n[:, y0:y0 + pack_patch, x0:x0 + pack_patch]
        rgb_c = pair.rgb_n[:, 2 * y0:2 * (y0 + pack_patch), 2 * x0:2 * (x0 + pack_patch)]
        if augment:
            rot_k = int(rng.integers(4))
            flip_h = bool(rng.random() < 0.5)
            flip_v = bool(rng.random() < 0.5)
            raw_c, rgb_c = augment_pair(raw_c, rgb_c, rot_k, flip_h, flip_v)
        raws.append(raw_c)
        rgbs.append(rgb_c)
    return np.stack(raws), np.stack(rgbs)


def linear_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Linear decay from base_lr at step 0 to exactly 0 at the final step index."""
    if total_steps <= 1:
        return base_lr
    return base_lr * max(0.0, 1.0 - step / (total_steps - 1))


def sample_timesteps(rng: np.random.Generator, T: int, n: int) -> list:
    """Uniform per-item timesteps in {1..T}."""
    return [int(rng.integers(1, T + 1)) for _ in range(n)]


def train_step(model: GuidedUNet, optimizer, raw_batch: np.ndarray, rgb_batch: np.ndarray,
               schedule: VarianceSchedule, loss_cfg: LossConfig, lr: float,
               rng: np.random.Generator):
    """One optimization step; returns the per-term loss metrics."""
    for group in optimizer.param_groups:
        group["lr"] = lr

    batch = raw_batch.shape[0]
    ts = sample_timesteps(rng, schedule.T, batch)
    noisy = np.empty_like(raw_batch)
    eps = np.empty_like(raw_batch)
    for i, t in enumerate(ts):
        eps[i] = rng.standard_normal(raw_batch.shape[1:]).astype(raw_batch.dtype)
        noisy[i] = q_sample(raw_batch[i], t, eps[i], schedule)

    x0 = torch.from_numpy(raw_batch)
    rgb = torch.from_numpy(rgb_batch)
    x_t = torch.from_numpy(noisy)
    t_vec = torch.tensor(ts, dtype=torch.float32)

    model.train()
    optimizer.zero_grad()
    pred = model(x_t, rgb, t_vec)
    target = torch.from_numpy(eps) if model.cfg.prediction_target == "noise" else x0
    total, terms = loss_total(pred, target, loss_cfg)
    if not torch.isfinite(total):
        raise TrainingDiverged(
            "non-finite loss: "
            + ", ".join(f"{k}={float(v.detach())}" for k, v in terms.items())
        )
    total.backward()
    optimizer.step()

    metrics = {"loss_total": float(total.detach())}
    for name in ("mse", "l1", "logl1"):
        metrics[f"loss_{name}"] = float(terms[name].detach()) if name in terms else 0.0
    return metrics


METRICS_COLUMNS = ["step", "lr", "loss_total", "loss_mse", "loss_l1", "loss_logl1", "wall_time"]


def _checkpoint_paths(out_dir: Path, tag: str):
    ckpt_dir = out_dir / "checkpoints"
    return ckpt_dir / f"model_{tag}.npz", ckpt_dir / f"trainer_{tag}.pt"


def _save_state(out_dir: Path, tag: str, model, optimizer, completed: int,
                rng: np.random.Generator, resolved_config: dict, data_card: dict):
    model_path, trainer_path = _checkpoint_paths(out_dir, tag)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save_checkpoint(model_path, model, extra={"completed_steps": completed, **data_card})
    torch.save(
        {
            "completed_steps": completed,
            "optimizer": optimizer.state_dict(),
            "rng_state": rng.bit_generator.state,
            "resolved_config": resolved_config,
        },
        trainer_path,
    )


def _truncate_metrics(path: Path, completed: int):
    if not path.exists():
        return
    with open(path) as f:
        rows = list(csv.reader(f))
    kept = [rows[0]] + [r for r in rows[1:] if int(r[0]) < completed]
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(kept)


def fit(cfg: RunConfig, out_dir, resume: bool = False) -> Path:
    """Run the configured training; returns the final model checkpoint path.

    The run directory receives the resolved config echo, metrics.csv, and
    periodic plus final checkpoints. With resume=True the latest checkpoint in
    the directory is loaded and training continues to the configured step
    count, reproducing the uninterrupted run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tc = cfg.training

    if tc.strict_deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)

    if cfg.data.train_manifest is None:
        raise DataError("training requires data.train_manifest")
    original = PairDataset(load_manifest(cfg.data.train_manifest))
    generated = (
        PairDataset(load_manifest(cfg.data.generated_manifest))
        if cfg.data.generated_manifest
        else None
    )
    mixing = MixingSpec(original=original, generated=generated, p_gen=cfg.data.p_gen)
    schedule = make_linear_schedule(cfg.diffusion.timesteps, cfg.diffusion.beta_1,
                                    cfg.diffusion.beta_T)
    loss_cfg = LossConfig(use_mse=tc.use_mse, use_l1=tc.use_l1, use_logl1=tc.use_logl1,
                          log_eps=tc.log_eps)
    resolved = cfg.to_dict()
    data_card = {
        "black_level": original.black_level,
        "white_level": original.white_level,
        "cfa": original.cfa,
        "timesteps": cfg.diffusion.timesteps,
        "beta_1": cfg.diffusion.beta_1,
        "beta_T": cfg.diffusion.beta_T,
    }

    torch.manual_seed(tc.seed)
    model = GuidedUNet(cfg.model)
    optimizer = torch.optim.AdamW(model.parameters(), lr=tc.lr, betas=tc.adam_betas,
                                  weight_decay=tc.weight_decay)
    rng = np.random.default_rng(tc.seed)
    start_step = 0

    metrics_path = out_dir / "metrics.csv"
    if resume:
        trainer_files = sorted((out_dir / "checkpoints").glob("trainer_step*.pt"))
        if not trainer_files:
            raise ResumeError(f"no checkpoint to resume from in {out_dir}")
        state = torch.load(trainer_files[-1], weights_only=False)
        if state["resolved_config"] != resolved:
            raise ResumeError("resume refused: configuration differs from the checkpointed run")
        model_path = trainer_files[-1].with_name(
            trainer_files[-1].name.replace("trainer_", "model_").replace(".pt", ".npz")
        )
        ckpt.load_checkpoint(model_path, model)
        optimizer.load_state_dict(state["optimizer"])
        rng.bit_generator.state = state["rng_state"]
        start_step = state["completed_steps"]
        _truncate_metrics(metrics_path, start_step)
    else:
        save_run_config(cfg, out_dir / "config.yaml")
        with open(metrics_path, "w", newline="") as f:
            csv.writer(f).writerow(METRICS_COLUMNS)

    t_start = time.monotonic()
    log_file = open(metrics_path, "a", newline="")
    writer = csv.writer(log_file)
    try:
        for step in range(start_step, tc.steps):
            lr = linear_lr(tc.lr, step, tc.steps)
            raw_b, rgb_b = sample_training_batch(mixing, tc.patch_size, tc.batch_size, rng,
                                                 augment=tc.augment)
            try:
                metrics = train_step(model, optimizer, raw_b, rgb_b, schedule, loss_cfg, lr, rng)
            except TrainingDiverged as e:
                record = {"step": step, "error": str(e)}
                (out_dir / "diverged.json").write_text(json.dumps(record, indent=2))
                raise
            if (step + 1) % tc.log_interval == 0:
                writer.writerow(
                    [step, f"{lr:.10g}", f"{metrics['loss_total']:.8f}",
                     f"{metrics['loss_mse']:.8f}", f"{metrics['loss_l1']:.8f}",
                     f"{metrics['loss_logl1']:.8f}", f"{time.monotonic() - t_start:.3f}"]
                )
                log_file.flush()
            if (step + 1) % tc.checkpoint_interval == 0 and (step + 1) < tc.steps:
                _save_state(out_dir, f"step{step + 1:07d}", model, optimizer, step + 1, rng,
                            resolved, data_card)
    finally:
        log_file.close()

    _save_state(out_dir, f"step{tc.steps:07d}", model, optimizer, tc.steps, rng, resolved,
                data_card)
    final_path, _ = _checkpoint_paths(out_dir, "final")
    ckpt.save_checkpoint(final_path, model, extra={"completed_steps": tc.steps, **data_card})
    return final_path
