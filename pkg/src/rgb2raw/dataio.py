"""Dataset I/O: RAW binary container, PNG round trip, manifests, synthetic scenes.

RAW container layout (little-endian throughout):

    magic   4 bytes  b"RAWD"
    version u16      currently 1
    channels u16     always 4 (R, G1, G2, B)
    h       u32      plane height
    w       u32      plane width
    black   f32      black level in counts
    white   f32      white level in counts
    data    h*w*4    u16 samples, plane order R, G1, G2, B, row-major

A dataset manifest is a JSON document with stable field names:

    {"version": 1, "split": "train", "seed": 7, "cfa": "RGGB",
     "isp_params": {...}, "entries": [{"rgb": ..., "raw": ..., "isp_params_ref": "default"}]}

Paths in entries are relative to the manifest's directory.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .bayer import RawImage, RgbImage, pack_bayer
from .isp import IspParams, isp_forward

RAW_MAGIC = b"RAWD"
RAW_VERSION = 1
_HEADER = struct.Struct("<4sHHIIff")


class DataError(ValueError):
    pass


def write_raw(path, raw: RawImage) -> None:
    """Write a RawImage to the binary container; counts are rounded to u16."""
    path = Path(path)
    h, w = raw.height, raw.width
    counts = np.round(np.clip(raw.planes, 0, 65535)).astype("<u2")
    header = _HEADER.pack(RAW_MAGIC, RAW_VERSION, 4, h, w, raw.black_level, raw.white_level)
    path.write_bytes(header + counts.tobytes())


def read_raw(path) -> RawImage:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, channels, h, w, black, white = _HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != RAW_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if channels != 4:
        raise DataError(f"{path}: expected 4 channels, got {channels}")
    expected = _HEADER.size + h * w * 4 * 2
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} bytes, got {len(blob)}")
    planes = np.frombuffer(blob, dtype="<u2", offset=_HEADER.size).reshape(4, h, w)
    return RawImage(planes.astype(np.float32), black, white)


def write_rgb_png(path, rgb: RgbImage) -> None:
    """Store [0, 1] RGB as 8-bit PNG (lossless for 8-bit-quantized pipelines)."""
    arr = np.round(np.clip(rgb.planes, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(Path(path))


def read_rgb_png(path) -> RgbImage:
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return RgbImage(arr.transpose(2, 0, 1))


@dataclass
class ManifestEntry:
    rgb_path: str
    raw_path: str
    isp_params_ref: str = "default"


@dataclass
class DatasetManifest:
    entries: list
    split: str
    seed: int
    cfa: str = "RGGB"
    isp_params: dict | None = None
    root: Path | None = None  # directory the entry paths are relative to

    def __post_init__(self):
        if not self.entries:
            raise DataError("manifest has no entries")
        if self.split not in ("train", "test"):
            raise DataError(f"split must be train or test, got {self.split!r}")

    def rgb_file(self, i: int) -> Path:
        return (self.root or Path(".")) / self.entries[i].rgb_path

    def raw_file(self, i: int) -> Path:
        return (self.root or Path(".")) / self.entries[i].raw_path

    def __len__(self) -> int:
        return len(self.entries)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    doc = {
        "version": 1,
        "split": manifest.split,
        "seed": manifest.seed,
        "cfa": manifest.cfa,
        "isp_params": manifest.isp_params,
        "entries": [
            {"rgb": e.rgb_path, "raw": e.raw_path, "isp_params_ref": e.isp_params_ref}
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    entries = [
        ManifestEntry(e["rgb"], e["raw"], e.get("isp_params_ref", "default"))
        for e in doc["entries"]
    ]
    manifest = DatasetManifest(
        entries=entries,
        split=doc["split"],
        seed=doc["seed"],
        cfa=doc.get("cfa", "RGGB"),
        isp_params=doc.get("isp_params"),
        root=path.parent,
    )
    for i in range(len(manifest)):
        for f in (manifest.rgb_file(i), manifest.raw_file(i)):
            if not f.exists():
                raise DataError(f"manifest entry missing on disk: {f}")
    return manifest


def _render_scene(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Procedural linear scene: gradient field plus random rectangles and disks.

    Returns a (3, height, width) linear-irradiance image; values are kept away
    from the rails so most pixels survive the pipeline unsaturated.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)
    scene = np.empty((3, height, width))
    for c in range(3):
        base = rng.uniform(0.12, 0.38)
        gy, gx = rng.uniform(-0.22, 0.22, size=2)
        scene[c] = base + gy * yy + gx * xx

    n_shapes = rng.integers(6, 13)
    for _ in range(n_shapes):
        color = rng.uniform(0.05, 0.55, size=3)
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        if rng.random() < 0.5:
            hh = rng.uniform(0.08, 0.4) * height
            ww = rng.uniform(0.08, 0.4) * width
            mask = (np.abs(yy * (height - 1) - cy) < hh) & (np.abs(xx * (width - 1) - cx) < ww)
        else:
            r = rng.uniform(0.05, 0.3) * min(height, width)
            mask = (yy * (height - 1) - cy) ** 2 + (xx * (width - 1) - cx) ** 2 < r * r
        alpha = rng.uniform(0.6, 1.0)
        scene[:, mask] = (1 - alpha) * scene[:, mask] + alpha * color[:, None]
    return np.clip(scene, 0.005, 0.95)


def synthesize_raw(rng: np.random.Generator, height: int, width: int, params: IspParams) -> RawImage:
    """Sample a procedural scene and mosaic it into integer sensor counts."""
    if height % 2 or width % 2:
        raise DataError("scene dims must be even")
    scene = _render_scene(rng, height, width)
    mosaic = np.empty((height, width))
    mosaic[0::2, 0::2] = scene[0, 0::2, 0::2]
    mosaic[0::2, 1::2] = scene[1, 0::2, 1::2]
    mosaic[1::2, 0::2] = scene[1, 1::2, 0::2]
    mosaic[1::2, 1::2] = scene[2, 1::2, 1::2]
    if params.noise_sigma > 0:
        mosaic = mosaic + rng.normal(0.0, params.noise_sigma, size=mosaic.shape)
    counts = params.black_level + np.clip(mosaic, 0.0, 1.0) * (
        params.white_level - params.black_level
    )
    counts = np.round(counts)
    return RawImage(pack_bayer(counts), params.black_level, params.white_level)


def make_synthetic_dataset(
    n: int,
    size: tuple,
    params: IspParams,
    seed: int,
    out_dir,
    split: str = "train",
) -> Path:
    """Generate n (RAW, RGB) pairs under `out_dir` and return the manifest path."""
    if n < 1:
        raise DataError("n must be >= 1")
    height, width = size
    if height % 2 or width % 2 or height < 16 or width < 16:
        raise DataError(f"size must be even and >= 16, got {size}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out_dir}: {e}") from e

    root = np.random.SeedSequence(seed)
    entries = []
    for i, child in enumerate(root.spawn(n)):
        rng = np.random.default_rng(child)
        raw = synthesize_raw(rng, height, width, params)
        rgb = isp_forward(raw, params, rng_seed=seed + i)
        raw_name = f"pair_{i:04d}.rawd"
        rgb_name = f"pair_{i:04d}.png"
        write_raw(out_dir / raw_name, raw)
        write_rgb_png(out_dir / rgb_name, rgb)
        entries.append(ManifestEntry(rgb_name, raw_name))

    manifest = DatasetManifest(
        entries=entries,
        split=split,
        seed=seed,
        isp_params=params.to_dict(),
        root=out_dir,
    )
    manifest_path = out_dir / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest_path
