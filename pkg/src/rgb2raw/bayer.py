"""RAW/RGB image containers, RGGB Bayer packing, and black/white-level normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CfaError(ValueError):
    pass


class RangeError(ValueError):
    pass


# Plane order of the pack and the (row, col) offset of each plane in the 2x2 quad.
PLANE_NAMES = ("R", "G1", "G2", "B")
RGGB_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass
class RawImage:
    """Packed Bayer sensor image: 4 half-resolution planes (R, G1, G2, B) in counts."""

    planes: np.ndarray  # (4, h, w), values in [black_level, white_level]
    black_level: float
    white_level: float
    cfa: str = "RGGB"

    def __post_init__(self):
        self.planes = np.asarray(self.planes)
        if self.planes.ndim != 3 or self.planes.shape[0] != 4:
            raise CfaError(f"expected (4, h, w) planes, got {self.planes.shape}")
        if self.planes.shape[1] < 1 or self.planes.shape[2] < 1:
            raise CfaError("empty plane")
        if self.cfa != "RGGB":
            raise CfaError(f"unsupported CFA pattern {self.cfa!r}")
        if not self.black_level < self.white_level:
            raise RangeError(
                f"black_level ({self.black_level}) must be < white_level ({self.white_level})"
            )

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def clipped(self) -> "RawImage":
        """Return a copy with counts clipped to [black_level, white_level]."""
        return RawImage(
            np.clip(self.planes, self.black_level, self.white_level),
            self.black_level,
            self.white_level,
            self.cfa,
        )


@dataclass
class RgbImage:
    """Display-referred 3-plane image with values in [0, 1]."""

    planes: np.ndarray  # (3, H, W)

    def __post_init__(self):
        self.planes = np.asarray(self.planes)
        if self.planes.ndim != 3 or self.planes.shape[0] != 3:
            raise CfaError(f"expected (3, H, W) planes, got {self.planes.shape}")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]


@dataclass
class NormalizedPair:
    """A training sample: RAW pack and RGB image both mapped to [-1, 1]."""

    raw_n: np.ndarray  # (4, h, w)
    rgb_n: np.ndarray  # (3, 2h, 2w)

    def __post_init__(self):
        rh, rw = self.raw_n.shape[1:]
        gh, gw = self.rgb_n.shape[1:]
        if (gh, gw) != (2 * rh, 2 * rw):
            raise CfaError(
                f"RGB dims {(gh, gw)} must be exactly twice the RAW pack dims {(rh, rw)}"
            )


def pack_bayer(mosaic: np.ndarray, cfa: str = "RGGB") -> np.ndarray:
    """Split a (2h, 2w) mosaic into 4 half-resolution planes (R, G1, G2, B)."""
    mosaic = np.asarray(mosaic)
    if mosaic.ndim != 2:
        raise CfaError(f"mosaic must be 2-D, got shape {mosaic.shape}")
    if mosaic.shape[0] % 2 or mosaic.shape[1] % 2:
        raise CfaError(f"mosaic dims must be even, got {mosaic.shape}")
    if cfa != "RGGB":
        raise CfaError(f"unsupported CFA pattern {cfa!r}")
    return np.stack([mosaic[dy::2, dx::2] for dy, dx in RGGB_OFFSETS])


def unpack_bayer(planes: np.ndarray, cfa: str = "RGGB") -> np.ndarray:
    """Inverse of pack_bayer: interleave 4 planes back into a (2h, 2w) mosaic."""
    planes = np.asarray(planes)
    if planes.ndim != 3 or planes.shape[0] != 4:
        raise CfaError(f"expected (4, h, w) planes, got {planes.shape}")
    if cfa != "RGGB":
        raise CfaError(f"unsupported CFA pattern {cfa!r}")
    h, w = planes.shape[1:]
    mosaic = np.empty((2 * h, 2 * w), dtype=planes.dtype)
    for plane, (dy, dx) in zip(planes, RGGB_OFFSETS):
        mosaic[dy::2, dx::2] = plane
    return mosaic


def normalize_raw(raw: RawImage) -> np.ndarray:
    """Map counts to [-1, 1] in float64: black_level -> -1, white_level -> +1."""
    span = raw.white_level - raw.black_level
    scaled = (raw.planes.astype(np.float64) - raw.black_level) / span
    return 2.0 * scaled - 1.0


def denormalize_raw(raw_n: np.ndarray, black_level: float, white_level: float) -> RawImage:
    """Inverse of normalize_raw; output counts are clipped to the valid range."""
    if not black_level < white_level:
        raise RangeError(f"black_level ({black_level}) must be < white_level ({white_level})")
    scaled = (np.asarray(raw_n, dtype=np.float64) + 1.0) / 2.0
    counts = black_level + scaled * (white_level - black_level)
    counts = np.clip(counts, black_level, white_level)
    return RawImage(counts, black_level, white_level)
