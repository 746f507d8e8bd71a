"""Parametric forward ISP simulator with an analytic white-box inverse.

The forward pipeline converts a packed RAW image into a display RGB image with a
fixed stage order:

    black-level scaling -> (optional read noise) -> white-balance gains ->
    bilinear demosaic -> color matrix -> clip [0, 1] -> gamma encode v**gamma ->
    8-bit quantize -> dequantize

The inverse runs the stages backwards and re-mosaics by subsampling at the CFA
sites. It is exact up to quantization on pixels the clip stage never touched;
pixels whose encoded RGB is full white are mapped back to the white level
(saturation is not invertible).

Both directions are pure functions of (inputs, parameters, seed) and safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .bayer import RawImage, RgbImage, pack_bayer, unpack_bayer

# Bilinear interpolation kernels over a masked RGGB mosaic. Green sites have 2x
# the density, so the cross kernel /4 and the full kernel /4 both yield unit
# weight at sampled sites and averaged neighbors elsewhere.
_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0


class IspConfigError(ValueError):
    pass


@dataclass
class IspParams:
    """Parameters of the synthetic camera pipeline."""

    black_level: float = 64.0
    white_level: float = 1023.0
    wb_gains: tuple = (1.9, 1.2, 1.7)
    color_matrix: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [1.25, -0.15, -0.10],
                [-0.05, 1.20, -0.15],
                [-0.05, -0.20, 1.25],
            ]
        )
    )
    gamma: float = 1.0 / 2.2  # encoding exponent
    noise_sigma: float = 0.0  # read-noise std in normalized [0, 1] units
    quantize_bits: int | None = 8

    def __post_init__(self):
        self.color_matrix = np.asarray(self.color_matrix, dtype=np.float64)
        self.validate()

    def validate(self):
        if not self.black_level < self.white_level:
            raise IspConfigError("black_level must be < white_level")
        if any(g <= 0 for g in self.wb_gains) or len(self.wb_gains) != 3:
            raise IspConfigError(f"wb_gains must be 3 positive scalars, got {self.wb_gains}")
        if self.gamma <= 0:
            raise IspConfigError("gamma must be positive")
        if self.noise_sigma < 0:
            raise IspConfigError("noise_sigma must be >= 0")
        if self.color_matrix.shape != (3, 3):
            raise IspConfigError("color_matrix must be 3x3")
        if np.linalg.cond(self.color_matrix) >= 1e6:
            raise IspConfigError("color_matrix is singular or near-singular")

    def to_dict(self) -> dict:
        return {
            "black_level": float(self.black_level),
            "white_level": float(self.white_level),
            "wb_gains": [float(g) for g in self.wb_gains],
            "color_matrix": self.color_matrix.tolist(),
            "gamma": float(self.gamma),
            "noise_sigma": float(self.noise_sigma),
            "quantize_bits": self.quantize_bits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IspParams":
        d = dict(d)
        d["wb_gains"] = tuple(d["wb_gains"])
        return cls(**d)


def default_isp_params() -> IspParams:
    """The documented default preset (10-bit sensor, daylight-ish gains)."""
    return IspParams()


def scale_to_linear(raw: RawImage) -> np.ndarray:
    """Counts -> linear [0, 1] pack (black-level scaling stage)."""
    span = raw.white_level - raw.black_level
    return (raw.planes.astype(np.float64) - raw.black_level) / span


def apply_wb_gains(pack_lin: np.ndarray, wb_gains) -> np.ndarray:
    """Multiply the linear pack planes by (g_r, g_g, g_g, g_b)."""
    gr, gg, gb = wb_gains
    gains = np.array([gr, gg, gg, gb], dtype=np.float64).reshape(4, 1, 1)
    return pack_lin * gains


def demosaic_bilinear(pack_lin: np.ndarray) -> np.ndarray:
    """Interpolate a linear RGGB pack to a full-resolution (3, 2h, 2w) image.

    Original CFA samples are preserved exactly at their own sites; missing
    values are bilinear averages of the nearest same-color neighbors with
    symmetric boundary handling.
    """
    mosaic = unpack_bayer(pack_lin)
    H, W = mosaic.shape
    y, x = np.mgrid[0:H, 0:W]
    mask_r = ((y % 2 == 0) & (x % 2 == 0)).astype(np.float64)
    mask_g = ((y % 2) != (x % 2)).astype(np.float64)
    mask_b = ((y % 2 == 1) & (x % 2 == 1)).astype(np.float64)

    out = np.empty((3, H, W), dtype=np.float64)
    for c, (mask, kernel) in enumerate(
        [(mask_r, _KERNEL_RB), (mask_g, _KERNEL_G), (mask_b, _KERNEL_RB)]
    ):
        samples = convolve2d(mosaic * mask, kernel, mode="same", boundary="symm")
        weights = convolve2d(mask, kernel, mode="same", boundary="symm")
        out[c] = samples / weights
    # re-inject the measured samples so CFA sites are bit-exact even where the
    # boundary reflection makes the weighted average round
    out[0, 0::2, 0::2] = mosaic[0::2, 0::2]
    out[1, 0::2, 1::2] = mosaic[0::2, 1::2]
    out[1, 1::2, 0::2] = mosaic[1::2, 0::2]
    out[2, 1::2, 1::2] = mosaic[1::2, 1::2]
    return out


def apply_color_matrix(rgb: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """Per-pixel 3x3 color transform on a (3, H, W) image."""
    return np.einsum("ij,jhw->ihw", np.asarray(matrix, dtype=np.float64), rgb)


def quantize_levels(v: np.ndarray, bits: int) -> np.ndarray:
    """Round [0, 1] values to 2**bits - 1 levels and back to [0, 1]."""
    levels = (1 << bits) - 1
    return np.round(v * levels) / levels


def isp_forward(raw: RawImage, params: IspParams, rng_seed: int = 0) -> RgbImage:
    """Render a packed RAW image to display RGB through the synthetic pipeline."""
    params.validate()
    lin = scale_to_linear(raw)
    if params.noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        lin = lin + rng.normal(0.0, params.noise_sigma, size=lin.shape)
    lin = apply_wb_gains(lin, params.wb_gains)
    full = demosaic_bilinear(lin)
    full = apply_color_matrix(full, params.color_matrix)
    full = np.clip(full, 0.0, 1.0)
    enc = np.power(full, params.gamma)
    if params.quantize_bits is not None:
        enc = quantize_levels(enc, params.quantize_bits)
    return RgbImage(enc)


def isp_preclip_linear(raw: RawImage, params: IspParams) -> np.ndarray:
    """Color-matrix output before the clip stage (noise-free).

    Used to identify saturated pixels: the analytic inverse is only exact where
    every channel of this image lies strictly inside (0, 1).
    """
    lin = apply_wb_gains(scale_to_linear(raw), params.wb_gains)
    return apply_color_matrix(demosaic_bilinear(lin), params.color_matrix)


def isp_inverse_oracle(rgb: RgbImage, params: IspParams) -> RawImage:
    """Analytically invert the forward pipeline (white-box test oracle).

    Inverts gamma, color matrix, and white balance, then re-mosaics by
    subsampling at the CFA sites. Pixels encoded as full white in every channel
    are mapped to the white level (clipping fixed point); everything else is
    clipped into the valid range after inversion.
    """
    params.validate()
    enc = rgb.planes.astype(np.float64)
    lin = np.power(np.clip(enc, 0.0, 1.0), 1.0 / params.gamma)
    inv = np.linalg.inv(params.color_matrix)
    cam = apply_color_matrix(lin, inv)

    gr, gg, gb = params.wb_gains
    site_gain = np.array([gr, gg, gg, gb]).reshape(4, 1, 1)
    # Channel value at each pixel's own CFA site, per plane.
    cam_mosaic = np.empty(enc.shape[1:], dtype=np.float64)
    cam_mosaic[0::2, 0::2] = cam[0, 0::2, 0::2]
    cam_mosaic[0::2, 1::2] = cam[1, 0::2, 1::2]
    cam_mosaic[1::2, 0::2] = cam[1, 1::2, 0::2]
    cam_mosaic[1::2, 1::2] = cam[2, 1::2, 1::2]
    pack = pack_bayer(cam_mosaic) / site_gain
    pack = np.clip(pack, 0.0, 1.0)

    white = np.all(enc >= 1.0, axis=0)
    pack[pack_bayer(white.astype(np.float64)) > 0.5] = 1.0

    counts = params.black_level + pack * (params.white_level - params.black_level)
    return RawImage(counts, params.black_level, params.white_level)


def inverse_error_bound(rgb: RgbImage, params: IspParams) -> np.ndarray:
    """Per-site bound on |oracle(rgb) - raw_true| in counts for unsaturated pixels.

    Quantization perturbs each encoded channel by at most half a level; the
    perturbation propagates through the inverse gamma (local slope
    (1/gamma) * v**(1/gamma - 1)), the inverse color matrix, and the
    white-balance division. A full level step is used instead of a half step to
    absorb rounding of the stored counts.
    """
    if params.quantize_bits is None:
        return np.zeros((4,) + (rgb.planes.shape[1] // 2, rgb.planes.shape[2] // 2))
    step = 1.0 / ((1 << params.quantize_bits) - 1)
    enc = rgb.planes.astype(np.float64)
    inv_gamma = 1.0 / params.gamma
    slope = inv_gamma * np.power(np.clip(enc + step, 0.0, 1.0), inv_gamma - 1.0)
    lin_err = slope * step  # per-channel linear-domain error bound

    inv = np.abs(np.linalg.inv(params.color_matrix))
    cam_err = np.einsum("ij,jhw->ihw", inv, lin_err)

    gr, gg, gb = params.wb_gains
    site_gain = np.array([gr, gg, gg, gb]).reshape(4, 1, 1)
    err_mosaic = np.empty(enc.shape[1:], dtype=np.float64)
    err_mosaic[0::2, 0::2] = cam_err[0, 0::2, 0::2]
    err_mosaic[0::2, 1::2] = cam_err[1, 0::2, 1::2]
    err_mosaic[1::2, 0::2] = cam_err[1, 1::2, 0::2]
    err_mosaic[1::2, 1::2] = cam_err[2, 1::2, 1::2]
    return pack_bayer(err_mosaic) / site_gain * (params.white_level - params.black_level)
