"""RGB-guided diffusion for RAW sensor image generation."""

from .bayer import (
    NormalizedPair,
    RawImage,
    RgbImage,
    denormalize_raw,
    normalize_raw,
    pack_bayer,
    unpack_bayer,
)
from .isp import IspParams, default_isp_params, isp_forward, isp_inverse_oracle
from .dataio import (
    DatasetManifest,
    load_manifest,
    make_synthetic_dataset,
    read_raw,
    read_rgb_png,
    save_manifest,
    write_raw,
    write_rgb_png,
)
from .schedule import (
    PosteriorCoeffs,
    VarianceSchedule,
    ddim_step,
    ddpm_step,
    make_ddim_timesteps,
    make_linear_schedule,
    posterior_coeffs,
    q_sample,
)
from .guidance import GuidanceConfig, GuidanceEncoder, downsample_guidance
from .unet import GuidedUNet, ModelConfig, guided_modulation, tiny_model_config
from .losses import LossConfig, loss_l1, loss_logl1, loss_mse, loss_total
from .checkpoint import load_checkpoint, save_checkpoint
from .sampling import SamplerSpec, ddim_sample, ddpm_sample, make_denoise_fn, run_sampler
from .metrics import EvalReport, patch_grid_eval, psnr, ssim
from .training import MixingSpec, PairDataset, fit, sample_training_batch, train_step
from .runconfig import RunConfig, load_run_config, run_config_from_dict, save_run_config

__version__ = "0.1.0"
