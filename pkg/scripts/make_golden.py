#!/usr/bin/env python3
"""Regenerate tests/data/golden_forward.npz.

The archive freezes a tiny model's parameters, a fixed input, and the forward
output at the time of a verified build. The regression test reloads the stored
parameters (not the seed), so the file stays valid across RNG changes.
Rerunning this script re-bases the regression; only do that after verifying
the forward path by other means.
"""

from pathlib import Path

import numpy as np
import torch

from rgb2raw.unet import GuidedUNet, tiny_model_config


def main():
    torch.manual_seed(20240)
    model = GuidedUNet(tiny_model_config(levels=2, base=8))
    rng = np.random.default_rng(77)
    x = rng.uniform(-1, 1, size=(1, 4, 16, 16)).astype(np.float32)
    rgb = rng.uniform(-1, 1, size=(1, 3, 32, 32)).astype(np.float32)
    t = 321
    with torch.no_grad():
        expected = model(torch.from_numpy(x), torch.from_numpy(rgb), t).numpy()

    out = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_forward.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param/{k}": v.numpy() for k, v in model.state_dict().items()}
    with open(out, "wb") as f:
        np.savez(f, x=x, rgb=rgb, t=t, expected=expected, **arrays)
    print(f"wrote {out} (output mean {expected.mean():+.6f})")


if __name__ == "__main__":
    main()
