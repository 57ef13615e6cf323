"""One-class autoencoder: TSMamba encoder, conv+upsample decoder with
encoder skip features, and residual-image computation."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tsmamba import Conv2dLayer, Encoder, TSMambaConfig


class AEModel:
    """Autoencoder whose decoder mirrors the 4-stage encoder.

    Each decoder stage upsamples 2x and convolves down the channel count;
    the first three stages then merge the matching-resolution encoder skip
    by concatenation + 3x3 conv (the deepest skip is the latent itself, the
    decoder's input). A final 3x3 conv + sigmoid maps back to input channels.
    """

    def __init__(self, cfg: TSMambaConfig, rng: np.random.Generator | int = 0, dtype=np.float64):
        if isinstance(rng, int):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.dtype = dtype
        self.encoder = Encoder(cfg, rng, dtype)
        w = list(cfg.widths)  # e.g. [16, 32, 64, 128]
        dec_out = w[-2::-1] + [w[0]]  # [64, 32, 16, 16]
        self.up_convs = []
        self.merge_convs = []
        cin = w[-1]
        for s, cout in enumerate(dec_out):
            self.up_convs.append(Conv2dLayer(cin, cout, 3, stride=1, padding=1, rng=rng, dtype=dtype))
            if s < len(dec_out) - 1:
                skip_ch = w[-2 - s]
                self.merge_convs.append(
                    Conv2dLayer(cout + skip_ch, cout, 3, stride=1, padding=1, rng=rng, dtype=dtype))
            cin = cout
        self.final_conv = Conv2dLayer(w[0], cfg.in_channels, 3, stride=1, padding=1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        b, c, h, wd = x.shape
        if c != self.cfg.in_channels or (h, wd) != self.cfg.image_size:
            raise ValueError(f"ae_forward: input {x.shape} does not match config "
                             f"{self.cfg.in_channels}x{self.cfg.image_size}")
        z, skips = self.encoder(x)
        for s, conv in enumerate(self.up_convs):
            z = T.silu(conv(T.upsample_nearest2x(z)))
            if s < len(self.merge_convs):
                skip = skips[len(skips) - 2 - s]
                z = T.silu(self.merge_convs[s](T.concat([z, skip], axis=1)))
        return T.sigmoid(self.final_conv(z))

    def named_params(self):
        out = {f"encoder.{k}": v for k, v in self.encoder.named_params().items()}
        for s, conv in enumerate(self.up_convs):
            for k, v in conv.named_params().items():
                out[f"decoder.stage{s}.up.{k}"] = v
        for s, conv in enumerate(self.merge_convs):
            for k, v in conv.named_params().items():
                out[f"decoder.stage{s}.merge.{k}"] = v
        for k, v in self.final_conv.named_params().items():
            out[f"decoder.final.{k}"] = v
        return out


def reconstruction_loss(x: Tensor, xhat: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    return T.mse_loss(xhat, x)


def residual(x: Tensor, xhat: Tensor) -> Tensor:
    """Elementwise |x - xhat|; large where the reconstruction failed."""
    if x.shape != xhat.shape:
        raise ValueError(f"residual: shape mismatch {x.shape} vs {xhat.shape}")
    return T.abs_(T.sub(x, xhat))
