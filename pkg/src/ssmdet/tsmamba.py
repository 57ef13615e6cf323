"""2D selective-scan blocks: orientation flattening, SS2D mixing, the
LayerNorm->SS2D->MLP block with residual wiring, and the 4-stage encoder."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .scan import selective_scan_par


class Orientation(enum.Enum):
    ROW_MAJOR_FORWARD = "row_f"
    ROW_MAJOR_BACKWARD = "row_b"
    COL_MAJOR_FORWARD = "col_f"


ORIENTATIONS = (Orientation.ROW_MAJOR_FORWARD,
                Orientation.ROW_MAJOR_BACKWARD,
                Orientation.COL_MAJOR_FORWARD)


def flatten_2d(x: Tensor, o: Orientation) -> Tensor:
    """Channels-last image [B,H,W,C] -> sequence [B,H*W,C] along orientation o."""
    b, h, w, c = x.shape
    if h * w == 0:
        raise ValueError("flatten_2d: empty spatial extent")
    if o is Orientation.ROW_MAJOR_FORWARD:
        return T.reshape(x, (b, h * w, c))
    if o is Orientation.ROW_MAJOR_BACKWARD:
        return T.flip(T.reshape(x, (b, h * w, c)), axis=1)
    return T.reshape(T.permute(x, (0, 2, 1, 3)), (b, w * h, c))


def unflatten_2d(seq: Tensor, o: Orientation, h: int, w: int) -> Tensor:
    """Inverse of flatten_2d."""
    b, l, c = seq.shape
    if o is Orientation.ROW_MAJOR_FORWARD:
        return T.reshape(seq, (b, h, w, c))
    if o is Orientation.ROW_MAJOR_BACKWARD:
        return T.reshape(T.flip(seq, axis=1), (b, h, w, c))
    return T.permute(T.reshape(seq, (b, w, h, c)), (0, 2, 1, 3))


@dataclass
class TSMambaConfig:
    num_layers: int = 4
    widths: tuple = (16, 32, 64, 128)
    d_state: int = 8
    mlp_ratio: int = 2
    image_size: tuple = (64, 64)
    in_channels: int = 1

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.image_size = tuple(self.image_size)
        if len(self.widths) != self.num_layers:
            raise ValueError(f"widths {self.widths} must have length num_layers={self.num_layers}")
        h, w = self.image_size
        d = 2 ** self.num_layers
        if h % d or w % d:
            raise ValueError(f"image size {h}x{w} not divisible by 2^{self.num_layers}")


def _param(rng, shape, scale, dtype):
    return Tensor((rng.standard_normal(shape) * scale).astype(dtype), requires_grad=True)


class ScanParams:
    """Per-orientation selective-scan parameters for a d-channel sequence."""

    def __init__(self, channels: int, d_state: int, rng: np.random.Generator, dtype):
        c, n = channels, d_state
        self.w_delta = _param(rng, (c, c), c ** -0.5, dtype)
        # softplus(b_delta) lands in [1e-3, 0.1] (log-uniform), the usual
        # stable step-size range for selective scans
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(0.1), size=c))
        self.b_delta = Tensor(np.log(np.expm1(dt)).astype(dtype), requires_grad=True)
        self.w_b = _param(rng, (c, n), c ** -0.5, dtype)
        self.w_c = _param(rng, (c, n), c ** -0.5, dtype)
        self.log_a = Tensor(np.broadcast_to(np.log(np.arange(1, n + 1, dtype=np.float64)),
                                            (c, n)).astype(dtype).copy(), requires_grad=True)
        self.d_skip = Tensor(np.ones(c, dtype=dtype), requires_grad=True)

    def named_params(self):
        return {"w_delta": self.w_delta, "b_delta": self.b_delta, "w_b": self.w_b,
                "w_c": self.w_c, "log_a": self.log_a, "d_skip": self.d_skip}


class SS2D:
    """Tri-orientation 2D selective scan over channels-last images.

    Each orientation flattens the image into a pixel sequence, runs the
    selective scan with its own parameters, and unflattens; results are
    averaged and passed through a channelwise output projection (zero at
    init so the surrounding residual block starts as the identity).
    """

    def __init__(self, channels: int, d_state: int, rng: np.random.Generator, dtype=np.float64):
        self.channels = channels
        self.scans = {o: ScanParams(channels, d_state, rng, dtype) for o in ORIENTATIONS}
        self.out_w = Tensor(np.zeros((channels, channels), dtype=dtype), requires_grad=True)
        self.out_b = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def _scan(self, seq: Tensor, p: ScanParams) -> Tensor:
        delta = T.softplus(T.linear(seq, p.w_delta, p.b_delta))
        bm = T.linear(seq, p.w_b)
        cm = T.linear(seq, p.w_c)
        a = T.neg(T.exp(p.log_a))
        return selective_scan_par(seq, delta, a, bm, cm, p.d_skip)

    def mix(self, x: Tensor) -> Tensor:
        """Orientation-averaged scan, before the output projection."""
        b, h, w, c = x.shape
        if c != self.channels:
            raise ValueError(f"SS2D: {c} channels, configured for {self.channels}")
        acc = None
        for o in ORIENTATIONS:
            seq = flatten_2d(x, o)
            y = unflatten_2d(self._scan(seq, self.scans[o]), o, h, w)
            acc = y if acc is None else T.add(acc, y)
        return T.scale(acc, 1.0 / 3.0)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(self.mix(x), self.out_w, self.out_b)

    def named_params(self):
        out = {}
        for o, p in self.scans.items():
            for k, v in p.named_params().items():
                out[f"{o.value}.{k}"] = v
        out["out_w"] = self.out_w
        out["out_b"] = self.out_b
        return out


class TSMambaBlock:
    """Pre-norm residual block: x + SS2D(LN(x)), then x + MLP(LN(x)).

    Operates on channels-first [B,C,H,W]; the MLP is linear->SiLU->linear
    applied per pixel over the channel axis, second linear zero-initialized.
    """

    def __init__(self, channels: int, d_state: int, mlp_ratio: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.channels = channels
        hidden = channels * mlp_ratio
        self.ln1_g = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.ss2d = SS2D(channels, d_state, rng, dtype)
        self.ln2_g = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.mlp_w1 = _param(rng, (channels, hidden), channels ** -0.5, dtype)
        self.mlp_b1 = Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        self.mlp_w2 = Tensor(np.zeros((hidden, channels), dtype=dtype), requires_grad=True)
        self.mlp_b2 = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        xl = T.permute(x, (0, 2, 3, 1))
        h = T.add(xl, self.ss2d(T.layernorm(xl, self.ln1_g, self.ln1_b)))
        m = T.linear(T.layernorm(h, self.ln2_g, self.ln2_b), self.mlp_w1, self.mlp_b1)
        m = T.linear(T.silu(m), self.mlp_w2, self.mlp_b2)
        out = T.add(h, m)
        return T.permute(out, (0, 3, 1, 2))

    def named_params(self):
        out = {"ln1_g": self.ln1_g, "ln1_b": self.ln1_b,
               "ln2_g": self.ln2_g, "ln2_b": self.ln2_b,
               "mlp_w1": self.mlp_w1, "mlp_b1": self.mlp_b1,
               "mlp_w2": self.mlp_w2, "mlp_b2": self.mlp_b2}
        for k, v in self.ss2d.named_params().items():
            out[f"ss2d.{k}"] = v
        return out


class Conv2dLayer:
    def __init__(self, cin, cout, k, stride, padding, rng, dtype=np.float64):
        self.stride, self.padding = stride, padding
        self.w = _param(rng, (cout, cin, k, k), np.sqrt(2.0 / (cin * k * k)), dtype)
        self.b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def named_params(self):
        return {"w": self.w, "b": self.b}


class Encoder:
    """Four stages of stride-2 conv (SiLU) followed by a TSMamba block.

    Returns the final latent plus each stage's feature map, highest
    resolution first, for decoder skip connections.
    """

    def __init__(self, cfg: TSMambaConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.convs = []
        self.blocks = []
        cin = cfg.in_channels
        for width in cfg.widths:
            self.convs.append(Conv2dLayer(cin, width, 3, stride=2, padding=1, rng=rng, dtype=dtype))
            self.blocks.append(TSMambaBlock(width, cfg.d_state, cfg.mlp_ratio, rng, dtype))
            cin = width

    def __call__(self, x: Tensor):
        h, w = x.shape[2], x.shape[3]
        if h % (2 ** self.cfg.num_layers) or w % (2 ** self.cfg.num_layers):
            raise ValueError(f"encoder input {h}x{w} not divisible by 2^{self.cfg.num_layers}")
        skips = []
        for conv, block in zip(self.convs, self.blocks):
            x = block(T.silu(conv(x)))
            skips.append(x)
        return x, skips

    def named_params(self):
        out = {}
        for i, (conv, block) in enumerate(zip(self.convs, self.blocks)):
            for k, v in conv.named_params().items():
                out[f"stage{i}.conv.{k}"] = v
            for k, v in block.named_params().items():
                out[f"stage{i}.block.{k}"] = v
        return out
