"""Residual CNN classifier operating on reconstruction-residual images."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tsmamba import Conv2dLayer, _param
from . import checkpoint as ckpt

log = logging.getLogger(__name__)

HEAD_PREFIX = "head."


@dataclass
class ClassifierConfig:
    in_channels: int = 1
    num_classes: int = 2
    base_width: int = 16
    blocks_per_stage: tuple = (2, 2, 2, 2)

    @staticmethod
    def paper_scale(in_channels=1, num_classes=2):
        """18-layer layout: four stages of two basic blocks at 64..512 wide."""
        return ClassifierConfig(in_channels, num_classes, base_width=64)


class BasicBlock:
    """Two 3x3 convs with an identity (or 1x1 projection) shortcut; the
    second conv is zero-initialized so the block starts as the identity."""

    def __init__(self, cin, cout, stride, rng, dtype=np.float64):
        self.conv1 = Conv2dLayer(cin, cout, 3, stride=stride, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2dLayer(cout, cout, 3, stride=1, padding=1, rng=rng, dtype=dtype)
        self.conv2.w.data[:] = 0.0
        if stride != 1 or cin != cout:
            self.proj = Conv2dLayer(cin, cout, 1, stride=stride, padding=0, rng=rng, dtype=dtype)
        else:
            self.proj = None

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv2(T.relu(self.conv1(x)))
        shortcut = self.proj(x) if self.proj is not None else x
        return T.relu(T.add(h, shortcut))

    def named_params(self):
        out = {}
        for k, v in self.conv1.named_params().items():
            out[f"conv1.{k}"] = v
        for k, v in self.conv2.named_params().items():
            out[f"conv2.{k}"] = v
        if self.proj is not None:
            for k, v in self.proj.named_params().items():
                out[f"proj.{k}"] = v
        return out


class ClassifierModel:
    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator | int = 0, dtype=np.float64):
        if isinstance(rng, int):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.dtype = dtype
        self.stem = Conv2dLayer(cfg.in_channels, cfg.base_width, 3, stride=1, padding=1,
                                rng=rng, dtype=dtype)
        self.blocks = []
        cin = cfg.base_width
        for s, nblocks in enumerate(cfg.blocks_per_stage):
            width = cfg.base_width * (2 ** s)
            for b in range(nblocks):
                stride = 2 if (b == 0 and s > 0) else 1
                self.blocks.append(BasicBlock(cin, width, stride, rng, dtype))
                cin = width
        self._rng_head = rng
        self.head_w = Tensor(np.zeros((cin, cfg.num_classes), dtype=dtype), requires_grad=True)
        self.head_b = Tensor(np.zeros(cfg.num_classes, dtype=dtype), requires_grad=True)

    def __call__(self, r: Tensor) -> Tensor:
        """Residual images [B,C,H,W] -> logits [B,num_classes]."""
        if r.shape[1] != self.cfg.in_channels:
            raise ValueError(f"classify: input {r.shape} has wrong channel count, "
                             f"expected {self.cfg.in_channels}")
        x = T.relu(self.stem(r))
        for block in self.blocks:
            x = block(x)
        pooled = T.mean(x, axis=(2, 3))
        return T.linear(pooled, self.head_w, self.head_b)

    def named_params(self):
        out = {}
        for k, v in self.stem.named_params().items():
            out[f"stem.{k}"] = v
        for i, block in enumerate(self.blocks):
            for k, v in block.named_params().items():
                out[f"block{i}.{k}"] = v
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out


def predict(model: ClassifierModel, r: Tensor) -> np.ndarray:
    """Argmax class per sample; ties break toward the lowest index."""
    with T.no_grad():
        logits = model(r)
    return np.argmax(logits.data, axis=1)


def load_weights(model: ClassifierModel, path) -> ClassifierModel:
    """Restore model weights from a checkpoint.

    Head tensors with mismatched shapes (e.g. a different class count) are
    left at their fresh initialization with a logged notice; any other
    name/shape mismatch is an error listing the offending tensors.
    """
    meta, tensors = ckpt.load(path)
    params = model.named_params()
    bad = []
    for name, p in params.items():
        is_head = name.startswith(HEAD_PREFIX)
        if name not in tensors:
            if not is_head:
                bad.append(f"missing {name}")
            continue
        if tensors[name].shape != p.data.shape:
            if is_head:
                log.info("load_weights: head tensor %s shape %s != %s, keeping fresh init",
                         name, tensors[name].shape, p.data.shape)
                continue
            bad.append(f"shape mismatch {name}: {tensors[name].shape} vs {p.data.shape}")
    for name in tensors:
        if name not in params and not name.startswith(HEAD_PREFIX):
            bad.append(f"unexpected {name}")
    if bad:
        raise ValueError("load_weights: incompatible checkpoint: " + "; ".join(sorted(bad)))
    for name, p in params.items():
        if name in tensors and tensors[name].shape == p.data.shape:
            p.data = tensors[name].astype(p.data.dtype)
    return model
