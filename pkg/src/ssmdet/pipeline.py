"""Two-phase training orchestration: one-class autoencoder training,
frozen-AE residual computation, classifier training, and evaluation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import Tensor, backward
from .autoencoder import AEModel, reconstruction_loss, residual
from .classifier import ClassifierConfig, ClassifierModel
from .data import Dataset
from .metrics import ClassReport, ConfusionMatrix, confusion, kpis
from .optim import AdamState, adam_step
from .tsmamba import TSMambaConfig
from . import checkpoint as ckpt

CONFIG_KEYS = ("image_size", "channels", "widths", "d_state", "epochs_ae", "epochs_clf",
               "lr", "batch", "seed", "target_class", "num_classes", "profile",
               "clf_base_width", "dtype")


@dataclass
class Config:
    image_size: int = 64
    channels: int = 1
    widths: tuple = (16, 32, 64, 128)
    d_state: int = 8
    epochs_ae: int = 60
    epochs_clf: int = 60
    lr: float = 1e-3
    batch: int = 16
    seed: int = 0
    target_class: str = "target"
    num_classes: int = 2
    profile: str = "desk"
    clf_base_width: int = 8
    dtype: str = "f64"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.profile == "paper":
            self.epochs_ae = self.epochs_clf = 110
            self.lr = 1.5e-5
        elif self.profile != "desk":
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.dtype not in ("f32", "f64"):
            raise ValueError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64

    def ts_config(self) -> TSMambaConfig:
        return TSMambaConfig(widths=self.widths, d_state=self.d_state,
                             image_size=(self.image_size, self.image_size),
                             in_channels=self.channels)

    def clf_config(self) -> ClassifierConfig:
        return ClassifierConfig(in_channels=self.channels, num_classes=self.num_classes,
                                base_width=self.clf_base_width)

    @staticmethod
    def from_file(path) -> "Config":
        """Parse flat key=value lines; '#' starts a comment."""
        kv = {}
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                k, v = (s.strip() for s in line.split("=", 1))
                if k not in CONFIG_KEYS:
                    raise ValueError(f"{path}:{lineno}: unknown config key {k!r}")
                kv[k] = v
        out = {}
        for k, v in kv.items():
            if k == "widths":
                out[k] = tuple(int(x) for x in v.split(","))
            elif k in ("lr",):
                out[k] = float(v)
            elif k in ("target_class", "profile", "dtype"):
                out[k] = v
            else:
                out[k] = int(v)
        return Config(**out)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _check_finite(loss_value, what):
    if not np.isfinite(loss_value):
        raise FloatingPointError(f"{what}: loss became {loss_value}; training diverged")


def train_phase1(train_ds: Dataset, val_ds: Dataset, cfg: Config, log=None):
    """Train the AE on the target class only; returns (model, loss curve).

    The curve is a list of (epoch, train_loss, val_loss) rows.
    """
    if cfg.target_class not in train_ds.class_names:
        raise ValueError(f"target class {cfg.target_class!r} not in {train_ds.class_names}")
    tgt = train_ds.class_names.index(cfg.target_class)
    xs = train_ds.images[train_ds.labels == tgt].astype(cfg.np_dtype)
    xs_val = val_ds.images[val_ds.labels == tgt].astype(cfg.np_dtype)
    if not len(xs):
        raise ValueError(f"no training images for target class {cfg.target_class!r}")

    model = AEModel(cfg.ts_config(), rng=np.random.default_rng([cfg.seed, 1]),
                    dtype=cfg.np_dtype)
    params = model.named_params()
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    curve = []
    for epoch in range(1, cfg.epochs_ae + 1):
        losses = []
        for idx in _batches(len(xs), cfg.batch, rng):
            x = Tensor(xs[idx])
            loss = reconstruction_loss(x, model(x))
            _check_finite(loss.item(), "train_phase1")
            for p in params.values():
                p.zero_grad()
            backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, state)
            losses.append(loss.item())
        with T.no_grad():
            val_loss = reconstruction_loss(Tensor(xs_val), model(Tensor(xs_val))).item() \
                if len(xs_val) else float("nan")
        curve.append((epoch, float(np.mean(losses)), val_loss))
        if log:
            log("phase1 epoch %d: train %.6g val %.6g" % curve[-1])
    return model, curve


def compute_residuals(ae: AEModel, images: np.ndarray, batch: int = 32) -> np.ndarray:
    """|x - ae(x)| with the AE frozen; batched inference."""
    out = np.empty_like(images)
    with T.no_grad():
        for i in range(0, len(images), batch):
            x = Tensor(images[i:i + batch])
            out[i:i + batch] = residual(x, ae(x)).data
    return out


def train_phase2(ae: AEModel, train_ds: Dataset, val_ds: Dataset, cfg: Config, log=None):
    """Train the classifier on frozen-AE residuals.

    Returns (model, loss curve, accuracy curve); curves are rows of
    (epoch, train, val).
    """
    dt = cfg.np_dtype
    r_train = compute_residuals(ae, train_ds.images.astype(dt))
    r_val = compute_residuals(ae, val_ds.images.astype(dt))
    y_train, y_val = train_ds.labels, val_ds.labels
    if len(train_ds.class_names) != cfg.num_classes:
        raise ValueError(f"dataset has {len(train_ds.class_names)} classes, "
                         f"config expects {cfg.num_classes}")

    model = ClassifierModel(cfg.clf_config(), rng=np.random.default_rng([cfg.seed, 3]), dtype=dt)
    params = model.named_params()
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 4])
    loss_curve, acc_curve = [], []
    for epoch in range(1, cfg.epochs_clf + 1):
        losses, n_correct, n_seen = [], 0, 0
        for idx in _batches(len(r_train), cfg.batch, rng):
            x = Tensor(r_train[idx])
            logits = model(x)
            loss = T.cross_entropy(logits, y_train[idx])
            _check_finite(loss.item(), "train_phase2")
            for p in params.values():
                p.zero_grad()
            backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, state)
            losses.append(loss.item())
            n_correct += int((np.argmax(logits.data, axis=1) == y_train[idx]).sum())
            n_seen += len(idx)
        with T.no_grad():
            val_logits = model(Tensor(r_val))
            val_loss = T.cross_entropy(val_logits, y_val).item()
            val_acc = float((np.argmax(val_logits.data, axis=1) == y_val).mean())
        loss_curve.append((epoch, float(np.mean(losses)), val_loss))
        acc_curve.append((epoch, n_correct / n_seen, val_acc))
        if log:
            log("phase2 epoch %d: loss %.6g/%.6g acc %.4f/%.4f"
                % (epoch, loss_curve[-1][1], val_loss, acc_curve[-1][1], val_acc))
    return model, loss_curve, acc_curve


def evaluate(ae: AEModel, clf: ClassifierModel, ds: Dataset, cfg: Config
             ) -> tuple[ConfusionMatrix, ClassReport]:
    if len(ds) == 0:
        raise ValueError("evaluate: empty dataset")
    if len(ds.class_names) != clf.cfg.num_classes:
        raise ValueError(f"class-count mismatch: dataset has {len(ds.class_names)} classes, "
                         f"classifier has {clf.cfg.num_classes} outputs")
    res = compute_residuals(ae, ds.images.astype(cfg.np_dtype))
    preds = []
    with T.no_grad():
        for i in range(0, len(res), 64):
            preds.append(np.argmax(clf(Tensor(res[i:i + 64])).data, axis=1))
    cm = confusion(ds.labels, np.concatenate(preds), clf.cfg.num_classes)
    cm.class_names = list(ds.class_names)
    return cm, kpis(cm)


# -- persistence --------------------------------------------------------------------


def write_curve_csv(path, curve):
    lines = ["epoch,train,val"]
    for epoch, train, val in curve:
        lines.append(f"{epoch},{train!r},{val!r}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _atomic_write(path, text):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def save_model(path, model, cfg: Config, kind: str, epoch: int, loss: float):
    meta = {"kind": kind, "config": asdict_config(cfg), "epoch": epoch, "loss": loss}
    ckpt.save(path, {k: p.data for k, p in model.named_params().items()}, meta)


def asdict_config(cfg: Config) -> dict:
    d = asdict(cfg)
    d["widths"] = list(cfg.widths)
    return d


def config_from_meta(meta: dict) -> Config:
    d = dict(meta["config"])
    d["widths"] = tuple(d["widths"])
    return Config(**d)


def load_ae(path) -> tuple[AEModel, Config]:
    meta, tensors = ckpt.load(path)
    if meta.get("kind") != "ae":
        raise ckpt.CheckpointError(f"{path}: not an autoencoder checkpoint "
                                   f"(kind={meta.get('kind')!r})")
    cfg = config_from_meta(meta)
    model = AEModel(cfg.ts_config(), rng=0, dtype=cfg.np_dtype)
    _strict_load(model, tensors, path)
    return model, cfg


def load_clf(path) -> tuple[ClassifierModel, Config]:
    meta, tensors = ckpt.load(path)
    if meta.get("kind") != "clf":
        raise ckpt.CheckpointError(f"{path}: not a classifier checkpoint "
                                   f"(kind={meta.get('kind')!r})")
    cfg = config_from_meta(meta)
    model = ClassifierModel(cfg.clf_config(), rng=0, dtype=cfg.np_dtype)
    _strict_load(model, tensors, path)
    return model, cfg


def _strict_load(model, tensors, path):
    params = model.named_params()
    bad = [n for n in params if n not in tensors or tensors[n].shape != params[n].data.shape]
    bad += [n for n in tensors if n not in params]
    if bad:
        raise ckpt.CheckpointError(f"{path}: tensor mismatch: {sorted(bad)}")
    for n, p in params.items():
        p.data = tensors[n].astype(p.data.dtype)
