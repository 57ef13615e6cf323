"""Empirical scaling check: selective scan (linear in sequence length)
against a quadratic attention baseline, plus exact parameter counting."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .scan import random_instance, selective_scan_par, selective_scan_seq


@dataclass
class BenchRecord:
    impl: str
    n: int
    d: int
    wall_ns: int


def attention_reference(x: np.ndarray, seed: int = 0) -> np.ndarray:
    """Single-head softmax(Q K^T / sqrt(d)) V with fixed random projections.

    Forward only; exists as the quadratic-cost baseline.
    """
    n, d = x.shape
    rng = np.random.default_rng([seed, d])
    wq, wk, wv = (rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3))
    q, k, v = x @ wq, x @ wk, x @ wv
    scores = q @ k.T / np.sqrt(d)
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    return (e / e.sum(axis=-1, keepdims=True)) @ v


def _time_fn(fn, repeats: int) -> int:
    """Median wall time (ns) over `repeats` runs after one warmup; repeats
    are enlarged automatically when the timer resolution is too coarse."""
    fn()  # warmup
    while True:
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            fn()
            samples.append(time.perf_counter_ns() - t0)
        med = int(np.median(samples))
        if med >= 1000 or repeats >= 1024:
            return med
        repeats *= 4


def scaling_run(n_list, d: int = 16, repeats: int = 5, d_state: int = 8,
                impls=("scan_seq", "scan_par", "attention_ref"), seed: int = 0):
    """Time each implementation over n_list; returns (records, slopes).

    Slopes are least-squares fits of log(wall time) against log(n).
    """
    rng = np.random.default_rng(seed)
    records = []
    for n in n_list:
        arrays = random_instance(rng, n, d, d_state)
        tensors = [Tensor(a) for a in arrays]
        x_att = rng.standard_normal((n, d))
        for impl in impls:
            if impl == "scan_seq":
                def fn(): selective_scan_seq(*tensors)
            elif impl == "scan_par":
                def fn(): selective_scan_par(*tensors)
            elif impl == "attention_ref":
                def fn(): attention_reference(x_att)
            else:
                raise ValueError(f"unknown impl {impl!r}")
            with T.no_grad():
                records.append(BenchRecord(impl, n, d, _time_fn(fn, repeats)))
    slopes = {}
    for impl in impls:
        pts = [(r.n, r.wall_ns) for r in records if r.impl == impl]
        logs_n = np.log([p[0] for p in pts])
        logs_t = np.log([p[1] for p in pts])
        slopes[impl] = float(np.polyfit(logs_n, logs_t, 1)[0])
    return records, slopes


def records_csv(records) -> str:
    lines = ["impl,n,d,wall_ns"]
    lines += [f"{r.impl},{r.n},{r.d},{r.wall_ns}" for r in records]
    return "\n".join(lines) + "\n"


def param_count(model) -> tuple[int, dict[str, int]]:
    """Exact trainable-scalar count with a per-tensor breakdown."""
    breakdown = {name: int(p.data.size) for name, p in model.named_params().items()
                 if p.requires_grad}
    return sum(breakdown.values()), breakdown
