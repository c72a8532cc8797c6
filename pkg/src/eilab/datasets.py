"""Synthetic signal families that are exactly invariant to cyclic shifts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linops import (LinearOperator, load_operator, make_mask_operator, random_mask,
                     save_operator, window_mask)
from .tensor_io import load_tensor, save_tensor


@dataclass
class Dataset:
    """Signals ``x`` (flattened, may be absent) and measurements ``y = A x + noise``."""

    measurements: np.ndarray
    operator: LinearOperator
    signals: np.ndarray | None = None
    signal_shape: tuple[int, ...] = ()
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.measurements.shape[0]

    def split(self, part: str):
        idx = self.train_idx if part == "train" else self.test_idx
        x = None if self.signals is None else self.signals[idx]
        return self.measurements[idx], x

    def without_signals(self) -> "Dataset":
        return Dataset(self.measurements, self.operator, None, self.signal_shape,
                       self.train_idx, self.test_idx, dict(self.meta))


def split_indices(count: int, train_fraction: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """First ``round(train_fraction * count)`` samples train, the remainder test."""
    n_train = int(round(train_fraction * count))
    if count > 1:
        n_train = min(max(n_train, 1), count - 1)
    return np.arange(n_train), np.arange(n_train, count)


def triangle(n: int) -> np.ndarray:
    """Tent ``1 - |2i/(n-1) - 1|`` with peak 1 at the center."""
    i = np.arange(n)
    return 1.0 - np.abs(2.0 * i / (n - 1) - 1.0)


def triangle_signals(n: int, count: int, shift_invariant: bool, scale_range=(0.2, 1.0),
                     rng: np.random.Generator | None = None, shifts=None) -> np.ndarray:
    """``s * roll(tent, g)`` with ``s ~ U(scale_range)`` and, if shift invariant,
    ``g ~ U{0..n-1}``.

    Scales are drawn before shifts, so the two variants share scales for a
    given generator state.  ``shifts`` overrides the sampled shifts.
    """
    if n < 8 or count < 1:
        raise ValueError("need n >= 8 and count >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = scale_range
    scales = rng.uniform(lo, hi, size=count) if hi > lo else np.full(count, float(lo))
    if shifts is None:
        shifts = rng.integers(0, n, size=count) if shift_invariant else np.zeros(count, dtype=int)
    base = triangle(n)
    return np.stack([s * np.roll(base, int(g)) for s, g in zip(scales, shifts)])


def box_texture_signals(H: int, W: int, count: int, rng: np.random.Generator,
                        n_boxes: int = 3, size_range=None, intensity_range=(0.0, 1.0)) -> np.ndarray:
    """Sum of ``n_boxes`` cyclically wrapped rectangles, clipped to [0, 1].

    Positions are uniform over the torus, so the family is exactly invariant
    to 2-d cyclic shifts.  Returns images flattened to ``(count, H*W)``.
    """
    if H < 8 or W < 8:
        raise ValueError("box textures need H, W >= 8")
    if size_range is None:
        size_range = (2, max(3, min(H, W) // 2))
    lo, hi = size_range
    out = np.zeros((count, H, W))
    rr = np.arange(H)
    cc = np.arange(W)
    for k in range(count):
        img = np.zeros((H, W))
        for _ in range(n_boxes):
            r0 = rng.integers(0, H)
            c0 = rng.integers(0, W)
            h = rng.integers(lo, hi + 1)
            w = rng.integers(lo, hi + 1)
            a = rng.uniform(*intensity_range)
            rows = ((rr - r0) % H) < h
            cols = ((cc - c0) % W) < w
            img += a * np.outer(rows, cols)
        out[k] = np.clip(img, 0.0, 1.0)
    return out.reshape(count, H * W)


def make_dataset(signals: np.ndarray, A: LinearOperator, signal_shape, noise_std: float = 0.0,
                 seed: int = 0, train_fraction: float = 0.9, meta=None) -> Dataset:
    rng = np.random.default_rng([seed, 99])
    y = A.measure(signals, noise_std, rng)
    tr, te = split_indices(signals.shape[0], train_fraction)
    meta = dict(meta or {})
    meta.update(seed=seed, noise_std=noise_std)
    return Dataset(y, A, signals, tuple(signal_shape), tr, te, meta)


def gen_triangle_dataset(n: int, count: int, shift_invariant: bool, scale_range=(0.2, 1.0),
                         seed: int = 0, A: LinearOperator | None = None,
                         drop_fraction: float = 0.25, noise_std: float = 0.0) -> Dataset:
    """Triangle family measured through a centered contiguous-window mask by default."""
    x = triangle_signals(n, count, shift_invariant, scale_range, np.random.default_rng(seed))
    if A is None:
        A = make_mask_operator(window_mask(n, drop_fraction))
    family = "triangle-shift" if shift_invariant else "triangle"
    return make_dataset(x, A, (n,), noise_std, seed,
                        meta={"family": family, "scale_range": list(scale_range)})


def gen_box_texture_dataset(H: int, W: int, count: int, seed: int = 0,
                            A: LinearOperator | None = None, drop_fraction: float = 0.3,
                            noise_std: float = 0.0, **kw) -> Dataset:
    """Box textures measured through a random pixel mask by default."""
    x = box_texture_signals(H, W, count, np.random.default_rng(seed), **kw)
    if A is None:
        A = make_mask_operator(random_mask(H * W, drop_fraction, np.random.default_rng([seed, 7])))
    return make_dataset(x, A, (H, W), noise_std, seed, meta={"family": "box2d"})


# -- directory format ----------------------------------------------------------

def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_operator(out / "operator.txt", ds.operator)
    save_tensor(out / "measurements.txt", ds.measurements)
    if ds.signals is not None:
        save_tensor(out / "signals.txt", ds.signals)
    meta = dict(ds.meta)
    meta["signal_shape"] = list(ds.signal_shape)
    meta["train"] = [int(i) for i in ds.train_idx]
    meta["test"] = [int(i) for i in ds.test_idx]
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_dataset(data_dir) -> Dataset:
    d = Path(data_dir)
    A = load_operator(d / "operator.txt")
    y = load_tensor(d / "measurements.txt")
    x = load_tensor(d / "signals.txt") if (d / "signals.txt").exists() else None
    meta = json.loads((d / "dataset.json").read_text())
    shape = tuple(meta.pop("signal_shape"))
    tr = np.array(meta.pop("train"), dtype=int)
    te = np.array(meta.pop("test"), dtype=int)
    if y.ndim == 1:
        y = y.reshape(1, -1)
    if x is not None and x.ndim == 1:
        x = x.reshape(1, -1)
    return Dataset(y, A, x, shape, tr, te, meta)
