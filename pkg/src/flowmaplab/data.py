"""Paired-coupling generators: 2D toys, procedural textures with a lightened
degradation pipeline, negative targets, and the analytic Gaussian task.

Every generator is a pure function of its rng, so batches are bitwise
reproducible.  Pixel tasks live in [-1, 1].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class DegradeOpts:
    blur_prob: float = 0.8
    noise_std_max: float = 0.02       # gaussian branch upper bound
    shot_noise_scale: float = 0.02    # intensity-scaled branch
    quant_levels: int = 32            # compression surrogate; 0 disables
    interp_modes: tuple = ("nearest", "bilinear")
    final_blur: bool = True

    def __post_init__(self):
        if not 0.0 <= self.blur_prob <= 1.0:
            raise ValueError("blur_prob must lie in [0, 1]")


@dataclass
class PairBatch:
    x0: np.ndarray                   # (n, d) targets
    x1: np.ndarray                   # (n, d) sources, same shape
    cond: np.ndarray | None = None   # per-item condition ids
    s_down: np.ndarray | None = None
    x0_neg: np.ndarray | None = None

    def __post_init__(self):
        if self.x0.shape != self.x1.shape:
            raise ValueError("x0 and x1 must share a shape")

    def __len__(self):
        return self.x0.shape[0]


# -- 2D toys --------------------------------------------------------------


def gen_toy2d(n: int, kind: str, rng: np.random.Generator,
              sigma: float = 0.4, contraction: float = 0.5) -> PairBatch:
    """2D coupling: x1 is a contracted-plus-noised copy of x0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if kind == "two_gaussians":
        centers = np.array([[2.0, 0.0], [-2.0, 0.0]])
        which = rng.integers(0, 2, size=n)
        x0 = centers[which] + 0.5 * rng.standard_normal((n, 2))
    elif kind == "moons_pair":
        theta = rng.uniform(0.0, np.pi, size=n)
        branch = rng.integers(0, 2, size=n)
        x0 = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        x0[branch == 1] = np.stack(
            [1.0 - np.cos(theta[branch == 1]), 0.5 - np.sin(theta[branch == 1])], axis=1)
        x0 += 0.05 * rng.standard_normal((n, 2))
    else:
        raise ValueError(f"unknown 2D task {kind!r}")
    center = x0.mean(axis=0)
    x1 = (1.0 - contraction) * x0 + contraction * center \
        + sigma * rng.standard_normal((n, 2))
    return PairBatch(x0=x0, x1=x1)


def gaussian_pair(n: int, mu0, sigma0: float, mu1, sigma1: float,
                  rng: np.random.Generator) -> PairBatch:
    """Independent Gaussian endpoints, the analytic-oracle coupling."""
    if sigma0 <= 0 or sigma1 <= 0:
        raise ValueError("sigmas must be positive")
    mu0, mu1 = np.asarray(mu0, dtype=np.float64), np.asarray(mu1, dtype=np.float64)
    d = mu0.shape[0]
    x0 = mu0 + sigma0 * rng.standard_normal((n, d))
    x1 = mu1 + sigma1 * rng.standard_normal((n, d))
    return PairBatch(x0=x0, x1=x1)


# -- procedural textures --------------------------------------------------


def gen_texture(n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Grayscale textures: 2-4 oriented sinusoids plus a step edge, in [-1, 1].

    Returns shape (n, size, size).
    """
    if size not in (8, 16, 32):
        raise ValueError("size must be one of 8, 16, 32")
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    out = np.empty((n, size, size))
    for i in range(n):
        img = np.zeros((size, size))
        n_waves = int(rng.integers(2, 5))
        for _ in range(n_waves):
            theta = rng.uniform(0.0, np.pi)
            freq = rng.uniform(0.5, 3.0) * 2.0 * np.pi / size
            phase = rng.uniform(0.0, 2.0 * np.pi)
            amp = rng.uniform(0.3, 1.0)
            img += amp * np.sin(freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
        # step edge along a random line
        theta = rng.uniform(0.0, np.pi)
        offset = rng.uniform(0.25 * size, 0.75 * size)
        edge = (np.cos(theta) * xx + np.sin(theta) * yy) > offset
        img += rng.uniform(0.2, 0.8) * np.where(edge, 1.0, -1.0)
        peak = np.abs(img).max()
        if peak > 0:
            img /= peak
        out[i] = img
    return out


# -- resampling and degradation -------------------------------------------


def _resize(img: np.ndarray, out_h: int, out_w: int, mode: str) -> np.ndarray:
    """Nearest or bilinear resize of a single grayscale image."""
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    if mode == "nearest":
        yi = np.clip(np.round(ys).astype(int), 0, in_h - 1)
        xi = np.clip(np.round(xs).astype(int), 0, in_w - 1)
        return img[np.ix_(yi, xi)]
    if mode == "bilinear":
        y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
        y1 = np.clip(y0 + 1, 0, in_h - 1)
        x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
        x1 = np.clip(x0 + 1, 0, in_w - 1)
        wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
        wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
        top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
        bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
        return top * (1 - wy) + bot * wy
    raise ValueError(f"unknown interpolation mode {mode!r}")


_BLUR_KERNEL = np.array([1.0, 2.0, 1.0]) / 4.0  # 3x3 binomial, separable


def _blur(img: np.ndarray) -> np.ndarray:
    pad = np.pad(img, 1, mode="edge")
    tmp = (pad[:, :-2] * _BLUR_KERNEL[0] + pad[:, 1:-1] * _BLUR_KERNEL[1]
           + pad[:, 2:] * _BLUR_KERNEL[2])
    return (tmp[:-2] * _BLUR_KERNEL[0] + tmp[1:-1] * _BLUR_KERNEL[1]
            + tmp[2:] * _BLUR_KERNEL[2])


def _quantize(img: np.ndarray, levels: int) -> np.ndarray:
    """Uniform quantization on [-1, 1]; the compression surrogate."""
    if levels <= 1:
        return img
    scaled = (np.clip(img, -1.0, 1.0) + 1.0) / 2.0 * (levels - 1)
    return np.round(scaled) / (levels - 1) * 2.0 - 1.0


def degrade(hr: np.ndarray, s_down: float, opts: DegradeOpts,
            rng: np.random.Generator) -> np.ndarray:
    """Blur -> downscale -> noise -> quantize -> resize-back -> blur -> clamp.

    ``hr`` is one (h, w) image in [-1, 1]; the output has the same shape.
    """
    if not 0.0 < s_down <= 1.0:
        raise ValueError("s_down must lie in (0, 1]")
    hr = np.asarray(hr, dtype=np.float64)
    h, w = hr.shape
    img = hr

    if opts.blur_prob > 0.0 and rng.random() < opts.blur_prob:
        img = _blur(img)

    lo_h = max(1, int(round(h * s_down)))
    lo_w = max(1, int(round(w * s_down)))
    mode_down = opts.interp_modes[int(rng.integers(0, len(opts.interp_modes)))]
    img = _resize(img, lo_h, lo_w, mode_down)

    if opts.noise_std_max > 0.0 or opts.shot_noise_scale > 0.0:
        if rng.random() < 0.5:
            std = rng.uniform(0.0, opts.noise_std_max)
            img = img + std * rng.standard_normal(img.shape)
        else:
            local = np.sqrt(np.abs(img) + 1.0)
            img = img + opts.shot_noise_scale * local * rng.standard_normal(img.shape)

    if opts.quant_levels:
        img = _quantize(img, opts.quant_levels)

    mode_up = opts.interp_modes[int(rng.integers(0, len(opts.interp_modes)))]
    img = _resize(img, h, w, mode_up)
    if opts.final_blur:
        img = _blur(img)
    return np.clip(img, -1.0, 1.0)


def make_negative_target(hr: np.ndarray, s_down: float, rng: np.random.Generator,
                         opts: DegradeOpts) -> np.ndarray:
    """A mildly degraded copy of hr: same pipeline, downscale drawn from
    U(s_down, 1) so it stays less degraded than the source built at s_down."""
    if not 0.0 < s_down <= 1.0:
        raise ValueError("s_down must lie in (0, 1]")
    s_neg = rng.uniform(s_down, 1.0)
    return degrade(hr, s_neg, opts, rng)


def sr_pair_batch(n: int, size: int, opts: DegradeOpts, rng: np.random.Generator,
                  s_down: float | None = None, with_negative: bool = False) -> PairBatch:
    """Texture SR coupling: x0 clean, x1 degraded, flattened to vectors."""
    hrs = gen_texture(n, size, rng)
    x1 = np.empty_like(hrs)
    s_downs = np.empty(n)
    x0_neg = np.empty_like(hrs) if with_negative else None
    for i in range(n):
        sd = rng.uniform(0.1, 1.0) if s_down is None else s_down
        s_downs[i] = sd
        x1[i] = degrade(hrs[i], sd, opts, rng)
        if with_negative:
            x0_neg[i] = make_negative_target(hrs[i], sd, rng, opts)
    flat = lambda a: a.reshape(n, -1)
    return PairBatch(x0=flat(hrs), x1=flat(x1), s_down=s_downs,
                     x0_neg=None if x0_neg is None else flat(x0_neg))


# -- corpus persistence ---------------------------------------------------


def save_pgm(path, img: np.ndarray) -> None:
    """Binary PGM, maxval 255, linear map from [-1, 1]."""
    h, w = img.shape
    pix = np.clip((img + 1.0) / 2.0 * 255.0, 0.0, 255.0).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(fh.readline())
        raw = np.frombuffer(fh.read(h * w), dtype=np.uint8).reshape(h, w)
    return raw.astype(np.float64) / maxval * 2.0 - 1.0


def dump_corpus(directory, n: int, size: int, opts: DegradeOpts, seed: int) -> None:
    """Write n HR/LR pairs plus a manifest (index, seed, s_down)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(n):
        item_seed = seed + i
        rng = np.random.default_rng(item_seed)
        hr = gen_texture(1, size, rng)[0]
        sd = rng.uniform(0.1, 1.0)
        lr = degrade(hr, sd, opts, rng)
        save_pgm(directory / f"hr_{i:05d}.pgm", hr)
        save_pgm(directory / f"lr_{i:05d}.pgm", lr)
        rows.append((i, item_seed, sd))
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "seed", "s_down"])
        for idx, s, sd in rows:
            writer.writerow([idx, s, f"{sd:.8f}"])
