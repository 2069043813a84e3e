"""Synthetic toy degradations and procedural clean images.

Degradation kinds: "streaks" (oriented additive bright segments), "haze"
(smooth transmission field with atmospheric light), "flecks" (random
bright discs), "mixed" (streaks then haze). Everything is deterministic
given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEGRADATION_KINDS = ("streaks", "haze", "flecks", "mixed")


@dataclass
class SynthSample:
    clean: np.ndarray     # (3, H, W) in [0, 1]
    degraded: np.ndarray  # (3, H, W) in [0, 1]
    kind: str
    severity: float
    seed: int


def _smooth_field(rng: np.random.Generator, H: int, W: int, cells: int = 4) -> np.ndarray:
    """Bilinearly upsampled low-res noise in [0, 1]."""
    coarse = rng.uniform(0.0, 1.0, size=(cells + 1, cells + 1))
    yi = np.linspace(0, cells, H)
    xi = np.linspace(0, cells, W)
    y0 = np.clip(yi.astype(int), 0, cells - 1)
    x0 = np.clip(xi.astype(int), 0, cells - 1)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    c00 = coarse[y0][:, x0]
    c01 = coarse[y0][:, x0 + 1]
    c10 = coarse[y0 + 1][:, x0]
    c11 = coarse[y0 + 1][:, x0 + 1]
    return (c00 * (1 - fy) * (1 - fx) + c01 * (1 - fy) * fx
            + c10 * fy * (1 - fx) + c11 * fy * fx)


def make_clean_image(seed: int, H: int, W: int) -> np.ndarray:
    """Procedural clean image: smooth color gradient plus soft shapes."""
    rng = np.random.default_rng(seed)
    img = np.empty((3, H, W))
    for c in range(3):
        img[c] = 0.15 + 0.7 * _smooth_field(rng, H, W, cells=3)
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.1, 0.9, size=3)
        if rng.random() < 0.5:
            cy, cx = rng.uniform(0, H), rng.uniform(0, W)
            r = rng.uniform(0.08, 0.3) * min(H, W)
            mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        else:
            y0, x0 = rng.integers(0, H), rng.integers(0, W)
            h = int(rng.uniform(0.1, 0.4) * H)
            w = int(rng.uniform(0.1, 0.4) * W)
            mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        alpha = rng.uniform(0.5, 0.9)
        img[:, mask] = (1 - alpha) * img[:, mask] + alpha * color[:, None]
    return np.clip(img, 0.0, 1.0)


def _apply_streaks(img: np.ndarray, severity: float, rng: np.random.Generator) -> np.ndarray:
    _, H, W = img.shape
    out = img.copy()
    canvas = np.zeros((H, W))
    n = int(round(severity * 0.06 * H * W / max(8, min(H, W)) * 8))
    base_angle = rng.uniform(-0.5, 0.5) + np.pi / 2  # roughly vertical rain
    for _ in range(max(1, n)):
        y = rng.uniform(0, H)
        x = rng.uniform(0, W)
        angle = base_angle + rng.normal(0, 0.08)
        length = rng.uniform(0.1, 0.35) * min(H, W)
        steps = max(2, int(length))
        t = np.linspace(0, length, steps)
        ys = np.clip((y + t * np.sin(angle)).astype(int), 0, H - 1)
        xs = np.clip((x + t * np.cos(angle)).astype(int), 0, W - 1)
        canvas[ys, xs] = np.maximum(canvas[ys, xs], rng.uniform(0.4, 1.0))
    out += severity * 0.8 * canvas[None, :, :]
    return np.clip(out, 0.0, 1.0)


def _apply_haze(img: np.ndarray, severity: float, rng: np.random.Generator) -> np.ndarray:
    _, H, W = img.shape
    field = _smooth_field(rng, H, W, cells=3)
    # transmission in [1 - severity, 1 - 0.4*severity]
    t = 1.0 - severity * (0.4 + 0.6 * field)
    airlight = rng.uniform(0.8, 0.95)
    out = img * t[None, :, :] + airlight * (1.0 - t[None, :, :])
    return np.clip(out, 0.0, 1.0)


def _apply_flecks(img: np.ndarray, severity: float, rng: np.random.Generator) -> np.ndarray:
    _, H, W = img.shape
    out = img.copy()
    yy, xx = np.mgrid[0:H, 0:W]
    n = max(1, int(round(severity * 0.002 * H * W)))
    for _ in range(n):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        r = rng.uniform(1.0, 3.0)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        bright = rng.uniform(0.7, 1.0)
        out[:, mask] = (1 - severity) * out[:, mask] + severity * bright
    return np.clip(out, 0.0, 1.0)


def synth_degrade(clean: np.ndarray, kind: str, severity: float,
                  seed: int) -> SynthSample:
    if kind not in DEGRADATION_KINDS:
        raise ValueError(f"unknown degradation kind {kind!r}")
    if not 0.0 <= severity <= 1.0:
        raise ValueError("severity must be in [0, 1]")
    clean = np.asarray(clean, float)
    if severity == 0.0:
        return SynthSample(clean, clean.copy(), kind, severity, seed)
    rng = np.random.default_rng(seed)
    if kind == "streaks":
        degraded = _apply_streaks(clean, severity, rng)
    elif kind == "haze":
        degraded = _apply_haze(clean, severity, rng)
    elif kind == "flecks":
        degraded = _apply_flecks(clean, severity, rng)
    else:  # mixed: streaks first, haze over them
        degraded = _apply_haze(_apply_streaks(clean, severity, rng), severity, rng)
    return SynthSample(clean, degraded, kind, severity, seed)


def make_dataset(n: int, H: int, W: int, kinds: tuple[str, ...],
                 severity: tuple[float, float], seed: int) -> list[SynthSample]:
    """Deterministic sample list; sample i depends only on (seed, i)."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        kind = kinds[int(rng.integers(0, len(kinds)))]
        sev = float(rng.uniform(*severity))
        clean = make_clean_image(seed * 1_000_003 + 2 * i, H, W)
        samples.append(synth_degrade(clean, kind, sev, seed * 1_000_003 + 2 * i + 1))
    return samples
