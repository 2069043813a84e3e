"""Reference image quality metrics (evaluation only, not differentiable)."""

from __future__ import annotations

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(pred: np.ndarray, target: np.ndarray, max_val: float = 1.0) -> float:
    """10*log10(max^2 / MSE); +inf for identical images."""
    pred = np.asarray(pred, float)
    target = np.asarray(target, float)
    if pred.shape != target.shape:
        raise ValueError(f"psnr shape mismatch: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(max_val * max_val / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """(3, H, W) -> (H, W) luma; (H, W) passes through."""
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[0] == 3:
        return np.tensordot(_LUMA, image, axes=1)
    raise ValueError(f"expected (3,H,W) or (H,W), got {image.shape}")


def _window_views(img: np.ndarray, size: int) -> np.ndarray:
    H, W = img.shape
    s0, s1 = img.strides
    return np.lib.stride_tricks.as_strided(
        img, shape=(H - size + 1, W - size + 1, size, size),
        strides=(s0, s1, s0, s1), writeable=False,
    )


def ssim(pred: np.ndarray, target: np.ndarray, max_val: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window, standard constants."""
    x = to_grayscale(np.asarray(pred, float))
    y = to_grayscale(np.asarray(target, float))
    if x.shape != y.shape:
        raise ValueError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    xv = _window_views(x, SSIM_WINDOW)
    yv = _window_views(y, SSIM_WINDOW)
    mu_x = np.tensordot(xv, w, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(yv, w, axes=([2, 3], [0, 1]))
    xx = np.tensordot(xv * xv, w, axes=([2, 3], [0, 1])) - mu_x * mu_x
    yy = np.tensordot(yv * yv, w, axes=([2, 3], [0, 1])) - mu_y * mu_y
    xy = np.tensordot(xv * yv, w, axes=([2, 3], [0, 1])) - mu_x * mu_y
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    s = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    )
    return float(s.mean())
