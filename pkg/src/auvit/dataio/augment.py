"""Training-time image augmentation: horizontal flip, grayscale, Gaussian blur."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import NoImage

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugmentPolicy:
    flip_p: float = 0.5
    gray_p: float = 0.2
    blur_p: float = 0.5
    blur_sigma: tuple = (0.1, 2.0)
    enabled: bool = True


def hflip(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image[..., ::-1])


def grayscale(image: np.ndarray) -> np.ndarray:
    gray = np.tensordot(_LUMA, image, axes=(0, 0))
    return np.clip(np.broadcast_to(gray, image.shape), 0.0, 1.0).copy()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    out = gaussian_filter(image, sigma=(0.0, sigma, sigma), mode="reflect")
    return np.clip(out, 0.0, 1.0)


def augment(sample, rng: np.random.Generator, policy: AugmentPolicy = AugmentPolicy()):
    """Return a randomly augmented copy of ``sample``; labels are untouched.

    Four random numbers are drawn per call whatever the outcome, so the RNG
    stream advances identically for every sample.
    """
    if sample.image is None:
        raise NoImage(f"{sample.source or 'record'} carries a feature map, not an image")
    u_flip, u_gray, u_blur, u_sigma = rng.random(4)
    if not policy.enabled:
        return sample
    image = sample.image
    if u_flip < policy.flip_p:
        image = hflip(image)
    if u_gray < policy.gray_p:
        image = grayscale(image)
    if u_blur < policy.blur_p:
        lo, hi = policy.blur_sigma
        image = gaussian_blur(image, lo + (hi - lo) * u_sigma)
    return replace(sample, image=image)
