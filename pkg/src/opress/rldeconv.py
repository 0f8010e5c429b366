"""Richardson-Lucy axial deconvolution, the classical baseline."""

from __future__ import annotations

import numpy as np

from .exceptions import InvariantViolation
from .imagecore import as_array, like
from .simulate import Psf, convolve_axial

DEFAULT_ITERATIONS = 30


def rl_iterate(observed: np.ndarray, estimate: np.ndarray, psf: Psf, epsilon=1e-12):
    """One multiplicative update ``x * H^T(y / max(H x, eps))`` along axis 0."""
    blurred = convolve_axial(estimate, psf, axis=0)
    ratio = observed / np.maximum(blurred, epsilon)
    return estimate * convolve_axial(ratio, psf, axis=0, adjoint=True)


def richardson_lucy(frame, psf: Psf, iterations=DEFAULT_ITERATIONS, epsilon=1e-12,
                    return_iterates=False):
    """Deconvolve every A-line of ``frame`` starting from the observation itself.

    With ``return_iterates`` the list of all iterates (excluding the start)
    is returned alongside the result.
    """
    if iterations < 1:
        raise InvariantViolation("iterations must be >= 1")
    if not epsilon > 0:
        raise InvariantViolation("epsilon must be positive")
    y = as_array(frame)
    x = y.copy()
    iterates = []
    for _ in range(iterations):
        x = rl_iterate(y, x, psf, epsilon)
        if return_iterates:
            iterates.append(x)
    out = like(frame, x)
    return (out, iterates) if return_iterates else out


def rl_poisson_objective(frame_obs, frame_est, psf: Psf, epsilon=1e-12) -> float:
    """Poisson negative log-likelihood (up to constants) ``sum(Hx - y log(Hx + eps))``."""
    y = as_array(frame_obs)
    x = as_array(frame_est)
    if np.any(x < 0):
        raise InvariantViolation("estimates must be non-negative")
    hx = convolve_axial(x, psf, axis=0)
    return float(np.sum(hx - y * np.log(hx + epsilon)))
