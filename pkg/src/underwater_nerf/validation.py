"""Input validation helpers shared by the library and the estimator."""

import numpy as np


def check_image(image, name="image", allow_batch=False):
    """Return ``image`` as a float64 array of shape (H, W, 3) with values in [0, 1].

    With ``allow_batch`` a leading batch axis is also accepted.
    """
    arr = np.asarray(image, dtype=np.float64)
    ndim_ok = arr.ndim == 3 or (allow_batch and arr.ndim == 4)
    if not ndim_ok or arr.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(
            f"{name} values must lie in [0, 1], got [{arr.min():.4g}, {arr.max():.4g}]"
        )
    return arr


def check_vector(value, size, name, nonnegative=False):
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (size,):
        raise ValueError(f"{name} must have {size} entries, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if nonnegative and np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative, got {arr}")
    return arr


def check_rotation(rotation, atol=1e-6):
    R = np.asarray(rotation, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise ValueError(f"rotation must be a finite 3x3 matrix, got shape {R.shape}")
    if not np.allclose(R.T @ R, np.eye(3), atol=atol):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > atol:
        raise ValueError("rotation determinant must be +1")
    return R


def check_positive_int(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def check_divisible(height, width, divisor, what):
    if height % divisor or width % divisor:
        raise ValueError(
            f"{what} needs image sides divisible by {divisor}, got {height}x{width}; "
            f"pad the image to a multiple of {divisor}"
        )


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
