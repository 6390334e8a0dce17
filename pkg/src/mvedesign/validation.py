"""Input validation helpers shared across the package."""

import numpy as np


def as_float_array(x, name: str, shape=None) -> np.ndarray:
    """Coerce to a float64 array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_unit_vector(v, name: str, tol: float = 1e-8) -> np.ndarray:
    vec = as_float_array(v, name, shape=(3,))
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name} must be a unit vector (|{name}| = {norm:.6g})")
    return vec


def check_rotation_matrix(R, name: str = "R", tol: float = 1e-9) -> np.ndarray:
    mat = as_float_array(R, name, shape=(3, 3))
    err = np.max(np.abs(mat.T @ mat - np.eye(3)))
    if err > tol:
        raise ValueError(f"{name} is not orthogonal (max |R^T R - I| = {err:.3g})")
    det = float(np.linalg.det(mat))
    if abs(det - 1.0) > max(tol, 1e-9):
        raise ValueError(f"{name} is not a proper rotation (det = {det:.6g})")
    return mat


def check_in_unit_interval(values: np.ndarray, name: str, tol: float = 1e-9) -> None:
    """Reject feature values outside [0, 1]; selectors require scaled inputs."""
    lo = float(np.min(values))
    hi = float(np.max(values))
    if lo < -tol or hi > 1.0 + tol:
        raise ValueError(
            f"{name} must be min-max normalized to [0, 1] before use "
            f"(observed range [{lo:.6g}, {hi:.6g}])"
        )
