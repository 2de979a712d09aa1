"""
Dense linear algebra helpers and the seeded random generator used by every other module.

Matrices are ``numpy.ndarray`` objects of dtype float64 stored in row-major (C) order.
Random streams come from ``numpy.random.Generator`` over the PCG64 bit generator, which
produces the same stream for the same seed on every platform.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.typing import ArrayLike

from .exceptions import DimensionError, DomainError, NonFiniteError

DEFAULT_EPSILON = 1e-12


def as_matrix(data: ArrayLike, name: str = "matrix") -> np.ndarray:
    """
    Converts the input to a finite 2-D float64 array in row-major order.

    Parameters
    ----------
    data : ArrayLike
        Values to convert.
    name : str
        Name used in error messages.
        Defaults to ``"matrix"``.

    Returns
    -------
    np.ndarray
        A C-contiguous float64 array with two dimensions.
    """
    matrix = np.ascontiguousarray(data, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionError(
            f"{name} must be two-dimensional, got shape {matrix.shape}."
        )
    ensure_finite(matrix, name)
    return matrix


def ensure_finite(values: np.ndarray, name: str = "array") -> None:
    """
    Raises a :class:`~spherelib.exceptions.NonFiniteError` if ``values`` holds NaN or Inf.
    """
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{name} contains non-finite values.")


def make_rng(seed: int) -> np.random.Generator:
    """
    Creates the reproducible generator used throughout spherelib.

    Parameters
    ----------
    seed : int
        Non-negative 64-bit seed.

    Returns
    -------
    np.random.Generator
        Generator backed by PCG64.
    """
    if seed < 0 or seed >= 2**64:
        raise DomainError(f"Seed must be a 64-bit unsigned integer, got {seed}.")
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """
    Computes the matrix product ``a @ b``.

    Parameters
    ----------
    a : ArrayLike
        Left operand of shape (n, p).
    b : ArrayLike
        Right operand of shape (p, q).

    Returns
    -------
    np.ndarray
        Product of shape (n, q).
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"Cannot multiply a matrix of shape {a.shape} by a matrix of shape {b.shape}."
        )
    product = a @ b
    ensure_finite(product, "matrix product")
    return product


def column_norms(m: ArrayLike) -> np.ndarray:
    """
    Returns the Euclidean norm of every column of ``m``.
    """
    return np.linalg.norm(as_matrix(m), axis=0)


def normalize_columns(m: ArrayLike, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """
    Scales every column of ``m`` to unit Euclidean norm.

    Columns whose norm is below ``epsilon`` are replaced by the first standard basis
    vector so that a collapsed class weight never produces NaN.

    Parameters
    ----------
    m : ArrayLike
        Matrix whose columns are normalized.
    epsilon : float
        Norm under which a column is considered degenerate.
        Defaults to ``1e-12``.

    Returns
    -------
    np.ndarray
        New matrix with unit-norm columns.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}.")
    matrix = as_matrix(m)
    norms = np.linalg.norm(matrix, axis=0)
    degenerate = norms < epsilon
    normalized = matrix / np.where(degenerate, 1.0, norms)
    if np.any(degenerate):
        normalized[:, degenerate] = 0.0
        normalized[0, degenerate] = 1.0
    return normalized


def numerical_gradient(
    function: Callable[[np.ndarray], float], point: ArrayLike, step: float = 1e-6
) -> np.ndarray:
    """
    Estimates the gradient of a scalar function by central finite differences.

    Parameters
    ----------
    function : Callable[[np.ndarray], float]
        Scalar function of an array. It receives a perturbed copy of ``point``.
    point : ArrayLike
        Location at which the gradient is estimated.
    step : float
        Perturbation applied to each coordinate.
        Defaults to ``1e-6``.

    Returns
    -------
    np.ndarray
        Gradient estimate with the shape of ``point``.
    """
    point = np.array(point, dtype=np.float64)
    gradient = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        original = point[index]
        point[index] = original + step
        upper = function(point.copy())
        point[index] = original - step
        lower = function(point.copy())
        point[index] = original
        gradient[index] = (upper - lower) / (2 * step)
    return gradient
