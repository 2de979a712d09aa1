"""
Closed-form angular mathematics: the monotone extension psi of cos(m theta), its
Chebyshev evaluation, margin widths, the binary decision rule and the lower bounds on
the smallest useful margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import brentq

from .exceptions import ConfigError, DomainError

CLAMP_TOLERANCE = 1e-12
BOUND_TOLERANCE = 1e-12


@dataclass(frozen=True)
class MarginConfig:
    """
    Margin multiplier and annealing schedule of the A-Softmax loss.

    Parameters
    ----------
    m : int
        Integer margin multiplier. ``m=1`` gives the modified softmax loss.
    lambda_start : float
        Initial weight of the plain cosine term in the target logit.
    lambda_min : float
        Floor reached by the annealed weight.
    lambda_decay : float
        Per-iteration decay rate of the annealed weight.
    """

    m: int = 4
    lambda_start: float = 1000.0
    lambda_min: float = 5.0
    lambda_decay: float = 0.1

    def __post_init__(self) -> None:
        if isinstance(self.m, bool) or not isinstance(self.m, (int, np.integer)):
            raise ConfigError("margin.m", f"must be an integer, got {self.m!r}")
        if self.m < 1:
            raise ConfigError("margin.m", f"must be at least 1, got {self.m}")
        if self.lambda_min < 0:
            raise ConfigError("margin.lambda_min", "must be non-negative")
        if self.lambda_start < self.lambda_min:
            raise ConfigError(
                "margin.lambda_start",
                f"must be at least lambda_min ({self.lambda_min}), got {self.lambda_start}",
            )
        if self.lambda_decay < 0:
            raise ConfigError("margin.lambda_decay", "must be non-negative")


class BinaryDecision(IntEnum):
    """
    Outcome of :func:`classify_binary`. ``NEITHER`` is the margin band between the two
    stringent decision regions.
    """

    NEITHER = 0
    CLASS_1 = 1
    CLASS_2 = 2


def _check_margin(m: int, minimum: int = 1) -> None:
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)):
        raise DomainError(f"The margin m must be an integer, got {m!r}.")
    if m < minimum:
        raise DomainError(f"The margin m must be at least {minimum}, got {m}.")


def _scalar_or_array(values: np.ndarray, like: ArrayLike) -> float | np.ndarray:
    if np.ndim(like) == 0:
        return float(values)
    return values


def cos_multiple(cos_theta: ArrayLike, m: int) -> float | np.ndarray:
    """
    Evaluates cos(m theta) from cos(theta) with the Chebyshev recurrence
    T_0 = 1, T_1 = c, T_{k+1} = 2c T_k - T_{k-1}.

    Parameters
    ----------
    cos_theta : ArrayLike
        Cosine(s) of the angle, in [-1, 1]. Values within ``1e-12`` outside the
        interval are clamped.
    m : int
        Angle multiplier, at least 1.

    Returns
    -------
    float or np.ndarray
        cos(m theta), with the shape of ``cos_theta``.
    """
    _check_margin(m)
    c = _clamp_cosine(cos_theta)
    previous, current = np.ones_like(c), c
    for _ in range(m - 1):
        previous, current = current, 2 * c * current - previous
    return _scalar_or_array(current, cos_theta)


def cos_multiple_derivative(cos_theta: ArrayLike, m: int) -> float | np.ndarray:
    """
    Derivative of :func:`cos_multiple` with respect to cos(theta), computed as
    m U_{m-1}(c) with the second-kind recurrence U_0 = 1, U_1 = 2c.

    Parameters
    ----------
    cos_theta : ArrayLike
        Cosine(s) of the angle, in [-1, 1].
    m : int
        Angle multiplier, at least 1.

    Returns
    -------
    float or np.ndarray
        dT_m/dc evaluated at ``cos_theta``.
    """
    _check_margin(m)
    c = _clamp_cosine(cos_theta)
    previous, current = np.zeros_like(c), np.ones_like(c)
    for _ in range(m - 1):
        previous, current = current, 2 * c * current - previous
    return _scalar_or_array(m * current, cos_theta)


def _clamp_cosine(cos_theta: ArrayLike) -> np.ndarray:
    c = np.asarray(cos_theta, dtype=np.float64)
    if np.any(np.isnan(c)) or np.any(np.abs(c) > 1 + CLAMP_TOLERANCE):
        raise DomainError("Cosine values must lie in [-1, 1].")
    return np.clip(c, -1.0, 1.0)


def segment_index(theta: ArrayLike, m: int) -> np.ndarray:
    """
    Returns the segment k with theta in [k pi/m, (k+1) pi/m], as floor(theta m / pi)
    clamped to [0, m-1].
    """
    theta = np.asarray(theta, dtype=np.float64)
    return np.clip(np.floor(theta * m / np.pi), 0, m - 1).astype(np.int64)


def psi(theta: ArrayLike, m: int) -> float | np.ndarray:
    """
    Monotonically decreasing extension of cos(m theta) to [0, pi]:
    psi(theta) = (-1)^k cos(m theta) - 2k on segment k.

    Parameters
    ----------
    theta : ArrayLike
        Angle(s) in radians, in [0, pi].
    m : int
        Margin multiplier, at least 1.

    Returns
    -------
    float or np.ndarray
        psi(theta), equal to 1 at theta = 0 and to -(2m - 1) at theta = pi.
    """
    _check_margin(m)
    angles = np.asarray(theta, dtype=np.float64)
    if np.any(np.isnan(angles)) or np.any(angles < 0) or np.any(angles > np.pi):
        raise DomainError("psi is only defined for angles in [0, pi].")
    k = segment_index(angles, m)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    values = sign * cos_multiple(np.cos(angles), m) - 2.0 * k
    return _scalar_or_array(values, theta)


def psi_derivative(theta: ArrayLike, m: int) -> float | np.ndarray:
    """
    Derivative of :func:`psi` with respect to theta, -(-1)^k m sin(m theta).
    """
    _check_margin(m)
    angles = np.asarray(theta, dtype=np.float64)
    if np.any(angles < 0) or np.any(angles > np.pi):
        raise DomainError("psi is only defined for angles in [0, pi].")
    k = segment_index(angles, m)
    sign = np.where(k % 2 == 0, 1.0, -1.0)
    return _scalar_or_array(-sign * m * np.sin(m * angles), theta)


def angular_margin(theta12: float, m: int) -> float:
    """
    Width (m - 1)/(m + 1) theta12 of the angular band separating the stringent
    decision regions of two classes whose weights are theta12 apart.

    Parameters
    ----------
    theta12 : float
        Angle between the two class weights, in (0, pi].
    m : int
        Margin multiplier, at least 2.

    Returns
    -------
    float
        Margin in radians.
    """
    _check_margin(m, minimum=2)
    if not 0 < theta12 <= np.pi:
        raise DomainError(f"theta12 must lie in (0, pi], got {theta12}.")
    return (m - 1) / (m + 1) * theta12


def classify_binary(
    x: ArrayLike, w1: ArrayLike, w2: ArrayLike, m: int
) -> BinaryDecision:
    """
    Applies the A-Softmax binary decision rule.

    A feature belongs to class 1 when cos(m theta1) > cos(theta2) with
    theta1 <= pi/m, to class 2 symmetrically, and to neither class inside the
    margin band.

    Parameters
    ----------
    x : ArrayLike
        Non-zero feature vector.
    w1, w2 : ArrayLike
        Unit-norm class weights.
    m : int
        Margin multiplier, at least 1.

    Returns
    -------
    :class:`BinaryDecision`
    """
    _check_margin(m)
    x = np.asarray(x, dtype=np.float64)
    w1 = np.asarray(w1, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    for name, w in (("w1", w1), ("w2", w2)):
        if abs(np.linalg.norm(w) - 1.0) > 1e-9:
            raise DomainError(f"{name} must have unit norm, got {np.linalg.norm(w)}.")
    norm = np.linalg.norm(x)
    if norm == 0:
        raise DomainError("Cannot classify a zero-norm feature.")
    cos1 = float(np.clip(x @ w1 / norm, -1.0, 1.0))
    cos2 = float(np.clip(x @ w2 / norm, -1.0, 1.0))
    theta1, theta2 = math.acos(cos1), math.acos(cos2)
    if theta1 <= np.pi / m and cos_multiple(cos1, m) > cos2:
        return BinaryDecision.CLASS_1
    if theta2 <= np.pi / m and cos_multiple(cos2, m) > cos1:
        return BinaryDecision.CLASS_2
    return BinaryDecision.NEITHER


def binary_bound_slack(m: float, theta12: float) -> float:
    """
    Difference between the minimal inter-class angle and the maximal intra-class angle
    in the binary case. The inequality holds when the slack is non-negative.

    The first branch applies for theta12 <= (m - 1) pi / m, the wrap-around branch
    otherwise. ``m`` may be real so that the boundary root can be located.

    Parameters
    ----------
    m : float
        Margin multiplier, strictly greater than 1.
    theta12 : float
        Angle between the two class weights, in (0, pi].

    Returns
    -------
    float
        Slack in radians.
    """
    if m <= 1:
        raise DomainError(f"The binary bound requires m > 1, got {m}.")
    if not 0 < theta12 <= np.pi:
        raise DomainError(f"theta12 must lie in (0, pi], got {theta12}.")
    min_inter = (m - 1) * theta12 / (m + 1)
    if theta12 <= (m - 1) * np.pi / m:
        max_intra = theta12 / (m - 1) + theta12 / (m + 1)
    else:
        max_intra = (2 * np.pi - theta12) / (m + 1) + theta12 / (m + 1)
    return min_inter - max_intra


def bound_inequalities_hold(m: int, theta12: float) -> bool:
    """
    Whether the maximal intra-class angle is at most the minimal inter-class angle in
    the binary case, for an integer margin ``m >= 2``.
    """
    _check_margin(m, minimum=2)
    return binary_bound_slack(m, theta12) >= -BOUND_TOLERANCE


def m_min_binary() -> float:
    """
    Lower bound 2 + sqrt(3) on the smallest margin in the binary case.
    """
    return 2 + math.sqrt(3)


def binary_bound_root(lower: float = 2.0, upper: float = 10.0) -> float:
    """
    Locates numerically the real margin at which the first branch of the binary bound
    becomes an equality. The branch is linear in theta12 so the root does not depend
    on the angle.

    Returns
    -------
    float
        Root of m^2 - 4m + 1 = 0 in [lower, upper], i.e. 2 + sqrt(3).
    """
    return brentq(lambda m: binary_bound_slack(m, 1.0), lower, upper, xtol=1e-15)


def neighbor_bound_slack(m: float, theta_prev: float, theta_next: float) -> float:
    """
    Slack of the multi-class bound for a class whose weight sits between neighbours
    ``theta_prev`` and ``theta_next`` radians away.
    """
    if m < 1:
        raise DomainError(f"The multi-class bound requires m >= 1, got {m}.")
    if theta_prev <= 0 or theta_next <= 0:
        raise DomainError("Adjacent angles must be positive.")
    max_intra = theta_next / (m + 1) + theta_prev / (m + 1)
    min_inter = min((m - 1) * theta_next / (m + 1), (m - 1) * theta_prev / (m + 1))
    return min_inter - max_intra


def neighbor_bound_holds(m: float, theta_prev: float, theta_next: float) -> bool:
    """
    Whether the multi-class bound holds for arbitrary adjacent angles.

    Only the uniformly spaced case is backed by a lower-bound result; other placements
    are evaluated literally.
    """
    return neighbor_bound_slack(m, theta_prev, theta_next) >= -BOUND_TOLERANCE


def multiclass_bound_holds(m: float, k: int) -> bool:
    """
    Whether the multi-class bound holds for ``k`` weights uniformly spaced on a circle.
    """
    if k < 3:
        raise DomainError(f"The multi-class bound requires k >= 3, got {k}.")
    spacing = 2 * np.pi / k
    return neighbor_bound_holds(m, spacing, spacing)


def m_min_multiclass(k: int) -> float:
    """
    Smallest margin satisfying the multi-class bound for ``k`` uniformly spaced weights.

    The spacing 2 pi / k cancels out of the inequality, so the result is 3 for every k.

    Parameters
    ----------
    k : int
        Number of classes, at least 3.

    Returns
    -------
    float
    """
    if k < 3:
        raise DomainError(f"The multi-class bound requires k >= 3, got {k}.")
    m = 1
    while not multiclass_bound_holds(m, k):
        m += 1
    return float(m)


def binary_grid(grid_size: int) -> np.ndarray:
    """
    Uniform grid of ``grid_size`` angles covering (0, pi].
    """
    if grid_size < 1:
        raise DomainError(f"grid_size must be positive, got {grid_size}.")
    return np.linspace(np.pi / grid_size, np.pi, grid_size)


def bound_table(m_max: int = 10, grid_size: int = 10000, k: int = 10) -> list[dict]:
    """
    Tabulates, for every integer margin from 2 to ``m_max``, whether each bound holds
    over a grid of weight angles.

    Parameters
    ----------
    m_max : int
        Largest margin tabulated, at least 2.
        Defaults to 10.
    grid_size : int
        Number of weight angles in (0, pi].
        Defaults to 10000.
    k : int
        Number of uniformly spaced classes for the multi-class bound.
        Defaults to 10.

    Returns
    -------
    list[dict]
        One row per margin with keys ``m``, ``near_branch_holds``, ``far_branch_holds``,
        ``all_hold`` and ``multiclass_holds``.
    """
    _check_margin(m_max, minimum=2)
    grid = binary_grid(grid_size)
    rows = []
    for m in range(2, m_max + 1):
        first_branch = grid <= (m - 1) * np.pi / m
        holds = np.array([bound_inequalities_hold(m, theta) for theta in grid])
        rows.append(
            {
                "m": m,
                "near_branch_holds": bool(np.all(holds[first_branch])),
                "far_branch_holds": bool(np.all(holds[~first_branch])),
                "all_hold": bool(np.all(holds)),
                "multiclass_holds": multiclass_bound_holds(m, k),
            }
        )
    return rows


def smallest_holding_margin(grid_size: int = 10000, m_max: int = 20) -> int:
    """
    Smallest integer margin for which the binary bound holds on the whole angle grid.
    """
    for row in bound_table(m_max, grid_size):
        if row["all_hold"]:
            return row["m"]
    raise DomainError(f"No margin up to {m_max} satisfies the binary bound.")
