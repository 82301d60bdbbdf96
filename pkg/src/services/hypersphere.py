"""
Hypersphere Geometry
Normalization, geodesic angles, uniform sampling and nearest-separation estimates
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import integrate, optimize, special

from src.core.exceptions import DimensionMismatch, GeometryError, InvalidDimension, ZeroVector
from src.core.logger import logger
from src.domain.models import CentreMatrix, EmbeddingBatch, MonteCarloEstimate, UnitVector
from src.utils.rng import SeedLike, make_rng, spawn_rngs

MIN_NORM = 1e-30
DEFAULT_BLOCK = 512


def _normalize(matrix: NDArray[np.float64], axis: int) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    norms = np.linalg.norm(matrix, axis=axis)
    if np.any(norms < MIN_NORM):
        bad = np.flatnonzero(norms < MIN_NORM)
        kind = "row" if axis == 1 else "column"
        raise ZeroVector(f"Cannot normalize {kind}(s) {bad.tolist()[:5]}: norm below {MIN_NORM}")
    if axis == 1:
        return matrix / norms[:, None], norms
    return matrix / norms[None, :], norms


def normalize_rows_with_norms(matrix) -> Tuple[EmbeddingBatch, NDArray[np.float64]]:
    """Unit rows together with the original row norms, for use in a backward pass"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionMismatch(f"Expected a 2-D matrix, got shape {matrix.shape}")
    return _normalize(matrix, axis=1)


def normalize_columns_with_norms(matrix) -> Tuple[CentreMatrix, NDArray[np.float64]]:
    """Unit columns together with the original column norms"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DimensionMismatch(f"Expected a 2-D matrix, got shape {matrix.shape}")
    return _normalize(matrix, axis=0)


def normalize_rows(matrix) -> EmbeddingBatch:
    """
    Project every row onto the unit hypersphere

    Args:
        matrix: N x d matrix, or a single d-vector

    Returns:
        Matrix of the same shape with unit-norm rows

    Raises:
        ZeroVector: If a row norm is below 1e-30
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        return normalize_rows_with_norms(matrix[None, :])[0][0]
    return normalize_rows_with_norms(matrix)[0]


def normalize_columns(matrix) -> CentreMatrix:
    """Project every column onto the unit hypersphere"""
    return normalize_columns_with_norms(matrix)[0]


def normalize_rows_backward(unit_rows: EmbeddingBatch, norms: NDArray[np.float64],
                            grad_unit: NDArray[np.float64]) -> NDArray[np.float64]:
    """Chain a gradient on x / |x| back to the raw rows x"""
    radial = np.sum(unit_rows * grad_unit, axis=1, keepdims=True)
    return (grad_unit - unit_rows * radial) / norms[:, None]


def normalize_columns_backward(unit_cols: CentreMatrix, norms: NDArray[np.float64],
                               grad_unit: NDArray[np.float64]) -> NDArray[np.float64]:
    """Chain a gradient on W_j / |W_j| back to the raw columns W_j"""
    radial = np.sum(unit_cols * grad_unit, axis=0, keepdims=True)
    return (grad_unit - unit_cols * radial) / norms[None, :]


def angle(u: UnitVector, v: UnitVector) -> float:
    """
    Geodesic distance between two unit vectors

    Args:
        u: Unit vector
        v: Unit vector of the same dimension

    Returns:
        Angle in radians in [0, pi]

    Raises:
        DimensionMismatch: If the shapes differ
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"Cannot take the angle between shapes {u.shape} and {v.shape}")
    return float(np.arccos(np.clip(np.dot(u, v), -1.0, 1.0)))


def sample_uniform_sphere(d: int, seed: SeedLike, size: Optional[int] = None) -> NDArray[np.float64]:
    """
    Draw directions from the rotation-invariant distribution on the (d-1)-sphere

    Args:
        d: Ambient dimension, at least 2
        seed: Integer seed or an existing Generator (advanced in place)
        size: Number of samples; None returns a single vector

    Returns:
        A d-vector, or a size x d matrix of unit rows
    """
    if d < 2:
        raise InvalidDimension(f"Sphere dimension must be >= 2, got {d}")
    rng = make_rng(seed)
    count = 1 if size is None else int(size)
    gaussian = rng.standard_normal((count, d))
    # A Gaussian draw of exactly zero norm has probability zero; resample to keep the contract.
    norms = np.linalg.norm(gaussian, axis=1)
    while np.any(norms < MIN_NORM):
        bad = norms < MIN_NORM
        gaussian[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(gaussian, axis=1)
    unit = gaussian / norms[:, None]
    return unit[0] if size is None else unit


def _check_centres(centres) -> CentreMatrix:
    centres = np.asarray(centres, dtype=np.float64)
    if centres.ndim != 2 or centres.shape[1] < 2:
        raise GeometryError(f"Need a d x n centre matrix with n >= 2, got shape {centres.shape}")
    return centres


def min_pairwise_angle(centres: CentreMatrix, block_size: int = DEFAULT_BLOCK) -> float:
    """
    Smallest angle between any two distinct columns, by a blocked Gram scan

    Args:
        centres: d x n matrix of unit columns
        block_size: Rows of the Gram matrix held in memory at once

    Returns:
        Minimum pairwise angle in radians
    """
    points = _check_centres(centres).T
    n = points.shape[0]
    best = -np.inf
    cols = np.arange(n)
    for start in range(0, n - 1, block_size):
        stop = min(start + block_size, n - 1)
        gram = points[start:stop] @ points.T
        rows = np.arange(start, stop)
        gram[cols[None, :] <= rows[:, None]] = -np.inf
        best = max(best, float(gram.max()))
    return float(np.arccos(np.clip(best, -1.0, 1.0)))


def min_pairwise_angle_exhaustive(centres: CentreMatrix) -> float:
    """Reference O(n^2) scan over every unordered pair"""
    centres = _check_centres(centres)
    n = centres.shape[1]
    return min(angle(centres[:, i], centres[:, j]) for i in range(n) for j in range(i + 1, n))


def nearest_angles(centres: CentreMatrix) -> NDArray[np.float64]:
    """For each column j, min over k != j of angle(W_j, W_k), in radians"""
    centres = _check_centres(centres)
    gram = centres.T @ centres
    np.fill_diagonal(gram, -np.inf)
    return np.arccos(np.clip(gram.max(axis=1), -1.0, 1.0))


def _check_capacity_args(d: int, n: float) -> None:
    if d < 2:
        raise InvalidDimension(f"Sphere dimension must be >= 2, got {d}")
    if n < 2:
        raise GeometryError(f"Need at least two centres, got n={n}")


def expected_nearest_separation(d: int, n: float) -> float:
    """
    Asymptotic expectation of the minimum pairwise angle among n uniform points

    n^(-2/(d-1)) * Gamma(1 + 1/(d-1)) * (Gamma(d/2) / (2 sqrt(pi) (d-1) Gamma((d-1)/2)))^(-1/(d-1)),
    evaluated in log space since Gamma(d/2) overflows for d >= 350.

    Args:
        d: Ambient dimension
        n: Number of centres

    Returns:
        Expected separation in radians
    """
    _check_capacity_args(d, n)
    k = d - 1.0
    log_bracket = (special.gammaln(d / 2.0)
                   - (math.log(2.0) + 0.5 * math.log(math.pi) + math.log(k) + special.gammaln(k / 2.0)))
    log_value = -2.0 / k * math.log(n) + special.gammaln(1.0 + 1.0 / k) - log_bracket / k
    return float(math.exp(log_value))


def pair_angle_cdf(theta: float, d: int) -> float:
    """P(angle(u, v) <= theta) for independent uniform u, v on the (d-1)-sphere"""
    half = 0.5 * float(special.betainc((d - 1) / 2.0, 0.5, math.sin(theta) ** 2))
    return half if theta <= math.pi / 2 else 1.0 - half


def poisson_nearest_separation(d: int, n: float) -> float:
    """
    Expected minimum pairwise angle under the Poisson approximation with the exact cap measure

    Same clumping argument as expected_nearest_separation, without replacing the
    cap measure by its small-angle power law, so it stays accurate when the
    separation is not small.

    Args:
        d: Ambient dimension
        n: Number of centres

    Returns:
        Expected separation in radians
    """
    _check_capacity_args(d, n)
    pairs = n * (n - 1) / 2.0

    def survival(theta: float) -> float:
        return math.exp(-pairs * pair_angle_cdf(theta, d))

    theta_star = optimize.brentq(lambda t: pairs * pair_angle_cdf(t, d) - 1.0, 0.0, math.pi)
    lower, _ = integrate.quad(survival, 0.0, theta_star, limit=200)
    upper = 0.0
    if theta_star < math.pi:
        upper, _ = integrate.quad(survival, theta_star, math.pi, limit=200)
    return float(lower + upper)


def monte_carlo_nearest_separation(d: int, n: int, trials: int, seed: Optional[int] = None,
                                   workers: int = 1) -> MonteCarloEstimate:
    """
    Monte-Carlo mean of min_pairwise_angle over independent uniform draws

    Each trial owns a generator spawned from the seed, so the estimate does not
    depend on the number of workers.

    Args:
        d: Ambient dimension
        n: Points per trial
        trials: Number of independent draws
        seed: Root seed
        workers: Thread count

    Returns:
        MonteCarloEstimate with mean and standard deviation in radians
    """
    _check_capacity_args(d, n)
    if trials < 1:
        raise GeometryError("Need at least one Monte-Carlo trial")

    def one_trial(rng: np.random.Generator) -> float:
        return min_pairwise_angle(sample_uniform_sphere(d, rng, size=n).T)

    rngs = spawn_rngs(seed, trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(one_trial, rngs)))
    else:
        values = np.array([one_trial(rng) for rng in rngs])

    std = float(values.std(ddof=1)) if trials > 1 else 0.0
    logger.info(f"Monte-Carlo separation d={d} n={n}: mean={values.mean():.6f} rad over {trials} trials")
    return MonteCarloEstimate(mean=float(values.mean()), std=std, trials=trials)
