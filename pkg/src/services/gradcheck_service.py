"""
Gradient Check Service
Finite-difference verification of every analytic loss gradient on random small instances
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from src.core.logger import logger
from src.domain.models import CORE_PRESETS, MarginSpec
from src.services.hypersphere import (
    normalize_columns,
    normalize_columns_backward,
    normalize_columns_with_norms,
    normalize_rows,
    normalize_rows_backward,
    normalize_rows_with_norms,
    sample_uniform_sphere,
)
from src.services.margin_zoo import angular_triplet, combined_loss, inter_penalty, intra_penalty
from src.utils.gradcheck import numeric_gradient, relative_error
from src.utils.rng import make_rng

GRADCHECK_KINDS: Tuple[str, ...] = ("norm-softmax", "arcface", "combined-margin", "intra", "inter", "triplet")
DEFAULT_TOLERANCE = 1e-5
# Scale s for every margin instance; softmax stays unsaturated below about 8
GRADCHECK_SCALE = 4.0
KINK_GUARD = 1e-3
POLE_GUARD = 0.05
TRIPLET_MARGIN = 0.35
MAX_RESAMPLES = 1000


@dataclass
class GradcheckSizes:
    """Shapes of the random instances"""
    n_rows: int = 4
    dim: int = 4
    n_classes: int = 4


@dataclass
class GradcheckResult:
    """Worst relative error of one loss kind over its instances"""
    kind: str
    max_relative_error: float
    instances: int
    passed: bool


# Each case returns (value function of a flat raw vector, analytic gradient on it, point).
Case = Tuple[Callable[[NDArray[np.float64]], float], NDArray[np.float64], NDArray[np.float64]]


def _raw_rows(rng: np.random.Generator, count: int, dim: int) -> NDArray[np.float64]:
    """Random directions with norms between 2 and 3"""
    return sample_uniform_sphere(dim, rng, size=count) * rng.uniform(2.0, 3.0, size=(count, 1))


def _angles(unit_a: NDArray[np.float64], unit_b: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.arccos(np.clip(np.sum(unit_a * unit_b, axis=-1), -1.0, 1.0))


def _near_pole(theta: NDArray[np.float64]) -> bool:
    return bool(np.any(np.minimum(theta, math.pi - theta) < POLE_GUARD))


class GradcheckService:
    """Runs the finite-difference oracle for each loss kind"""

    def __init__(self, seed: int = 0, sizes: Optional[GradcheckSizes] = None,
                 tolerance: float = DEFAULT_TOLERANCE):
        """
        Initialize gradient check service

        Args:
            seed: Seed for the random instances
            sizes: Instance shapes
            tolerance: Largest accepted relative error
        """
        self.seed = seed
        self.sizes = sizes or GradcheckSizes()
        self.tolerance = tolerance

    def _margin_case(self, rng: np.random.Generator, spec: MarginSpec) -> Optional[Case]:
        sizes = self.sizes
        x = _raw_rows(rng, sizes.n_rows, sizes.dim)
        w = _raw_rows(rng, sizes.n_classes, sizes.dim).T
        labels = rng.integers(0, sizes.n_classes, size=sizes.n_rows)
        theta = _angles(normalize_rows(x), normalize_columns(w)[:, labels].T)
        if _near_pole(theta) or np.any(np.abs(spec.m1 * theta + spec.m2 - math.pi) < KINK_GUARD):
            return None
        split = x.size

        def value(flat: NDArray[np.float64]) -> float:
            return combined_loss(flat[:split].reshape(x.shape), flat[split:].reshape(w.shape), labels, spec).loss

        out = combined_loss(x, w, labels, spec)
        return value, np.concatenate([out.grad_features.ravel(), out.grad_centres.ravel()]), \
            np.concatenate([x.ravel(), w.ravel()])

    def _intra_case(self, rng: np.random.Generator) -> Optional[Case]:
        sizes = self.sizes
        x = _raw_rows(rng, sizes.n_rows, sizes.dim)
        w = _raw_rows(rng, sizes.n_classes, sizes.dim).T
        labels = rng.integers(0, sizes.n_classes, size=sizes.n_rows)
        if _near_pole(_angles(normalize_rows(x), normalize_columns(w)[:, labels].T)):
            return None
        split = x.size

        def value(flat: NDArray[np.float64]) -> float:
            return intra_penalty(normalize_rows(flat[:split].reshape(x.shape)),
                                 normalize_columns(flat[split:].reshape(w.shape)), labels).value

        unit_x, x_norms = normalize_rows_with_norms(x)
        unit_w, w_norms = normalize_columns_with_norms(w)
        out = intra_penalty(unit_x, unit_w, labels)
        grad = np.concatenate([normalize_rows_backward(unit_x, x_norms, out.grad_features).ravel(),
                               normalize_columns_backward(unit_w, w_norms, out.grad_centres).ravel()])
        return value, grad, np.concatenate([x.ravel(), w.ravel()])

    def _inter_case(self, rng: np.random.Generator) -> Optional[Case]:
        sizes = self.sizes
        w = _raw_rows(rng, sizes.n_classes, sizes.dim).T
        labels = rng.integers(0, sizes.n_classes, size=sizes.n_rows)
        unit_w, w_norms = normalize_columns_with_norms(w)
        gram = np.clip(unit_w.T @ unit_w, -1.0, 1.0)
        off_diag = np.arccos(gram[~np.eye(sizes.n_classes, dtype=bool)])
        if _near_pole(off_diag):
            return None

        def value(flat: NDArray[np.float64]) -> float:
            return inter_penalty(normalize_columns(flat.reshape(w.shape)), labels).value

        out = inter_penalty(unit_w, labels)
        return value, normalize_columns_backward(unit_w, w_norms, out.grad_centres).ravel(), w.ravel()

    def _triplet_case(self, rng: np.random.Generator) -> Optional[Case]:
        dim = self.sizes.dim
        raw = _raw_rows(rng, 3, dim)
        unit, norms = normalize_rows_with_norms(raw)
        out = angular_triplet(unit[0], unit[1], unit[2], TRIPLET_MARGIN)
        theta = _angles(unit[[0, 0]], unit[[1, 2]])
        if _near_pole(theta) or abs(theta[0] + TRIPLET_MARGIN - theta[1]) < KINK_GUARD:
            return None

        def value(flat: NDArray[np.float64]) -> float:
            u = normalize_rows(flat.reshape(raw.shape))
            return angular_triplet(u[0], u[1], u[2], TRIPLET_MARGIN).value

        grad_unit = np.stack([out.grad_anchor, out.grad_positive, out.grad_negative])
        return value, normalize_rows_backward(unit, norms, grad_unit).ravel(), raw.ravel()

    def _case_builders(self, kind: str) -> List[Callable[[np.random.Generator], Optional[Case]]]:
        if kind == "norm-softmax":
            specs = [MarginSpec.preset("softmax", GRADCHECK_SCALE)]
        elif kind == "arcface":
            specs = [MarginSpec.preset("arcface", GRADCHECK_SCALE)]
        elif kind == "combined-margin":
            specs = [MarginSpec.preset(name, GRADCHECK_SCALE) for name in CORE_PRESETS]
        elif kind == "intra":
            return [self._intra_case]
        elif kind == "inter":
            return [self._inter_case]
        elif kind == "triplet":
            return [self._triplet_case]
        else:
            raise KeyError(f"Unknown gradient check kind '{kind}'. Known: {list(GRADCHECK_KINDS)}")
        return [lambda rng, spec=spec: self._margin_case(rng, spec) for spec in specs]

    def check(self, kind: str, instances: int = 20, perturb: bool = False) -> GradcheckResult:
        """
        Check one loss kind

        Args:
            kind: One of GRADCHECK_KINDS
            instances: Accepted random instances per builder
            perturb: Scale the analytic gradient by 1.01 to exercise the failure path

        Returns:
            GradcheckResult
        """
        rng = make_rng([self.seed, GRADCHECK_KINDS.index(kind)] if kind in GRADCHECK_KINDS else self.seed)
        worst = 0.0
        accepted = 0
        for build in self._case_builders(kind):
            done = 0
            attempts = 0
            while done < instances and attempts < MAX_RESAMPLES:
                attempts += 1
                case = build(rng)
                if case is None:
                    continue
                value, analytic, point = case
                if perturb:
                    analytic = analytic * 1.01
                worst = max(worst, relative_error(analytic, numeric_gradient(value, point)))
                done += 1
            accepted += done
        passed = accepted > 0 and worst <= self.tolerance
        logger.info(f"gradcheck {kind}: max relative error {worst:.3e} over {accepted} instances "
                    f"-> {'PASS' if passed else 'FAIL'}")
        return GradcheckResult(kind=kind, max_relative_error=worst, instances=accepted, passed=passed)

    def run(self, instances: int = 20, perturb: Optional[str] = None) -> Dict[str, GradcheckResult]:
        """
        Check every loss kind

        Args:
            instances: Accepted random instances per builder
            perturb: Name of one kind whose analytic gradient gets corrupted

        Returns:
            Results keyed by kind, in GRADCHECK_KINDS order
        """
        return {kind: self.check(kind, instances, perturb == kind) for kind in GRADCHECK_KINDS}
