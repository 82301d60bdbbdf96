"""
Domain Models
Data models and value objects for the angular margin laboratory
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

# Rows are samples, columns are embedding coordinates.
EmbeddingBatch = NDArray[np.float64]
# Columns are class centres W_j.
CentreMatrix = NDArray[np.float64]
UnitVector = NDArray[np.float64]
Labels = NDArray[np.int64]


# (m1, m2, m3) per named preset; s defaults to 64 for all of them.
MARGIN_PRESETS: Dict[str, Tuple[float, float, float]] = {
    "softmax": (1.0, 0.0, 0.0),
    "sphereface": (1.35, 0.0, 0.0),
    "arcface": (1.0, 0.5, 0.0),
    "cosface": (1.0, 0.0, 0.35),
    "cm1": (1.0, 0.3, 0.2),
    "cm2": (0.9, 0.4, 0.15),
    "arcface-0.4": (1.0, 0.4, 0.0),
    "arcface-0.45": (1.0, 0.45, 0.0),
    "arcface-0.55": (1.0, 0.55, 0.0),
}
CORE_PRESETS: Tuple[str, ...] = ("softmax", "sphereface", "arcface", "cosface", "cm1", "cm2")
DEFAULT_SCALE = 64.0


@dataclass(frozen=True)
class MarginSpec:
    """Combined margin hyper-parameters: target logit cos(m1*theta + m2) - m3, scaled by s"""
    m1: float
    m2: float
    m3: float
    s: float = DEFAULT_SCALE
    name: str = "custom"
    baseline: bool = False

    def __post_init__(self):
        """Validate margin ranges"""
        if not self.m1 > 0:
            raise ValueError(f"m1 must be positive, got {self.m1}")
        if not 0 <= self.m2 < math.pi:
            raise ValueError(f"m2 must lie in [0, pi), got {self.m2}")
        if self.m3 < 0:
            raise ValueError(f"m3 must be non-negative, got {self.m3}")
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s}")
        if self.is_identity and not self.baseline:
            raise ValueError("(m1, m2, m3) = (1, 0, 0) is the normalized-softmax baseline; "
                             "use the 'softmax' preset or baseline=True")

    @classmethod
    def preset(cls, name: str, s: Optional[float] = None) -> "MarginSpec":
        """
        Build a named preset

        Args:
            name: One of MARGIN_PRESETS (case-insensitive)
            s: Optional feature scale override

        Returns:
            MarginSpec instance
        """
        key = name.lower()
        if key not in MARGIN_PRESETS:
            raise KeyError(f"Unknown margin preset '{name}'. Known: {sorted(MARGIN_PRESETS)}")
        m1, m2, m3 = MARGIN_PRESETS[key]
        return cls(m1, m2, m3, DEFAULT_SCALE if s is None else float(s),
                   name=key, baseline=key == "softmax")

    @property
    def is_identity(self) -> bool:
        return self.m1 == 1.0 and self.m2 == 0.0 and self.m3 == 0.0

    @property
    def branch_point(self) -> float:
        """Angle where m1*theta + m2 reaches pi; the fallback branch starts past it"""
        return (math.pi - self.m2) / self.m1

    @property
    def fallback_offset(self) -> float:
        """Shift of the unit-slope fallback line so it meets the main branch at branch_point"""
        if self.branch_point >= math.pi:
            return 0.0
        return 1.0 + math.cos(self.branch_point)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.m1, self.m2, self.m3, self.s)


class LogitStage(str, Enum):
    """Whether a logit block holds raw cosines or s-scaled scores"""
    PRE_SCALE = "pre-scale"
    POST_SCALE = "post-scale"


@dataclass
class LogitBlock:
    """N x n matrix of cosines (pre-scale) or class scores (post-scale)"""
    values: NDArray[np.float64]
    stage: LogitStage = LogitStage.PRE_SCALE

    def __post_init__(self):
        """Validate block shape"""
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"Logit block must be 2-D, got shape {self.values.shape}")


@dataclass
class LossOutput:
    """Mean batch loss with gradients on raw features and raw centres"""
    loss: float
    grad_features: NDArray[np.float64]
    grad_centres: NDArray[np.float64]


@dataclass
class PenaltyOutput:
    """Auxiliary penalty value with gradients on normalized inputs"""
    value: float
    grad_features: Optional[NDArray[np.float64]] = None
    grad_centres: Optional[NDArray[np.float64]] = None


@dataclass
class TripletOutput:
    """Angular triplet hinge value with per-vector gradients"""
    value: float
    grad_anchor: NDArray[np.float64]
    grad_positive: NDArray[np.float64]
    grad_negative: NDArray[np.float64]


class LossKind(str, Enum):
    """Supervision used by the toy training loop"""
    COMBINED = "combined"
    COMBINED_INTRA = "combined+intra"
    COMBINED_INTER = "combined+inter"
    COMBINED_INTRA_INTER = "combined+intra+inter"
    COMBINED_TRIPLET = "combined+triplet"
    TRIPLET_ONLY = "triplet-only"
    SOFTMAX_UNNORMALIZED = "softmax-unnormalized"

    @property
    def uses_margin_head(self) -> bool:
        return self.value.startswith("combined")

    @property
    def trains_centres(self) -> bool:
        return self is not LossKind.TRIPLET_ONLY

    @property
    def penalties(self) -> Tuple[str, ...]:
        parts = self.value.split("+")
        return tuple(p for p in parts[1:]) if parts[0] == "combined" else ()


@dataclass
class SynthSpec:
    """Synthetic clustered dataset standing in for a handful of identities"""
    n_classes: int = 8
    samples_per_class: int = 1500
    d_in: int = 16
    kappa: float = 100.0
    seed: int = 0
    holdout_fraction: float = 0.2

    def __post_init__(self):
        """Validate dataset parameters"""
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be at least 1")
        if self.d_in < 2:
            raise ValueError("d_in must be at least 2")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 <= self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in [0, 1)")


@dataclass
class TrainConfig:
    """Optimizer, schedule and loss selection for the toy loop"""
    lr: float = 0.1
    lr_drops: Tuple[int, ...] = (1200, 1700)
    total_iters: int = 2000
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 512
    seed: int = 0
    margin: MarginSpec = field(default_factory=lambda: MarginSpec.preset("arcface"))
    loss_kind: LossKind = LossKind.COMBINED
    hidden: int = 32
    embedding_dim: int = 512
    penalty_weight: float = 1.0
    triplet_margin: float = 0.35
    centre_lr_scale: float = 1.0
    snapshot_bins: int = 36

    def __post_init__(self):
        """Validate optimizer settings"""
        self.loss_kind = LossKind(self.loss_kind)
        self.lr_drops = tuple(int(i) for i in self.lr_drops)
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.total_iters < 1 or self.batch_size < 1:
            raise ValueError("total_iters and batch_size must be positive")
        if self.hidden < 1 or self.embedding_dim < 2:
            raise ValueError("hidden must be >= 1 and embedding_dim >= 2")
        if self.triplet_margin < 0 or self.penalty_weight < 0:
            raise ValueError("triplet_margin and penalty_weight must be non-negative")

    def lr_at(self, iteration: int) -> float:
        """Step schedule: divide by 10 at every drop already passed"""
        drops = sum(1 for d in self.lr_drops if iteration >= d)
        return self.lr / (10.0 ** drops)


@dataclass
class ToyNet:
    """Affine - rectifier - affine feature extractor"""
    w1: NDArray[np.float64]
    b1: NDArray[np.float64]
    w2: NDArray[np.float64]
    b2: NDArray[np.float64]

    def __post_init__(self):
        """Validate parameter shapes"""
        d_in, h = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape[0] != h or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("Inconsistent ToyNet parameter shapes")

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]

    def parameters(self) -> Dict[str, NDArray[np.float64]]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    @classmethod
    def from_parameters(cls, params: Dict[str, NDArray[np.float64]]) -> "ToyNet":
        return cls(w1=params["w1"], b1=params["b1"], w2=params["w2"], b2=params["b2"])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters().values())


@dataclass
class ThetaSnapshot:
    """Histogram of ground-truth angles at one training iteration"""
    iteration: int
    bin_edges_deg: NDArray[np.float64]
    counts: NDArray[np.int64]


@dataclass
class TrainResult:
    """Everything a toy training run produces"""
    net: ToyNet
    centres: CentreMatrix
    loss_trace: NDArray[np.float64]
    theta_snapshots: List[ThetaSnapshot]


@dataclass
class ClassSpread:
    """Angular footprint of one class"""
    label: int
    mean_direction: UnitVector
    spread95_deg: float


@dataclass
class SpreadReport:
    """Per-class spreads, pairwise centre gaps and the global gap statistic"""
    classes: List[ClassSpread]
    pair_separations_deg: Dict[Tuple[int, int], float]
    gap_deg: float

    @property
    def min_separation_deg(self) -> float:
        return min(self.pair_separations_deg.values())

    @property
    def max_spread95_deg(self) -> float:
        return max(c.spread95_deg for c in self.classes)


@dataclass
class AngleReport:
    """Angle statistics in degrees; W-based fields are None when no centre matrix exists"""
    w_ec: Optional[float]
    w_inter: Optional[float]
    intra: float
    inter: float

    def __post_init__(self):
        """Validate angle ranges"""
        for name in ("w_ec", "w_inter", "intra", "inter"):
            value = getattr(self, name)
            if value is not None and not -1e-9 <= value <= 180.0 + 1e-9:
                raise ValueError(f"{name} = {value} lies outside [0, 180] degrees")


@dataclass
class PairSet:
    """Index pairs with their angles in degrees"""
    positive_pairs: NDArray[np.int64]
    negative_pairs: NDArray[np.int64]
    positive_angles_deg: NDArray[np.float64]
    negative_angles_deg: NDArray[np.float64]

    @classmethod
    def from_angles(cls, positive_angles_deg, negative_angles_deg) -> "PairSet":
        """Build a pair set from angles alone, without index bookkeeping"""
        pos = np.asarray(positive_angles_deg, dtype=np.float64)
        neg = np.asarray(negative_angles_deg, dtype=np.float64)
        return cls(np.zeros((0, 2), dtype=np.int64), np.zeros((0, 2), dtype=np.int64), pos, neg)


@dataclass
class PairHistogram:
    """Fixed-width degree histograms of positive and negative pair angles"""
    bin_edges_deg: NDArray[np.float64]
    positive_counts: NDArray[np.int64]
    negative_counts: NDArray[np.int64]
    pairs: PairSet


@dataclass
class MonteCarloEstimate:
    """Sample mean of a Monte-Carlo oracle"""
    mean: float
    std: float
    trials: int


@dataclass(frozen=True)
class ShardPlan:
    """Contiguous balanced partition of n classes over k devices"""
    n: int
    k: int
    ranges: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        """Validate that ranges tile [0, n)"""
        if self.k < 1 or len(self.ranges) != self.k:
            raise ValueError("ShardPlan needs exactly k >= 1 ranges")
        cursor = 0
        for start, stop in self.ranges:
            if start != cursor or stop <= start:
                raise ValueError(f"Ranges do not tile [0, {self.n}) contiguously")
            cursor = stop
        if cursor != self.n:
            raise ValueError(f"Ranges cover [0, {cursor}) instead of [0, {self.n})")
        sizes = self.sizes
        if max(sizes) - min(sizes) > 1:
            raise ValueError("Shard sizes differ by more than one")

    @property
    def sizes(self) -> List[int]:
        return [stop - start for start, stop in self.ranges]

    @property
    def max_shard(self) -> int:
        return max(self.sizes)


@dataclass
class CostModel:
    """Per-step memory and communication bytes of the sharded head"""
    bytes_per_scalar: int
    feature_gather_bytes: int
    per_device_w_bytes: int
    per_device_score_bytes: int
    softmax_reduction_bytes: int
    dx_reduction_bytes: int

    @property
    def communicated_bytes(self) -> int:
        return self.feature_gather_bytes + self.softmax_reduction_bytes + self.dx_reduction_bytes

    @property
    def gather_only_bytes(self) -> int:
        """Feature gather alone, without the two reductions"""
        return self.feature_gather_bytes

    @staticmethod
    def megabytes(n_bytes: int) -> float:
        """Decimal megabytes"""
        return n_bytes / 1e6


@dataclass
class ThroughputEstimate:
    """Analytic per-step timing of the sharded head"""
    compute_seconds: float
    comm_seconds: float
    samples_per_second: float


@dataclass
class Checkpoint:
    """Portable snapshot of a trained net and its centre matrix"""
    net: ToyNet
    centres: Optional[CentreMatrix] = None

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        d_in, h, d_emb = self.net.dims
        n = 0 if self.centres is None else self.centres.shape[1]
        return d_in, h, d_emb, n
