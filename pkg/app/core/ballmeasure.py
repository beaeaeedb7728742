"""
The measures nu_N and Euclidean-ball geometry.

nu_N is the normalised uniform measure on the ball of radius R_N in V_N. V_N is
given orthonormal coordinates u_i = N^{-1/2} f_i, so the Euclidean norm of u
is the L2 norm of the step path f.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import betainc

from app.config import settings
from app.core.errors import ArgumentError, ScheduleWarning
from app.core.liegroup import LieContext
from app.core.pathspace import StepPath
from app.utils.rng import chunked

logger = logging.getLogger(__name__)


class ScheduleKind(str, Enum):
    POWER_LAW = "power-law"
    TABLE = "table"


@dataclass(frozen=True)
class RadiusSchedule:
    """R_N = c * N**alpha, or an explicit table of radii."""
    kind: ScheduleKind = ScheduleKind.POWER_LAW
    c: float = settings.DEFAULT_SCHEDULE_C
    alpha: float = settings.DEFAULT_SCHEDULE_ALPHA
    table: Tuple[Tuple[int, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if self.kind == ScheduleKind.POWER_LAW and not self.c > 0:
            raise ArgumentError(f"schedule constant c must be positive, got {self.c}")
        if self.kind == ScheduleKind.TABLE:
            if not self.table:
                raise ArgumentError("table schedule needs at least one (N, R) entry")
            if any(r <= 0 for _, r in self.table):
                raise ArgumentError("table schedule radii must be positive")

    @classmethod
    def power_law(cls, alpha: float, c: float = 1.0) -> "RadiusSchedule":
        return cls(ScheduleKind.POWER_LAW, c=c, alpha=alpha)

    @classmethod
    def from_table(cls, radii: Dict[int, float]) -> "RadiusSchedule":
        return cls(ScheduleKind.TABLE, table=tuple(sorted((int(n), float(r)) for n, r in radii.items())))

    def radius_for(self, N: int) -> float:
        if N < 1:
            raise ArgumentError(f"N must be >= 1, got {N}")
        if self.kind == ScheduleKind.POWER_LAW:
            return float(self.c * N ** self.alpha)
        radii = dict(self.table)
        if N not in radii:
            raise ArgumentError(f"no radius tabulated for N={N}")
        return radii[N]

    def in_valid_window(self) -> bool:
        """R_N = omega(N^{1/2}) and o(N / log N); for power laws 1/2 < alpha < 1."""
        if self.kind == ScheduleKind.TABLE:
            return True
        return 0.5 < self.alpha < 1.0

    def check_window(self) -> None:
        if not self.in_valid_window():
            warnings.warn(
                f"radius exponent alpha={self.alpha} lies outside (1/2, 1); "
                "invariance defects are not expected to vanish",
                ScheduleWarning,
                stacklevel=3,
            )


class BallLaw(str, Enum):
    UNIFORM = "uniform-ball"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True, eq=False)
class BallSpec:
    ctx: LieContext
    N: int
    R: float
    law: BallLaw = BallLaw.UNIFORM

    def __post_init__(self):
        object.__setattr__(self, "law", BallLaw(self.law))
        if self.N < 1:
            raise ArgumentError(f"N must be >= 1, got {self.N}")
        if not self.R > 0:
            raise ArgumentError(f"radius must be positive, got {self.R}")

    @classmethod
    def from_schedule(cls, ctx: LieContext, N: int, schedule: RadiusSchedule,
                      law: BallLaw = BallLaw.UNIFORM) -> "BallSpec":
        return cls(ctx, N, schedule.radius_for(N), law)

    @property
    def dim(self) -> int:
        return self.N * self.ctx.algebra_dim

    def sample_coordinates(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, dim) orthonormal coordinates drawn from the law."""
        if self.law == BallLaw.GAUSSIAN:
            return self.R * rng.standard_normal((size, self.dim))
        return uniform_ball(rng, self.dim, size, self.R)

    def sample_blocks(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """(size, N, d) block values f_i of `size` samples."""
        u = self.sample_coordinates(rng, size)
        return np.sqrt(self.N) * u.reshape(size, self.N, self.ctx.algebra_dim)


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    std_error: float
    M: int

    def to_dict(self) -> Dict[str, float]:
        return {"estimate": self.estimate, "std_error": self.std_error, "M": self.M}


def _binomial(hits: int, M: int) -> MCEstimate:
    p = hits / M
    return MCEstimate(p, float(np.sqrt(p * (1.0 - p) / M)), M)


def uniform_ball(rng: np.random.Generator, n: int, size: int, radius: float = 1.0) -> np.ndarray:
    """Uniform points in the n-ball: Gaussian direction, radius R * U^(1/n)."""
    directions = rng.standard_normal((size, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(size) ** (1.0 / n)
    return directions * radii[:, None]


def sample_nu(spec: BallSpec, rng: np.random.Generator) -> StepPath:
    return StepPath(spec.ctx, spec.sample_blocks(rng, 1)[0])


def shifted_ball_overlap_exact(n: int, s: float) -> float:
    """Volume fraction of (B_n + s e_1) outside B_n.

    The lens B_n cap (B_n + s e_1) is two caps at distance s/2 from the
    centres, each of volume fraction I_{1 - s^2/4}((n+1)/2, 1/2) / 2.
    """
    if n < 1:
        raise ArgumentError(f"dimension must be >= 1, got {n}")
    if s < 0:
        raise ArgumentError(f"shift must be non-negative, got {s}")
    if s == 0:
        return 0.0
    if s >= 2:
        return 1.0
    return float(1.0 - betainc((n + 1) / 2.0, 0.5, 1.0 - s * s / 4.0))


def shifted_ball_overlap_mc(n: int, s: float, M: int, rng: np.random.Generator) -> MCEstimate:
    if M < 100:
        raise ArgumentError(f"M must be >= 100, got {M}")
    if s < 0:
        raise ArgumentError(f"shift must be non-negative, got {s}")
    hits = 0
    for child, size in chunked(rng, M):
        x = uniform_ball(child, n, size)
        x[:, 0] -= s
        hits += int(np.count_nonzero(np.sum(x * x, axis=1) > 1.0))
    return _binomial(hits, M)


def levy_tail_exact(n: int, eps: float) -> float:
    """P(|<x, e_1>| > eps) for x uniform in B_n."""
    if not 0.0 <= eps <= 1.0:
        raise ArgumentError(f"eps must lie in [0, 1], got {eps}")
    return float(betainc((n + 1) / 2.0, 0.5, 1.0 - eps * eps))


def levy_tail_mc(n: int, eps: float, M: int, rng: np.random.Generator) -> MCEstimate:
    hits = 0
    for child, size in chunked(rng, M):
        x = uniform_ball(child, n, size)
        hits += int(np.count_nonzero(np.abs(x[:, 0]) > eps))
    return _binomial(hits, M)


def levy_bound(n: int, eps: float, c: float = 0.25) -> float:
    """Concentration witness 2 exp(-c eps^2 n)."""
    return float(2.0 * np.exp(-c * eps * eps * n))


@dataclass(frozen=True)
class LevyTail:
    n: int
    eps: float
    exact_tail: float
    bound: float
    empirical: Optional[MCEstimate] = None


def levy_tail(n: int, eps: float, M: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> LevyTail:
    exact = levy_tail_exact(n, eps)
    empirical = levy_tail_mc(n, eps, M, rng) if M else None
    return LevyTail(n, eps, exact, levy_bound(n, eps), empirical)


def block_threshold(spec: BallSpec) -> float:
    """R log N / sqrt(N) in orthonormal coordinates."""
    return spec.R * np.log(spec.N) / np.sqrt(spec.N)


def block_max_stat(spec: BallSpec, M: int, rng: np.random.Generator,
                   threshold: Optional[float] = None) -> MCEstimate:
    """Empirical nu_N-measure of {max_i ||u_i|| <= threshold}."""
    if spec.law != BallLaw.UNIFORM:
        raise ArgumentError("block_max_stat is defined for the uniform-ball law")
    threshold = block_threshold(spec) if threshold is None else threshold
    d = spec.ctx.algebra_dim
    hits = 0
    for child, size in chunked(rng, M):
        u = spec.sample_coordinates(child, size).reshape(size, spec.N, d)
        block_max = np.max(np.linalg.norm(u, axis=2), axis=1)
        hits += int(np.count_nonzero(block_max <= threshold))
    return _binomial(hits, M)


def block_max_tail_bound(spec: BallSpec, threshold: Optional[float] = None) -> float:
    """Union bound on nu_N(max_i ||u_i|| > threshold).

    For x uniform in B_n, the squared norm of a d-dimensional coordinate block
    is Beta(d/2, (n-d)/2 + 1).
    """
    threshold = block_threshold(spec) if threshold is None else threshold
    d, n = spec.ctx.algebra_dim, spec.dim
    ratio = threshold / spec.R
    if ratio >= 1.0:
        return 0.0
    single = float(betainc((n - d) / 2.0 + 1.0, d / 2.0, 1.0 - ratio * ratio))
    return min(1.0, spec.N * single)
