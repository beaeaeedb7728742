"""
Step-function path spaces, product integrals and the * group law.

A StepPath is an element of V_N: N blocks of algebra coordinates, constant on
[i/N, (i+1)/N). A GroupPath is a G-valued path sampled on the grid k/K. The
two are linked by `develop` (product integral) and `log_derivative` (discrete
right logarithmic derivative).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from math import lcm
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.spatial.distance import cdist

from app.core.errors import ArgumentError, ContextMismatch, DomainError, RangeError
from app.core.liegroup import (
    AlgebraElement,
    GroupElement,
    LieContext,
    adjoint_matrices,
    exp_batch,
    log_batch,
)

logger = logging.getLogger(__name__)

HOLDER_CHUNK = 256


def _check_same_context(a: LieContext, b: LieContext) -> None:
    if a != b:
        raise ContextMismatch(f"Paths over {a.label} and {b.label} cannot be combined")


@dataclass(frozen=True, eq=False)
class StepPath:
    """Element of V_N: `blocks[i]` is the value on [i/N, (i+1)/N)."""
    ctx: LieContext
    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        if blocks.ndim != 2 or blocks.shape[1] != self.ctx.algebra_dim or len(blocks) == 0:
            raise ArgumentError(
                f"StepPath blocks must have shape (N, {self.ctx.algebra_dim}), got {blocks.shape}"
            )
        object.__setattr__(self, "blocks", blocks)

    # Constructors

    @classmethod
    def zero(cls, ctx: LieContext, N: int) -> "StepPath":
        return cls(ctx, np.zeros((N, ctx.algebra_dim)))

    @classmethod
    def constant(cls, ctx: LieContext, x: AlgebraElement, N: int) -> "StepPath":
        return cls(ctx, np.tile(x.coords, (N, 1)))

    @classmethod
    def random(cls, ctx: LieContext, rng: np.random.Generator, N: int,
               norm: float = 1.0) -> "StepPath":
        """Gaussian blocks rescaled to L2 norm `norm`."""
        path = cls(ctx, rng.standard_normal((N, ctx.algebra_dim)))
        return path * (norm / path.l2_norm())

    @classmethod
    def from_function(cls, ctx: LieContext, fn: Callable[[np.ndarray], np.ndarray],
                      N: int) -> "StepPath":
        """Sample a function of t (vectorised, returning (N, d)) at block midpoints."""
        t = (np.arange(N) + 0.5) / N
        return cls(ctx, np.asarray(fn(t), dtype=float).reshape(N, ctx.algebra_dim))

    @classmethod
    def random_smooth(cls, ctx: LieContext, rng: np.random.Generator, N: int,
                      modes: int = 3, norm: float = 1.0) -> "StepPath":
        """Random trigonometric polynomial sampled at N midpoints, L2 norm ~ `norm`."""
        d = ctx.algebra_dim
        amps = rng.standard_normal((modes + 1, d)) / (1.0 + np.arange(modes + 1))[:, None]
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(modes + 1, d))

        def fn(t):
            j = np.arange(modes + 1)[None, :, None]
            return np.sum(amps[None] * np.cos(2.0 * np.pi * j * t[:, None, None] + phases[None]), axis=1)

        path = cls.from_function(ctx, fn, N)
        return path * (norm / path.l2_norm())

    @classmethod
    def from_coordinates(cls, ctx: LieContext, N: int, u: np.ndarray) -> "StepPath":
        """Inverse of `coordinates`: u are orthonormal coordinates of V_N."""
        return cls(ctx, np.sqrt(N) * np.asarray(u, dtype=float).reshape(N, ctx.algebra_dim))

    # Representation

    @property
    def N(self) -> int:
        return self.blocks.shape[0]

    def block(self, i: int) -> AlgebraElement:
        return AlgebraElement(self.blocks[i].copy())

    def coordinates(self) -> np.ndarray:
        """Orthonormal coordinates of V_N: Euclidean norm equals the L2 norm."""
        return (self.blocks / np.sqrt(self.N)).ravel()

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(np.sum(self.blocks ** 2, axis=1))))

    def inner(self, other: "StepPath") -> float:
        a, b = self.common(other)
        return float(np.mean(np.sum(a.blocks * b.blocks, axis=1)))

    def refine(self, k: int) -> "StepPath":
        if k < 1:
            raise ArgumentError(f"refinement factor must be >= 1, got {k}")
        if k == 1:
            return self
        return StepPath(self.ctx, np.repeat(self.blocks, k, axis=0))

    def project(self, N: int) -> "StepPath":
        """L2-orthogonal projection onto V_N (block averages)."""
        if N % self.N == 0:
            return self.refine(N // self.N)
        L = lcm(N, self.N)
        fine = self.refine(L // self.N).blocks
        return StepPath(self.ctx, fine.reshape(N, L // N, -1).mean(axis=1))

    def common(self, other: "StepPath") -> Tuple["StepPath", "StepPath"]:
        """Both paths refined to the least common multiple of their block counts."""
        _check_same_context(self.ctx, other.ctx)
        L = lcm(self.N, other.N)
        return self.refine(L // self.N), other.refine(L // other.N)

    def is_zero(self) -> bool:
        return not np.any(self.blocks)

    # Linear structure

    def __add__(self, other: "StepPath") -> "StepPath":
        a, b = self.common(other)
        return StepPath(self.ctx, a.blocks + b.blocks)

    def __sub__(self, other: "StepPath") -> "StepPath":
        a, b = self.common(other)
        return StepPath(self.ctx, a.blocks - b.blocks)

    def __neg__(self) -> "StepPath":
        return StepPath(self.ctx, -self.blocks)

    def __mul__(self, scalar: float) -> "StepPath":
        return StepPath(self.ctx, self.blocks * float(scalar))

    __rmul__ = __mul__

    # Serialization

    def to_dict(self) -> Dict[str, Any]:
        return {"ctx": self.ctx.label, "N": self.N, "data": self.blocks.ravel().tolist()}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "StepPath":
        ctx = LieContext.from_spec(payload["ctx"])
        data = np.asarray(payload["data"], dtype=float)
        return cls(ctx, data.reshape(int(payload["N"]), ctx.algebra_dim))


class PathClass(str, Enum):
    FREE_PATH = "free-path"
    BASED_PATH = "based-path"
    FREE_LOOP = "free-loop"
    BASED_LOOP = "based-loop"

    @property
    def is_based(self) -> bool:
        return self in (PathClass.BASED_PATH, PathClass.BASED_LOOP)

    @property
    def is_loop(self) -> bool:
        return self in (PathClass.FREE_LOOP, PathClass.BASED_LOOP)

    @classmethod
    def of(cls, based: bool, loop: bool) -> "PathClass":
        if based:
            return cls.BASED_LOOP if loop else cls.BASED_PATH
        return cls.FREE_LOOP if loop else cls.FREE_PATH


@dataclass(frozen=True, eq=False)
class GroupPath:
    """G-valued path sampled at t_k = k/K, k = 0..K.

    Between nodes the path follows the geodesic through consecutive nodes.
    When `step_blocks` is set the nodes encode a piecewise-constant path with
    that many blocks instead, and evaluation returns the left-endpoint value.
    """
    ctx: LieContext
    nodes: np.ndarray
    path_class: PathClass = PathClass.FREE_PATH
    step_blocks: Optional[int] = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        m = self.ctx.matrix_size
        if nodes.ndim != 3 or nodes.shape[1:] != (m, m) or len(nodes) < 2:
            raise ArgumentError(f"GroupPath nodes must have shape (K+1, {m}, {m}), got {nodes.shape}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "path_class", PathClass(self.path_class))

    @classmethod
    def constant(cls, ctx: LieContext, g: GroupElement, K: int) -> "GroupPath":
        based = bool(np.array_equal(g.matrix, ctx.identity))
        return cls(ctx, np.repeat(g.matrix[None], K + 1, axis=0), PathClass.of(based, True))

    @property
    def K(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) / self.K

    def node(self, k: int) -> GroupElement:
        return GroupElement(self.nodes[k].copy())

    # Class predicates

    def is_based(self, tol: Optional[float] = None) -> bool:
        tol = self.ctx.tol if tol is None else tol
        return bool(np.linalg.norm(self.nodes[0] - self.ctx.identity) <= tol)

    def is_loop(self, tol: Optional[float] = None) -> bool:
        tol = self.ctx.tol if tol is None else tol
        return bool(np.linalg.norm(self.nodes[-1] - self.nodes[0]) <= tol)

    def classify(self, tol: Optional[float] = None) -> PathClass:
        return PathClass.of(self.is_based(tol), self.is_loop(tol))

    def is_valid(self, tol: Optional[float] = None) -> bool:
        if not self.ctx.is_member(self.nodes, tol):
            return False
        if self.path_class.is_based and not self.is_based(tol):
            return False
        if self.path_class.is_loop and not self.is_loop(tol):
            return False
        return True

    def validate(self, tol: Optional[float] = None) -> "GroupPath":
        if not self.is_valid(tol):
            raise DomainError(
                f"GroupPath violates the {self.path_class.value} invariants "
                f"(max membership defect {float(np.max(self.ctx.membership_defect(self.nodes))):.3e})"
            )
        return self

    # Evaluation

    @cached_property
    def _increment_logs(self) -> np.ndarray:
        increments = self.nodes[1:] @ np.swapaxes(self.nodes[:-1], -1, -2)
        return log_batch(self.ctx, increments)

    def at(self, t: float) -> GroupElement:
        if not 0.0 <= t <= 1.0:
            raise RangeError(f"t must lie in [0, 1], got {t}")
        return GroupElement(self._evaluate(np.array([t * self.K]))[0])

    def at_fractions(self, num: np.ndarray, den: int) -> np.ndarray:
        """Evaluate at t = num/den for integer numerators, exactly on grid points."""
        num = np.asarray(num, dtype=np.int64)
        if np.any(num < 0) or np.any(num > den):
            raise RangeError("evaluation points must lie in [0, 1]")
        if self.step_blocks is not None:
            S = self.step_blocks
            idx = np.minimum((num * S) // den, S - 1) * (self.K // S)
            return self.nodes[idx]
        scaled = num * self.K
        k = np.minimum(scaled // den, self.K - 1)
        frac = (scaled - k * den) / den
        return self._interpolate(k, frac)

    def _evaluate(self, tk: np.ndarray) -> np.ndarray:
        if self.step_blocks is not None:
            S = self.step_blocks
            idx = np.minimum(np.floor(tk * S / self.K).astype(int), S - 1) * (self.K // S)
            return self.nodes[idx]
        k = np.minimum(np.floor(tk).astype(int), self.K - 1)
        return self._interpolate(k, tk - k)

    def _interpolate(self, k: np.ndarray, frac: np.ndarray) -> np.ndarray:
        out = self.nodes[k].copy()
        inside = frac > 0
        if np.any(inside):
            steps = exp_batch(self.ctx, frac[inside, None] * self._increment_logs[k[inside]])
            out[inside] = steps @ self.nodes[k[inside]]
        return out

    # Group operations on paths

    def __matmul__(self, other: "GroupPath") -> "GroupPath":
        """Pointwise product on a common grid."""
        _check_same_context(self.ctx, other.ctx)
        if self.K != other.K:
            raise ArgumentError(f"pointwise product needs a common grid, got K={self.K} and K={other.K}")
        based = self.path_class.is_based and other.path_class.is_based
        loop = self.path_class.is_loop and other.path_class.is_loop
        return GroupPath(self.ctx, self.nodes @ other.nodes, PathClass.of(based, loop))

    def inverse(self) -> "GroupPath":
        return GroupPath(self.ctx, np.swapaxes(self.nodes, -1, -2).copy(), self.path_class,
                         self.step_blocks)

    def left_translate(self, h: GroupElement) -> "GroupPath":
        based = self.path_class.is_based and np.array_equal(h.matrix, self.ctx.identity)
        return GroupPath(self.ctx, h.matrix @ self.nodes,
                         PathClass.of(based, self.path_class.is_loop), self.step_blocks)

    def coarsen(self, K: int) -> "GroupPath":
        if K < 1 or self.K % K != 0:
            raise ArgumentError(f"cannot coarsen a grid of K={self.K} to K={K}")
        return GroupPath(self.ctx, self.nodes[:: self.K // K].copy(), self.path_class)

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "ctx": self.ctx.label,
            "K": self.K,
            "class": self.path_class.value,
            "data": self.nodes.ravel().tolist(),
        }
        if self.step_blocks is not None:
            payload["step_blocks"] = self.step_blocks
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "GroupPath":
        ctx = LieContext.from_spec(payload["ctx"])
        m = ctx.matrix_size
        nodes = np.asarray(payload["data"], dtype=float).reshape(int(payload["K"]) + 1, m, m)
        return cls(ctx, nodes, PathClass(payload["class"]), payload.get("step_blocks"))


@dataclass(frozen=True)
class PathNormReport:
    l2_of_log_derivative: float
    sobolev_norm: float
    holder_constant_observed: float

    def to_dict(self) -> Dict[str, float]:
        return {
            "l2_of_log_derivative": self.l2_of_log_derivative,
            "sobolev_norm": self.sobolev_norm,
            "holder_constant_observed": self.holder_constant_observed,
        }


# Product integral

def _block_increments(f: StepPath, K: int) -> np.ndarray:
    return exp_batch(f.ctx, f.blocks / K)


def product_integral(f: StepPath, t: float) -> GroupElement:
    """exp((t - t_j) f_j) exp(f_{j-1}/N) ... exp(f_0/N); later blocks act on the left."""
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"t must lie in [0, 1], got {t}")
    ctx, N = f.ctx, f.N
    j = min(int(np.floor(t * N)), N - 1)
    g = ctx.identity.copy()
    if j > 0:
        increments = _block_increments(f, N)
        for i in range(j):
            g = increments[i] @ g
    tail = t - j / N
    if tail > 0 and np.any(f.blocks[j]):
        g = exp_batch(ctx, tail * f.blocks[j]) @ g
    return GroupElement(g)


def develop(f: StepPath, K: int, repair: bool = True) -> GroupPath:
    """Based path t -> product_integral(f, t) on the grid k/K, built incrementally.

    Nodes whose membership defect exceeds the context tolerance are projected
    back onto the group.
    """
    ctx, N = f.ctx, f.N
    if K < 1 or K % N != 0:
        raise ArgumentError(f"grid size K={K} must be a positive multiple of N={N}")
    nodes = np.empty((K + 1, ctx.matrix_size, ctx.matrix_size))
    nodes[:] = ctx.identity
    if f.is_zero():
        return GroupPath(ctx, nodes, PathClass.BASED_PATH)

    increments = _block_increments(f, K)
    per_block = K // N
    identity = ctx.identity
    repairs = 0
    for k in range(K):
        g = increments[k // per_block] @ nodes[k]
        if repair and np.linalg.norm(g.T @ g - identity) > ctx.tol:
            g = ctx.project_to_group(g)
            repairs += 1
        nodes[k + 1] = g
    if repairs:
        logger.debug(f"[pathspace] develop repaired drift at {repairs} of {K} nodes")
    return GroupPath(ctx, nodes, PathClass.BASED_PATH)


def block_nodes(f: StepPath) -> np.ndarray:
    """P(i/N) for i = 0..N, shape (N+1, m, m)."""
    return develop(f, f.N).nodes


def midpoint_nodes(f: StepPath) -> np.ndarray:
    """P((i + 1/2)/N) for i = 0..N-1."""
    return exp_batch(f.ctx, f.blocks / (2 * f.N)) @ block_nodes(f)[:-1]


def log_derivative(g: GroupPath) -> StepPath:
    """Blocks K log(g_{k+1} g_k^{-1}), the discrete right logarithmic derivative."""
    try:
        logs = g._increment_logs
    except DomainError as exc:
        raise DomainError(f"log_derivative: grid K={g.K} too coarse for this path ({exc})") from exc
    return StepPath(g.ctx, g.K * logs)


def geodesic(ctx: LieContext, x: AlgebraElement, K: int) -> GroupPath:
    """One-parameter subgroup t -> exp(tX) on the grid k/K."""
    t = np.arange(K + 1) / K
    nodes = exp_batch(ctx, t[:, None] * x.coords[None, :])
    nodes[0] = ctx.identity
    return GroupPath(ctx, nodes, PathClass.BASED_PATH)


def roundtrip_error(f_fine: StepPath, K: int) -> float:
    """||log_derivative(develop(f)) on grid K - f||_2 for a finely sampled f."""
    if f_fine.N % K != 0:
        raise ArgumentError(f"K={K} must divide the fine block count N={f_fine.N}")
    path = develop(f_fine, f_fine.N).coarsen(K)
    return (log_derivative(path) - f_fine).l2_norm()


# The * group law on L^2

def ad_const(x, f: StepPath) -> StepPath:
    """Apply the constant conjugation Ad_x blockwise."""
    matrix = x.matrix if isinstance(x, GroupElement) else np.asarray(x, dtype=float)
    if np.array_equal(matrix, f.ctx.identity):
        return f
    ad_x = adjoint_matrices(f.ctx, matrix)
    return StepPath(f.ctx, f.blocks @ ad_x.T)


def _ad_blocks(ctx: LieContext, matrices: np.ndarray, blocks: np.ndarray) -> np.ndarray:
    return np.einsum("nab,nb->na", adjoint_matrices(ctx, matrices), blocks)


def star(f: StepPath, g: StepPath) -> StepPath:
    """f * g = f + Ad_{prod exp f} g, with Ad evaluated at block midpoints."""
    f, g = f.common(g)
    if f.is_zero():
        return StepPath(g.ctx, g.blocks.copy())
    if g.is_zero():
        return StepPath(f.ctx, f.blocks.copy())
    return StepPath(f.ctx, f.blocks + _ad_blocks(f.ctx, midpoint_nodes(f), g.blocks))


def star_inverse(f: StepPath) -> StepPath:
    """Blocks -Ad_{P(m_i)^{-1}} f_i, a right inverse: f * star_inverse(f) = 0."""
    if f.is_zero():
        return StepPath(f.ctx, f.blocks.copy())
    inverses = np.swapaxes(midpoint_nodes(f), -1, -2)
    return StepPath(f.ctx, -_ad_blocks(f.ctx, inverses, f.blocks))


def semidirect_multiply(a: Tuple[GroupElement, StepPath],
                        b: Tuple[GroupElement, StepPath]) -> Tuple[GroupElement, StepPath]:
    """(x, g)(y, h) = (xy, Ad_{y^{-1}} g * h)."""
    (x, g), (y, h) = a, b
    return x @ y, star(ad_const(y.inverse(), g), h)


def semidirect_inverse(a: Tuple[GroupElement, StepPath]) -> Tuple[GroupElement, StepPath]:
    x, g = a
    return x.inverse(), star_inverse(ad_const(x, g))


def ad_path(r: GroupPath, f: StepPath) -> StepPath:
    """Pointwise Ad_r f.

    f is refined to the common resolution L = lcm(K, N) and r is evaluated at
    the midpoints of the L cells, so the result lives in V_L.
    """
    _check_same_context(r.ctx, f.ctx)
    L = lcm(r.K, f.N)
    f = f.refine(L // f.N)
    if np.all(r.nodes == r.ctx.identity):
        return StepPath(f.ctx, f.blocks.copy())
    return StepPath(f.ctx, _ad_blocks(f.ctx, ad_path_values(r, L), f.blocks))


def ad_path_values(r: GroupPath, L: int) -> np.ndarray:
    """r at the midpoints of the L cells, shape (L, m, m)."""
    return r.at_fractions(2 * np.arange(L) + 1, 2 * L)


def step_approx(r: GroupPath, N: int) -> GroupPath:
    """Piecewise-constant rho with rho = r(i/N) on block i, encoded on r's grid."""
    if N < 1 or r.K % N != 0:
        raise ArgumentError(f"step approximation needs N dividing K, got N={N}, K={r.K}")
    per_block = r.K // N
    block_of_node = np.minimum(np.arange(r.K + 1) // per_block, N - 1)
    nodes = r.nodes[block_of_node * per_block].copy()
    path_class = PathClass.BASED_PATH if r.path_class.is_based else PathClass.FREE_PATH
    return GroupPath(r.ctx, nodes, path_class, step_blocks=N)


def cocycle_residual(f: GroupPath, g: GroupPath) -> float:
    """||dlog(fg) - dlog f - Ad_f dlog g||_2 on the common grid.

    Ad_f on cell k is the average of Ad at both cell endpoints, so the
    residual is second order in 1/K.
    """
    _check_same_context(f.ctx, g.ctx)
    product = f @ g
    lf, lg, lfg = log_derivative(f), log_derivative(g), log_derivative(product)
    if lg.is_zero():
        return (lfg - lf).l2_norm()
    ad_nodes = adjoint_matrices(f.ctx, f.nodes)
    ad_cells = 0.5 * (ad_nodes[:-1] + ad_nodes[1:])
    transported = np.einsum("kab,kb->ka", ad_cells, lg.blocks)
    return float(np.sqrt(np.mean(np.sum((lfg.blocks - lf.blocks - transported) ** 2, axis=1))))


def _holder_constant(nodes: np.ndarray, times: np.ndarray) -> float:
    """max over node pairs of ||g(t) - g(s)|| / |t - s|^(1/2), in row chunks."""
    flat = nodes.reshape(len(nodes), -1)
    best = 0.0
    for start in range(0, len(flat) - 1, HOLDER_CHUNK):
        stop = min(start + HOLDER_CHUNK, len(flat))
        dist = cdist(flat[start:stop], flat[start + 1:])
        dt = times[None, start + 1:] - times[start:stop, None]
        later = dt > 0
        if np.any(later):
            best = max(best, float(np.max(dist[later] / np.sqrt(dt[later]))))
    return best


def norms(p) -> PathNormReport:
    """Energy, Sobolev norm and observed Holder-1/2 constant of a path.

    A StepPath is treated as the log derivative of its development. A
    GroupPath goes through log_derivative and raises DomainError when an
    increment leaves the logarithm radius.
    """
    if isinstance(p, StepPath):
        K = p.N * max(1, -(-256 // p.N))
        path = develop(p, K)
        l2 = p.l2_norm()
    else:
        path = p
        l2 = log_derivative(p).l2_norm()
    sq = np.sum(path.nodes ** 2, axis=(1, 2))
    l2_values = float(integrate.trapezoid(sq, path.times))
    return PathNormReport(
        l2_of_log_derivative=l2,
        sobolev_norm=float(np.sqrt(l2_values + l2 ** 2)),
        holder_constant_observed=_holder_constant(path.nodes, path.times),
    )
