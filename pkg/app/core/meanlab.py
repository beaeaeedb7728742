"""
Invariance laboratory.

Monte Carlo estimates of the finite-N defects E[F(g.f) - F(f)] under nu_N for
translations, pointwise rotations, the * action and the semidirect product
with a compact group, plus the Brownian-path surrogate and the non-SIN
witness. Every estimator is paired (common random numbers), so the identity
of each action gives an estimate of exactly zero.

All test functionals depend on f only through one inner product <f, h>, which
lets the samplers work on inner products instead of full paths.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from math import lcm
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from app.config import settings
from app.core.ballmeasure import (
    BallLaw,
    BallSpec,
    RadiusSchedule,
    ScheduleKind,
    block_max_tail_bound,
)
from app.core.errors import ArgumentError, ContextMismatch
from app.core.liegroup import (
    AlgebraElement,
    GroupElement,
    LieContext,
    adjoint_matrices,
    exp_batch,
    haar_batch,
    non_commuting_partner,
)
from app.core.pathspace import (
    GroupPath,
    StepPath,
    ad_path_values,
    develop,
    log_derivative,
    midpoint_nodes,
    star,
    step_approx,
)
from app.utils.rng import chunked, make_rng

logger = logging.getLogger(__name__)

MIN_SAMPLES = 100

REPORT_COLUMNS = [
    "experiment", "group", "N", "R", "alpha", "M", "seed", "estimate", "std_error", "wall_ms",
]


class FunctionalKind(str, Enum):
    COSINE = "cosine"
    GAUSS_WINDOW = "gauss_window"


@dataclass(frozen=True, eq=False)
class TestFunctional:
    """Bounded Lipschitz functional F(f) = profile(<f, direction>_2)."""
    __test__ = False

    kind: FunctionalKind
    direction: StepPath
    scale: float = 1.0
    bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", FunctionalKind(self.kind))
        if not self.scale > 0:
            raise ArgumentError(f"functional scale must be positive, got {self.scale}")

    @classmethod
    def cosine(cls, h: StepPath) -> "TestFunctional":
        return cls(FunctionalKind.COSINE, h)

    @classmethod
    def gauss_window(cls, w: StepPath, scale: float = 1.0) -> "TestFunctional":
        return cls(FunctionalKind.GAUSS_WINDOW, w, scale)

    @property
    def ctx(self) -> LieContext:
        return self.direction.ctx

    @property
    def lipschitz(self) -> float:
        norm = self.direction.l2_norm()
        if self.kind == FunctionalKind.COSINE:
            return norm
        return norm * float(np.sqrt(2.0 * self.scale / np.e))

    def modulus(self, delta: float) -> float:
        """Uniform modulus of continuity eps_F(delta)."""
        return min(2.0 * self.bound, self.lipschitz * delta)

    def profile(self, x: np.ndarray) -> np.ndarray:
        if self.kind == FunctionalKind.COSINE:
            return np.cos(x)
        return np.exp(-self.scale * x * x)

    def direction_blocks(self, N: int) -> np.ndarray:
        return self.direction.project(N).blocks

    def evaluate_blocks(self, blocks: np.ndarray) -> np.ndarray:
        """F on a stack of paths given as (M, N, d) block values."""
        N = blocks.shape[1]
        return self.profile(_inner(blocks, self.direction_blocks(N)))

    def __call__(self, f: StepPath) -> float:
        return float(self.profile(np.array(f.inner(self.direction))))


@dataclass(frozen=True, eq=False)
class TraceCosine:
    """Bounded observable x -> cos(tr(A x)) on the group."""
    A: np.ndarray
    bound: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))

    @classmethod
    def scaled_identity(cls, ctx: LieContext, scale: float) -> "TraceCosine":
        return cls(scale * ctx.identity)

    def is_constant(self) -> bool:
        return not np.any(self.A)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.cos(np.einsum("ij,...ji->...", self.A, np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class DefectReport:
    experiment: str
    group: str
    N: int
    R: float
    alpha: Optional[float]
    M: int
    seed: Optional[int]
    estimate: float
    std_error: float
    wall_ms: Optional[float] = None

    def is_significant(self, k: float = 3.0) -> bool:
        return abs(self.estimate) > k * self.std_error

    def to_row(self, timings: bool = False) -> Dict[str, Any]:
        row = {name: getattr(self, name) for name in REPORT_COLUMNS}
        if not timings:
            row["wall_ms"] = None
        return row


@dataclass(frozen=True, eq=False)
class BrownianSpec:
    ctx: LieContext
    t: float
    K: int

    def __post_init__(self):
        if not self.t > 0:
            raise ArgumentError(f"diffusion time must be positive, got {self.t}")
        if self.K < 2:
            raise ArgumentError(f"Brownian grid needs K >= 2, got {self.K}")


@dataclass(frozen=True)
class WitnessResult:
    f: StepPath
    f_norm: float
    growth: float
    R: float
    eps: float


# Shared estimator machinery

def _inner(blocks: np.ndarray, h: np.ndarray) -> np.ndarray:
    """<f, h>_2 for f given as (M, N, d) blocks, h as (N, d) or (M, N, d)."""
    N = blocks.shape[1]
    if h.ndim == 2:
        return np.einsum("mnd,nd->m", blocks, h) / N
    return np.einsum("mnd,mnd->m", blocks, h) / N


def _pullback(ad_mats: np.ndarray, h_fine: np.ndarray, N: int) -> np.ndarray:
    """Block averages over V_N of Ad^T h, for Ad given per fine cell."""
    pulled = np.einsum("lab,la->lb", ad_mats, h_fine)
    L = len(pulled)
    return pulled.reshape(N, L // N, -1).mean(axis=1)


def _check_context(*objects) -> LieContext:
    contexts = [o.ctx for o in objects if o is not None]
    for other in contexts[1:]:
        if other != contexts[0]:
            raise ContextMismatch(f"{contexts[0].label} and {other.label} cannot be combined")
    return contexts[0]


def _paired_mean(diff_fn: Callable[[np.random.Generator, int], np.ndarray], M: int,
                 rng: np.random.Generator) -> Tuple[float, float]:
    if M < MIN_SAMPLES:
        raise ArgumentError(f"M must be >= {MIN_SAMPLES}, got {M}")
    diffs = np.concatenate([diff_fn(child, size) for child, size in chunked(rng, M)])
    if not np.any(diffs):
        return 0.0, 0.0
    return float(np.mean(diffs)), float(np.std(diffs, ddof=1) / np.sqrt(M))


def _report(experiment: str, ctx: LieContext, N: int, R: float, alpha: Optional[float],
            M: int, seed: Optional[int], estimate: float, std_error: float,
            started: float) -> DefectReport:
    report = DefectReport(
        experiment=experiment,
        group=ctx.label,
        N=N,
        R=R,
        alpha=alpha,
        M=M,
        seed=seed,
        estimate=estimate,
        std_error=std_error,
        wall_ms=(time.perf_counter() - started) * 1e3,
    )
    logger.debug(f"[meanlab] {experiment} N={N} R={R:.4g}: {estimate:+.3e} +- {std_error:.1e}")
    return report


def _alpha(schedule: RadiusSchedule) -> Optional[float]:
    return schedule.alpha if schedule.kind == ScheduleKind.POWER_LAW else None


# Defect estimators

def translation_defect(g: StepPath, F: TestFunctional, N: int, sched: RadiusSchedule,
                       M: int, rng: np.random.Generator, law: BallLaw = BallLaw.UNIFORM,
                       seed: Optional[int] = None) -> DefectReport:
    """Paired mean of F(g + f) - F(f) over f ~ nu_N."""
    started = time.perf_counter()
    ctx = _check_context(g, F)
    sched.check_window()
    spec = BallSpec.from_schedule(ctx, N, sched, law)
    if g.is_zero():
        return _report("translation", ctx, N, spec.R, _alpha(sched), M, seed, 0.0, 0.0, started)

    shift = g.inner(F.direction)
    h = F.direction_blocks(N)

    def diffs(child, size):
        x = _inner(spec.sample_blocks(child, size), h)
        return F.profile(shift + x) - F.profile(x)

    est, se = _paired_mean(diffs, M, rng)
    return _report("translation", ctx, N, spec.R, _alpha(sched), M, seed, est, se, started)


def rotation_defect(r: GroupPath, F: TestFunctional, N: int, sched: RadiusSchedule,
                    M: int, rng: np.random.Generator, law: BallLaw = BallLaw.UNIFORM,
                    control: str = "plain", seed: Optional[int] = None) -> DefectReport:
    """Estimate E[F(Ad_r f)] - E[F(f)] over f ~ nu_N.

    Ad_r f is taken at r's grid resolution. With control="plain" each sample
    is paired with F(f). With control="blockwise" it is paired with F of f
    rotated once per block (r at the block midpoint); that map is an
    orthogonal transformation of V_N, so nu_N leaves it invariant and the
    expectation is unchanged while the variance drops. Blockwise reports are
    labelled "rotation-blockwise"; a constant r gives exactly 0 there.
    """
    started = time.perf_counter()
    ctx = _check_context(r, F)
    if r.K % N != 0:
        raise ArgumentError(f"rotation path grid K={r.K} must be a multiple of N={N}")
    if control not in ("blockwise", "plain"):
        raise ArgumentError(f"unknown control {control!r}")
    sched.check_window()
    spec = BallSpec.from_schedule(ctx, N, sched, law)
    alpha = _alpha(sched)
    label = "rotation" if control == "plain" else "rotation-blockwise"

    identity_path = bool(np.all(r.nodes == ctx.identity))
    constant_path = bool(np.all(r.nodes == r.nodes[0]))
    if identity_path or (constant_path and control == "blockwise"):
        return _report(label, ctx, N, spec.R, alpha, M, seed, 0.0, 0.0, started)

    L = lcm(r.K, N)
    rotated = _pullback(adjoint_matrices(ctx, ad_path_values(r, L)), F.direction_blocks(L), N)
    if control == "blockwise":
        baseline = _pullback(adjoint_matrices(ctx, ad_path_values(r, N)), F.direction_blocks(N), N)
    else:
        baseline = F.direction_blocks(N)

    def diffs(child, size):
        blocks = spec.sample_blocks(child, size)
        return F.profile(_inner(blocks, rotated)) - F.profile(_inner(blocks, baseline))

    est, se = _paired_mean(diffs, M, rng)
    return _report(label, ctx, N, spec.R, alpha, M, seed, est, se, started)


def rotation_envelope(r: GroupPath, F: TestFunctional, N: int, sched: RadiusSchedule) -> float:
    """eps_F(2 ||dlog r|| R log N / N) + 2 bound nu_N(A_N^c).

    Off A_N the defect is bounded by 2 bound; on A_N the pointwise rotation
    moves f by at most 2 ||dlog r|| R log N / N in L2.
    """
    spec = BallSpec.from_schedule(r.ctx, N, sched)
    energy = log_derivative(r).l2_norm()
    delta = 2.0 * energy * spec.R * np.log(N) / N
    return F.modulus(delta) + 2.0 * F.bound * block_max_tail_bound(spec)


def rotation_step_gap(r: GroupPath, N: int, sched: RadiusSchedule, size: int,
                      rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Sampled ||Ad_r f - Ad_rho f||_2 and its bound for f ~ nu_N.

    rho is the step approximation of r at resolution N; the bound is
    2 N^(-1/2) ||dlog r||_2 max_i N^(-1/2) ||f_i||.
    """
    if r.K % N != 0:
        raise ArgumentError(f"rotation path grid K={r.K} must be a multiple of N={N}")
    ctx = r.ctx
    spec = BallSpec.from_schedule(ctx, N, sched)
    per_block = r.K // N
    exact = adjoint_matrices(ctx, ad_path_values(r, r.K))
    stepped = adjoint_matrices(ctx, ad_path_values(step_approx(r, N), r.K))
    difference = (exact - stepped).reshape(N, per_block, ctx.algebra_dim, ctx.algebra_dim)
    energy = log_derivative(r).l2_norm()

    blocks = spec.sample_blocks(rng, size)
    moved = np.einsum("nkab,snb->snka", difference, blocks)
    gaps = np.sqrt(np.sum(moved ** 2, axis=(1, 2, 3)) / r.K)
    block_max = np.max(np.linalg.norm(blocks, axis=2), axis=1) / np.sqrt(N)
    bounds = 2.0 * energy * block_max / np.sqrt(N)
    return gaps, bounds


def _star_terms(g: StepPath, F: TestFunctional, N: int):
    """Inner-product data for F(g * f): shift <g, h>, pulled-back direction."""
    L = lcm(g.N, N)
    g_fine = g.refine(L // g.N)
    ad_mats = adjoint_matrices(g.ctx, midpoint_nodes(g_fine))
    return g.inner(F.direction), _pullback(ad_mats, F.direction_blocks(L), N)


def star_defect_parts(g: StepPath, F: TestFunctional, N: int, sched: RadiusSchedule,
                      M: int, rng: np.random.Generator, law: BallLaw = BallLaw.UNIFORM,
                      seed: Optional[int] = None) -> Dict[str, DefectReport]:
    """Star defect with its translation and rotation parts on the same samples.

    F(g*f) - F(f) = [F(g + Ad f) - F(g + f)] + [F(g + f) - F(f)].
    """
    started = time.perf_counter()
    ctx = _check_context(g, F)
    sched.check_window()
    spec = BallSpec.from_schedule(ctx, N, sched, law)
    alpha = _alpha(sched)
    if g.is_zero():
        zero = _report("star", ctx, N, spec.R, alpha, M, seed, 0.0, 0.0, started)
        return {"star": zero, "translation": zero, "rotation": zero}

    shift, rotated = _star_terms(g, F, N)
    h = F.direction_blocks(N)
    collected = {"star": [], "translation": [], "rotation": []}

    def diffs(child, size):
        blocks = spec.sample_blocks(child, size)
        moved = F.profile(shift + _inner(blocks, rotated))
        translated = F.profile(shift + _inner(blocks, h))
        plain = F.profile(_inner(blocks, h))
        collected["translation"].append(translated - plain)
        collected["rotation"].append(moved - translated)
        return moved - plain

    est, se = _paired_mean(diffs, M, rng)
    parts = {"star": _report("star", ctx, N, spec.R, alpha, M, seed, est, se, started)}
    for name in ("translation", "rotation"):
        values = np.concatenate(collected[name])
        mean = float(np.mean(values)) if np.any(values) else 0.0
        err = float(np.std(values, ddof=1) / np.sqrt(M)) if np.any(values) else 0.0
        parts[name] = _report(f"star-{name}", ctx, N, spec.R, alpha, M, seed, mean, err, started)
    return parts


def star_defect(g: StepPath, F: TestFunctional, N: int, sched: RadiusSchedule,
                M: int, rng: np.random.Generator, law: BallLaw = BallLaw.UNIFORM,
                seed: Optional[int] = None) -> DefectReport:
    """Paired mean of F(g * f) - F(f) over f ~ nu_N."""
    started = time.perf_counter()
    ctx = _check_context(g, F)
    sched.check_window()
    spec = BallSpec.from_schedule(ctx, N, sched, law)
    if g.is_zero():
        return _report("star", ctx, N, spec.R, _alpha(sched), M, seed, 0.0, 0.0, started)

    shift, rotated = _star_terms(g, F, N)
    h = F.direction_blocks(N)

    def diffs(child, size):
        blocks = spec.sample_blocks(child, size)
        return F.profile(shift + _inner(blocks, rotated)) - F.profile(_inner(blocks, h))

    est, se = _paired_mean(diffs, M, rng)
    return _report("star", ctx, N, spec.R, _alpha(sched), M, seed, est, se, started)


def semidirect_defect(k: GroupElement, g: StepPath, F_K: TraceCosine, F: TestFunctional,
                      N: int, sched: RadiusSchedule, M: int, rng: np.random.Generator,
                      law: BallLaw = BallLaw.UNIFORM, seed: Optional[int] = None) -> DefectReport:
    """Left translation by (k, g) on K x L2 under Haar x nu_N.

    Paired mean of F_K(kx) F(Ad_{x^-1} g * f) - F_K(x) F(f) over (x, f).
    """
    started = time.perf_counter()
    ctx = _check_context(g, F)
    sched.check_window()
    spec = BallSpec.from_schedule(ctx, N, sched, law)
    alpha = _alpha(sched)
    trivial_k = bool(np.array_equal(k.matrix, ctx.identity))
    if (trivial_k and g.is_zero()) or (F_K.is_constant() and g.is_zero()):
        return _report("semidirect", ctx, N, spec.R, alpha, M, seed, 0.0, 0.0, started)

    h = F.direction_blocks(N)
    if g.is_zero():
        def diffs(child, size):
            blocks = spec.sample_blocks(child, size)
            x = haar_batch(ctx, child, size)
            value = F.profile(_inner(blocks, h))
            return F_K(k.matrix @ x) * value - F_K(x) * value
    else:
        L = lcm(g.N, N)
        g_fine = g.refine(L // g.N).blocks
        ad_p = adjoint_matrices(ctx, midpoint_nodes(g.refine(L // g.N)))
        h_fine = F.direction_blocks(L)

        def diffs(child, size):
            blocks = spec.sample_blocks(child, size)
            x = haar_batch(ctx, child, size)
            ad_x = adjoint_matrices(ctx, x)
            y = np.einsum("mab,lb->mla", ad_x, h_fine)
            shift = np.einsum("la,mla->m", g_fine, y) / L
            z = np.einsum("lba,mlb->mla", ad_p, y)
            w = np.einsum("mba,mlb->mla", ad_x, z).reshape(size, N, L // N, -1).mean(axis=2)
            moved = F_K(k.matrix @ x) * F.profile(shift + _inner(blocks, w))
            return moved - F_K(x) * F.profile(_inner(blocks, h))

    est, se = _paired_mean(diffs, M, rng)
    return _report("semidirect", ctx, N, spec.R, alpha, M, seed, est, se, started)


# Brownian paths

def brownian_sample(spec: BrownianSpec, rng: np.random.Generator) -> GroupPath:
    """g_{k+1} = exp(sqrt(t/K) xi_k) g_k with xi_k standard Gaussian coordinates."""
    xi = rng.standard_normal((spec.K, spec.ctx.algebra_dim))
    return develop(StepPath(spec.ctx, np.sqrt(spec.t * spec.K) * xi), spec.K)


def brownian_nodes(ctx: LieContext, t: float, K: int, k_stops: Sequence[int], size: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Nodes k_stops of `size` independent Brownian paths, shape (size, len(k_stops), m, m)."""
    x = np.broadcast_to(ctx.identity, (size,) + ctx.identity.shape).copy()
    observed = np.empty((size, len(k_stops)) + ctx.identity.shape)
    wanted = {k: [j for j, stop in enumerate(k_stops) if stop == k] for k in set(k_stops)}
    step = np.sqrt(t / K)
    for j in wanted.get(0, []):
        observed[:, j] = x
    for k in range(max(k_stops)):
        x = exp_batch(ctx, step * rng.standard_normal((size, ctx.algebra_dim))) @ x
        if (k + 1) % 64 == 0 and np.max(ctx.membership_defect(x)) > ctx.tol:
            x = ctx.project_to_group(x)
        for j in wanted.get(k + 1, []):
            observed[:, j] = x
    return observed


def _node_index(at: float, K: int) -> int:
    k = int(round(at * K))
    if not 0.0 <= at <= 1.0 or abs(at * K - k) > 1e-9:
        raise ArgumentError(f"observation time {at} is not a node of the grid K={K}")
    return k


def brownian_defect(g: GroupPath, obs: TraceCosine, t_list: Sequence[float], K: int, M: int,
                    rng: np.random.Generator, at: Union[float, Sequence[float]] = 1.0,
                    seed: Optional[int] = None) -> List[DefectReport]:
    """Paired mean of F(g^-1 x) - F(x) under Wiener measure w_t.

    F averages obs over the nodes at the observation times `at`, so it is a
    bounded function of finitely many node evaluations. The R column of the
    reports carries the diffusion time t.
    """
    ctx = g.ctx
    times = [float(at)] if np.isscalar(at) else [float(a) for a in at]
    if not times:
        raise ArgumentError("brownian_defect needs at least one observation time")
    k_stops = [_node_index(a, K) for a in times]
    g_inv = np.stack([g.at(a).inverse().matrix for a in times])
    trivial = bool(np.all(g_inv == ctx.identity)) or obs.is_constant()
    reports = []
    for t, stream in zip(t_list, rng.spawn(len(t_list))):
        BrownianSpec(ctx, t, K)  # validates t and K
        started = time.perf_counter()
        if trivial:
            est, se = 0.0, 0.0
        else:
            def diffs(child, size, t=t):
                x = brownian_nodes(ctx, t, K, k_stops, size, child)
                return np.mean(obs(g_inv @ x) - obs(x), axis=1)
            est, se = _paired_mean(diffs, M, stream)
        reports.append(_report("brownian", ctx, K, float(t), None, M, seed, est, se, started))
    return reports


@dataclass(frozen=True)
class HaarComparison:
    statistic: float
    pvalue: float
    M: int


def brownian_haar_ks(ctx: LieContext, t: float, K: int, M: int,
                     rng: np.random.Generator) -> HaarComparison:
    """Two-sample KS test of tr(x(1)) for Brownian x against Haar samples."""
    walk_rng, haar_rng = rng.spawn(2)
    walk = np.trace(brownian_nodes(ctx, t, K, [K], M, walk_rng)[:, 0], axis1=1, axis2=2)
    haar = np.trace(haar_batch(ctx, haar_rng, M), axis1=1, axis2=2)
    result = stats.ks_2samp(walk, haar)
    return HaarComparison(float(result.statistic), float(result.pvalue), M)


# Non-SIN witness

def sin_witness(ctx: LieContext, y: AlgebraElement, R: float, eps: float, N: int) -> WitnessResult:
    """f = eps Z with [Z, y] != 0 and <Z, y> = 0, and growth ||P(f * R ybar) - R ybar||_2.

    P projects onto the span of the constant path ybar. Z is orthogonal to y,
    so P(f) = 0 and the growth is linear in R while ||f||_2 = eps stays fixed.
    """
    if eps < 0:
        raise ArgumentError(f"eps must be non-negative, got {eps}")
    if not y.norm() > 0:
        raise ArgumentError("witness direction y must be nonzero")
    partner = non_commuting_partner(ctx, y)
    # removing the y component keeps [Z, y] unchanged
    z = partner - y * (float(np.dot(partner.coords, y.coords)) / y.norm() ** 2)
    f = StepPath.constant(ctx, z * (eps / z.norm()), N)
    if eps == 0:
        return WitnessResult(f, 0.0, 0.0, R, eps)
    ybar = StepPath.constant(ctx, y, N)
    moved = star(f, ybar * R)
    coefficient = moved.inner(ybar) / ybar.inner(ybar)
    growth = abs(coefficient - R) * ybar.l2_norm()
    return WitnessResult(f, f.l2_norm(), float(growth), R, eps)


# Sweeps

class DefectKind(str, Enum):
    TRANSLATION = "translation"
    ROTATION = "rotation"
    STAR = "star"
    SEMIDIRECT = "semidirect"


@dataclass(frozen=True, eq=False)
class DefectParams:
    kind: DefectKind
    F: TestFunctional
    schedule: RadiusSchedule
    M: int
    g: Optional[StepPath] = None
    r: Optional[GroupPath] = None
    k: Optional[GroupElement] = None
    F_K: Optional[TraceCosine] = None
    law: BallLaw = BallLaw.UNIFORM
    control: str = "plain"

    def __post_init__(self):
        object.__setattr__(self, "kind", DefectKind(self.kind))
        needed = {
            DefectKind.TRANSLATION: ("g",),
            DefectKind.ROTATION: ("r",),
            DefectKind.STAR: ("g",),
            DefectKind.SEMIDIRECT: ("g", "k", "F_K"),
        }[self.kind]
        missing = [name for name in needed if getattr(self, name) is None]
        if missing:
            raise ArgumentError(f"{self.kind.value} defect needs {', '.join(missing)}")


def run_defect(params: DefectParams, N: int, rng: np.random.Generator,
               M: Optional[int] = None, seed: Optional[int] = None) -> DefectReport:
    M = params.M if M is None else M
    common = dict(N=N, sched=params.schedule, M=M, rng=rng, law=params.law, seed=seed)
    if params.kind == DefectKind.TRANSLATION:
        return translation_defect(params.g, params.F, **common)
    if params.kind == DefectKind.ROTATION:
        return rotation_defect(params.r, params.F, control=params.control, **common)
    if params.kind == DefectKind.STAR:
        return star_defect(params.g, params.F, **common)
    return semidirect_defect(params.k, params.g, params.F_K, params.F, **common)


@dataclass
class SweepResult:
    kind: str
    reports: List[DefectReport]
    slope: Optional[float]
    slope_ci: Optional[Tuple[float, float]]
    status: str
    M: int
    notes: List[str] = field(default_factory=list)

    def to_dict(self, timings: bool = False) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "status": self.status,
            "slope": self.slope,
            "slope_ci": list(self.slope_ci) if self.slope_ci else None,
            "M": self.M,
            "notes": list(self.notes),
            "reports": [r.to_row(timings) for r in self.reports],
        }


def fit_decay(reports: Sequence[DefectReport]) -> Tuple[Optional[float], Optional[Tuple[float, float]], str]:
    """Least-squares slope of log|estimate| against log N with a 95% t-interval."""
    if all(r.estimate == 0.0 and r.std_error == 0.0 for r in reports):
        return None, None, "degenerate"
    if not all(r.is_significant() for r in reports):
        return None, None, "noise-dominated"
    x = np.log([r.N for r in reports])
    y = np.log([abs(r.estimate) for r in reports])
    fit = stats.linregress(x, y)
    if len(reports) > 2:
        half = float(stats.t.ppf(0.975, len(reports) - 2) * fit.stderr)
    else:
        half = float("nan")
    return float(fit.slope), (float(fit.slope - half), float(fit.slope + half)), "fitted"


def sweep(params: DefectParams, N_list: Sequence[int], seed: int, threads: int = 1,
          max_samples: Optional[int] = None) -> SweepResult:
    """Run a defect over N_list with per-cell seeds SeedSequence([seed, N]).

    If the estimate at the smallest N is not significant, M is doubled (up to
    max_samples) before the remaining cells run.
    """
    N_list = [int(n) for n in N_list]
    if len(N_list) < 3 or any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ArgumentError(f"N_list must be strictly ascending with >= 3 entries, got {N_list}")
    max_samples = settings.MAX_SAMPLES if max_samples is None else max_samples

    M = params.M
    notes = []
    first = run_defect(params, N_list[0], make_rng(seed, N_list[0]), M, seed)
    while not first.is_significant() and first.std_error > 0 and 2 * M <= max_samples:
        M *= 2
        notes.append(f"M doubled to {M} at N={N_list[0]}")
        logger.info(f"[meanlab] {params.kind.value}: estimate not significant, doubling M to {M}")
        first = run_defect(params, N_list[0], make_rng(seed, N_list[0]), M, seed)

    def cell(N):
        return run_defect(params, N, make_rng(seed, N), M, seed)

    rest = N_list[1:]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = [first] + list(pool.map(cell, rest))
    else:
        reports = [first] + [cell(N) for N in rest]

    slope, ci, status = fit_decay(reports)
    return SweepResult(params.kind.value, reports, slope, ci, status, M, notes)
