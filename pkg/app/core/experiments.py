"""
Experiment dispatch.

Turns a validated ExperimentConfig into domain objects, runs the named
experiment and returns its tidy tables plus a JSON-ready summary with the
acceptance checks that apply to it.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from app.config import settings
from app.core.ballmeasure import (
    BallLaw,
    BallSpec,
    RadiusSchedule,
    ScheduleKind,
    block_max_stat,
    block_max_tail_bound,
    block_threshold,
    levy_tail,
    shifted_ball_overlap_exact,
    shifted_ball_overlap_mc,
)
from app.core.errors import ArgumentError, ScheduleWarning
from app.core.liegroup import (
    AlgebraElement,
    GroupElement,
    LieContext,
    ad,
    exp_alg,
    haar_sample,
    log_group,
    random_algebra,
)
from app.core.meanlab import (
    DefectKind,
    DefectParams,
    DefectReport,
    FunctionalKind,
    TestFunctional,
    TraceCosine,
    brownian_defect,
    brownian_haar_ks,
    rotation_envelope,
    rotation_step_gap,
    sin_witness,
    sweep,
)
from app.core.pathspace import (
    GroupPath,
    StepPath,
    cocycle_residual,
    develop,
    geodesic,
    roundtrip_error,
    star,
    star_inverse,
)
from app.utils.data_utils import records_to_frame, reports_to_frame
from app.utils.rng import make_rng
from app.utils.validators import ExperimentConfig, ExperimentName, FunctionalSection, PathSection, WitnessSection

logger = logging.getLogger(__name__)

SELFTEST_COLUMNS = ["check", "metric", "value", "threshold", "passed"]

# Stream keys, one per independent use of the root seed.
_PATH_STREAM = 101
_GEOMETRY_STREAM = 3
_LEVY_STREAM = 5
_BLOCK_STREAM = 6
_BROWNIAN_STREAM = 7
_HAAR_STREAM = 8
_ENVELOPE_STREAM = 9
_SELFTEST_STREAM = 11

# Asymptotic two-sample KS critical coefficient at the 1% level.
KS_CRITICAL_1PCT = 1.628

ENVELOPE_SAMPLES = 1000
ROUNDTRIP_FINE_BLOCKS = 2 ** 14
ROUNDTRIP_GRIDS = [2 ** k for k in range(6, 13)]
COCYCLE_GRIDS = (2048, 4096)
GROUP_GRIDS = [32, 64, 128, 256]


@dataclass
class ExperimentOutcome:
    """Tables to write, a summary document and the overall verdict (selftest only)."""
    tables: Dict[str, pd.DataFrame]
    summary: Dict[str, Any]
    passed: Optional[bool] = None
    notes: List[str] = field(default_factory=list)


# Builders

def build_context(cfg: ExperimentConfig) -> LieContext:
    return LieContext.from_spec(cfg.group.spec, tol=settings.TOL)


def build_schedule(cfg: ExperimentConfig) -> RadiusSchedule:
    section = cfg.schedule
    if section.kind == ScheduleKind.TABLE.value:
        return RadiusSchedule.from_table(section.table)
    return RadiusSchedule.power_law(section.alpha, section.c)


def _axis(ctx: LieContext, axis: int) -> AlgebraElement:
    if not 0 <= axis < ctx.algebra_dim:
        raise ArgumentError(f"axis {axis} outside the basis of {ctx.label} (dimension {ctx.algebra_dim})")
    return AlgebraElement(np.eye(ctx.algebra_dim)[axis])


def build_path(ctx: LieContext, kind: str, N: int, norm: float, axis: int,
               seed: int, key: int) -> StepPath:
    rng = make_rng(seed, _PATH_STREAM, key)
    if kind == "zero" or norm == 0:
        return StepPath.zero(ctx, N)
    if kind == "constant":
        return StepPath.constant(ctx, _axis(ctx, axis) * norm, N)
    if kind == "random-smooth":
        return StepPath.random_smooth(ctx, rng, N, norm=norm)
    if kind == "random":
        return StepPath.random(ctx, rng, N, norm=norm)
    raise ArgumentError(f"unknown path kind {kind!r}")


def build_shift(ctx: LieContext, section: PathSection, seed: int) -> StepPath:
    return build_path(ctx, section.kind, section.N, section.norm, section.axis, seed, section.key)


def build_functional(ctx: LieContext, section: FunctionalSection, g: StepPath,
                     seed: int) -> TestFunctional:
    if section.direction == "g":
        h = g
    else:
        h = build_path(ctx, section.direction, section.N, section.norm, section.axis, seed, section.key)
    if section.kind == FunctionalKind.GAUSS_WINDOW.value:
        return TestFunctional.gauss_window(h, section.scale)
    return TestFunctional.cosine(h)


def build_rotation(ctx: LieContext, cfg: ExperimentConfig) -> GroupPath:
    section = cfg.rotation
    if section.kind == "identity":
        return GroupPath.constant(ctx, GroupElement.identity(ctx), section.K)
    x = _axis(ctx, section.axis) * section.angle
    if section.kind == "constant":
        return GroupPath.constant(ctx, exp_alg(ctx, x), section.K)
    return geodesic(ctx, x, section.K)


def build_defect_params(cfg: ExperimentConfig, ctx: LieContext) -> DefectParams:
    seed = cfg.experiment.seed
    g = build_shift(ctx, cfg.path, seed)
    F = build_functional(ctx, cfg.functional, g, seed)
    common = dict(
        F=F,
        schedule=build_schedule(cfg),
        M=cfg.sweep.M,
        law=BallLaw(cfg.sweep.law),
    )
    name = cfg.experiment.name
    if name == ExperimentName.ROTATION:
        return DefectParams(DefectKind.ROTATION, r=build_rotation(ctx, cfg),
                            control=cfg.rotation.control, **common)
    if name == ExperimentName.SEMIDIRECT:
        k = exp_alg(ctx, _axis(ctx, cfg.semidirect.k_axis) * cfg.semidirect.k_angle)
        F_K = TraceCosine.scaled_identity(ctx, cfg.semidirect.trace_scale)
        return DefectParams(DefectKind.SEMIDIRECT, g=g, k=k, F_K=F_K, **common)
    return DefectParams(DefectKind(name.value), g=g, **common)


# Shared checks

def _strictly_monotone(values: List[float], increasing: bool) -> bool:
    pairs = list(zip(values, values[1:]))
    if increasing:
        return all(b > a for a, b in pairs)
    return all(b < a for a, b in pairs)


def _within_sigma(estimate: float, exact: float, se: float, k: float = 4.0) -> bool:
    return abs(estimate - exact) <= k * se if se > 0 else estimate == exact


def decreasing_over_grid(reports: Sequence[DefectReport]) -> bool:
    """|estimate| strictly decreasing over the whole grid (or identically zero)."""
    magnitudes = [abs(r.estimate) for r in reports]
    return _strictly_monotone(magnitudes, increasing=False) or not any(magnitudes)


def decreasing_beyond_sigma(reports: Sequence[DefectReport], k: float = 3.0) -> bool:
    """Each neighbour pair drops by more than k combined standard errors."""
    if not any(r.estimate for r in reports):
        return True
    return all(
        abs(a.estimate) - abs(b.estimate) > k * float(np.hypot(a.std_error, b.std_error))
        for a, b in zip(reports, reports[1:])
    )


def _check_row(check: str, metric: str, value: float, threshold: float, passed: bool) -> Dict[str, Any]:
    return {"check": check, "metric": metric, "value": float(value),
            "threshold": float(threshold), "passed": bool(passed)}


# Experiments

def run_geometry(cfg: ExperimentConfig, ctx: LieContext, threads: int, timings: bool) -> ExperimentOutcome:
    section, seed = cfg.geometry, cfg.experiment.seed
    trend_rows, checks = [], {}
    for exponent in section.exponents:
        values = []
        for n in section.n_list:
            s = float(n) ** (-exponent)
            exact = shifted_ball_overlap_exact(n, s)
            values.append(exact)
            trend_rows.append({"exponent": exponent, "n": n, "s": s, "exact": exact})
        increasing = exponent < 0.5
        checks[f"trend_{exponent:g}_{'increasing' if increasing else 'decreasing'}"] = \
            _strictly_monotone(values, increasing)

    mc_rows = []
    points = list(zip(section.mc_points[0::2], section.mc_points[1::2]))
    for i, (n, s) in enumerate(points):
        n = int(n)
        exact = shifted_ball_overlap_exact(n, s)
        mc = shifted_ball_overlap_mc(n, s, section.M, make_rng(seed, _GEOMETRY_STREAM, i))
        mc_rows.append({"n": n, "s": s, "exact": exact, "mc_estimate": mc.estimate,
                        "mc_se": mc.std_error, "M": mc.M, "seed": seed})
        checks[f"mc_within_4sigma_n{n}_s{s:g}"] = _within_sigma(mc.estimate, exact, mc.std_error)
        if n == 3 and s == 1.0:
            checks["exact_n3_s1"] = abs(exact - 0.6875) <= 1e-10

    tables = {
        "overlap_trend": records_to_frame(trend_rows, ["exponent", "n", "s", "exact"]),
        "overlap_mc": records_to_frame(mc_rows, ["n", "s", "exact", "mc_estimate", "mc_se", "M", "seed"]),
    }
    return ExperimentOutcome(tables, {"checks": checks})


def run_levy(cfg: ExperimentConfig, ctx: LieContext, threads: int, timings: bool) -> ExperimentOutcome:
    section, seed = cfg.levy, cfg.experiment.seed
    rows, checks = [], {}
    i = 0
    for n in section.n_list:
        for eps in section.eps_list:
            tail = levy_tail(n, eps, section.M, make_rng(seed, _LEVY_STREAM, i))
            i += 1
            mc = tail.empirical
            rows.append({"n": n, "eps": eps, "exact_tail": tail.exact_tail, "bound": tail.bound,
                         "mc_estimate": mc.estimate, "mc_se": mc.std_error, "M": mc.M, "seed": seed})
            checks[f"tail_within_4sigma_n{n}_eps{eps:g}"] = \
                _within_sigma(mc.estimate, tail.exact_tail, mc.std_error)

    schedule = build_schedule(cfg)
    spec = BallSpec.from_schedule(ctx, section.block_N, schedule)
    stat = block_max_stat(spec, section.block_M, make_rng(seed, _BLOCK_STREAM))
    alpha = schedule.alpha if schedule.kind == ScheduleKind.POWER_LAW else None
    block_row = {
        "group": ctx.label, "N": spec.N, "alpha": alpha, "R": spec.R,
        "threshold": block_threshold(spec), "estimate": stat.estimate, "std_error": stat.std_error,
        "tail_bound": block_max_tail_bound(spec), "M": stat.M, "seed": seed,
    }
    checks["block_max_at_least_0.99"] = stat.estimate >= 0.99
    tables = {
        "levy": records_to_frame(rows, ["n", "eps", "exact_tail", "bound", "mc_estimate", "mc_se", "M", "seed"]),
        "block_max": records_to_frame([block_row], list(block_row)),
    }
    return ExperimentOutcome(tables, {"checks": checks})


def run_defect_sweep(cfg: ExperimentConfig, ctx: LieContext, threads: int, timings: bool) -> ExperimentOutcome:
    params = build_defect_params(cfg, ctx)
    seed = cfg.experiment.seed
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ScheduleWarning)
        result = sweep(params, cfg.sweep.N_list, seed, threads=threads, max_samples=cfg.sweep.max_samples)
    notes = sorted({str(w.message) for w in caught if issubclass(w.category, ScheduleWarning)})
    for note in notes:
        logger.warning(f"[experiments] {note}")
    result.notes.extend(notes)

    reports = result.reports
    first, last = reports[0], reports[-1]
    summary = result.to_dict(timings)
    summary.pop("reports")
    checks = {
        "decreasing_over_grid": decreasing_over_grid(reports),
        "all_within_3sigma": all(not r.is_significant() for r in reports),
    }
    tables = {"reports": reports_to_frame(reports, timings)}

    if params.kind == DefectKind.TRANSLATION:
        shift = params.g.inner(params.F.direction)
        summary["shift"] = shift
        checks["halved_first_to_last"] = abs(last.estimate) <= 0.5 * abs(first.estimate)
        if params.F.kind == FunctionalKind.COSINE:
            limit = float(np.cos(shift) - 1.0)
            summary["gaussian_limit"] = limit
            checks["last_within_0.15_of_limit"] = abs(last.estimate - limit) <= 0.15 + 4.0 * last.std_error

    if params.kind == DefectKind.ROTATION:
        envelope_rows = []
        violations = 0
        for N in cfg.sweep.N_list:
            gaps, bounds = rotation_step_gap(params.r, N, params.schedule, ENVELOPE_SAMPLES,
                                             make_rng(seed, _ENVELOPE_STREAM, N))
            count = int(np.count_nonzero(gaps > bounds))
            violations += count
            envelope_rows.append({
                "N": N, "R": params.schedule.radius_for(N),
                "envelope": rotation_envelope(params.r, params.F, N, params.schedule),
                "max_gap": float(np.max(gaps)), "max_bound": float(np.max(bounds)),
                "samples": ENVELOPE_SAMPLES, "violations": count,
            })
        tables["envelope"] = records_to_frame(envelope_rows, list(envelope_rows[0]))
        checks["step_gap_violations_zero"] = violations == 0

    summary["checks"] = checks
    return ExperimentOutcome(tables, summary, notes=list(result.notes))


def run_brownian(cfg: ExperimentConfig, ctx: LieContext, threads: int, timings: bool) -> ExperimentOutcome:
    section, seed = cfg.brownian, cfg.experiment.seed
    g = geodesic(ctx, _axis(ctx, section.g_axis) * section.g_angle, section.K)
    obs = TraceCosine.scaled_identity(ctx, section.trace_scale)
    reports = brownian_defect(g, obs, section.t_list, section.K, section.M,
                              make_rng(seed, _BROWNIAN_STREAM), at=section.at, seed=seed)

    haar = brownian_haar_ks(ctx, section.haar_t, section.K, section.haar_M, make_rng(seed, _HAAR_STREAM))
    critical = KS_CRITICAL_1PCT * float(np.sqrt(2.0 / haar.M))
    haar_row = {"group": ctx.label, "t": section.haar_t, "K": section.K, "M": haar.M,
                "statistic": haar.statistic, "pvalue": haar.pvalue, "critical": critical}
    summary = {
        "observation_times": list(section.at),
        "checks": {
            "decreasing_beyond_3sigma": decreasing_beyond_sigma(reports),
            "haar_ks_below_critical": haar.statistic < critical,
        },
    }
    tables = {
        "reports": reports_to_frame(reports, timings),
        "haar_ks": records_to_frame([haar_row], list(haar_row)),
    }
    return ExperimentOutcome(tables, summary)


def _witness_direction(ctx: LieContext, section: WitnessSection) -> AlgebraElement:
    if section.y is None:
        return _axis(ctx, section.y_axis)
    if len(section.y) != ctx.algebra_dim:
        raise ArgumentError(f"witness y has {len(section.y)} coordinates, {ctx.label} needs {ctx.algebra_dim}")
    return AlgebraElement(section.y)


def _witness_rows(ctx: LieContext, y: AlgebraElement, eps: float, N: int, R_list: List[float]) -> List[Dict[str, Any]]:
    rows = []
    for R in R_list:
        result = sin_witness(ctx, y, R, eps, N)
        rows.append({"R": R, "eps": eps, "N": N, "f_norm": result.f_norm, "growth": result.growth})
    return rows


def _growth_ratio(rows: List[Dict[str, Any]]) -> float:
    first, last = rows[0], rows[-1]
    if first["growth"] == 0:
        return float("nan")
    return (last["growth"] / first["growth"]) / (last["R"] / first["R"])


def run_witness(cfg: ExperimentConfig, ctx: LieContext, threads: int, timings: bool) -> ExperimentOutcome:
    section = cfg.witness
    rows = _witness_rows(ctx, _witness_direction(ctx, section), section.eps, section.N, section.R_list)
    relative = _growth_ratio(rows)
    summary = {
        "relative_growth_ratio": relative,
        "checks": {
            "growth_linear_in_R": bool(0.8 <= relative <= 1.2),
            "f_norm_equals_eps": all(abs(r["f_norm"] - section.eps) <= 1e-12 for r in rows),
        },
    }
    return ExperimentOutcome({"witness": records_to_frame(rows, ["R", "eps", "N", "f_norm", "growth"])}, summary)


# Selftest checks

def _selftest_liegroup(ctx: LieContext, cfg: ExperimentConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    roundtrip, isometry, membership = 0.0, 0.0, 0.0
    for _ in range(20):
        x = random_algebra(ctx, rng, float(rng.uniform(0.1, 1.2)))
        roundtrip = max(roundtrip, (log_group(ctx, exp_alg(ctx, x)) - x).norm())
        g = haar_sample(ctx, rng)
        isometry = max(isometry, abs(ad(ctx, g, x).norm() - x.norm()))
        membership = max(membership, float(ctx.membership_defect(g.matrix)))
    return [
        _check_row("liegroup", "exp_log_roundtrip", roundtrip, 1e-9, roundtrip <= 1e-9),
        _check_row("liegroup", "ad_isometry", isometry, 1e-9, isometry <= 1e-9),
        _check_row("liegroup", "haar_membership", membership, ctx.tol, membership <= ctx.tol),
    ]


def _selftest_cocycle(ctx: LieContext, cfg: ExperimentConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    coarse_K, fine_K = COCYCLE_GRIDS
    worst, worst_ratio = 0.0, np.inf
    for _ in range(cfg.selftest.cocycle_pairs):
        f = StepPath.random_smooth(ctx, rng, 64)
        g = StepPath.random_smooth(ctx, rng, 64)
        coarse = cocycle_residual(develop(f, coarse_K), develop(g, coarse_K))
        fine = cocycle_residual(develop(f, fine_K), develop(g, fine_K))
        worst = max(worst, fine)
        worst_ratio = min(worst_ratio, coarse / fine if fine > 0 else np.inf)
    return [
        _check_row("cocycle", "max_residual", worst, 1e-4, worst <= 1e-4),
        _check_row("cocycle", "min_halving_ratio", worst_ratio, 1.8, worst_ratio >= 1.8),
    ]


def _selftest_roundtrip(ctx: LieContext, cfg: ExperimentConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    worst = -np.inf
    logK = np.log(ROUNDTRIP_GRIDS)
    for _ in range(cfg.selftest.roundtrip_paths):
        f = StepPath.random_smooth(ctx, rng, ROUNDTRIP_FINE_BLOCKS)
        errors = [roundtrip_error(f, K) for K in ROUNDTRIP_GRIDS]
        worst = max(worst, float(stats.linregress(logK, np.log(errors)).slope))
    return [_check_row("roundtrip", "max_loglog_slope", worst, -0.9, worst <= -0.9)]


def _selftest_group(ctx: LieContext, cfg: ExperimentConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    f0, g0, h0 = (StepPath.random_smooth(ctx, rng, GROUP_GRIDS[0]) for _ in range(3))
    identity, right, left, assoc = [], [], [], []
    for N in GROUP_GRIDS:
        k = N // GROUP_GRIDS[0]
        f, g, h = f0.refine(k), g0.refine(k), h0.refine(k)
        zero = StepPath.zero(ctx, N)
        identity.append(max((star(zero, f) - f).l2_norm(), (star(f, zero) - f).l2_norm()))
        f_inv = star_inverse(f)
        right.append(star(f, f_inv).l2_norm())
        left.append(star(f_inv, f).l2_norm())
        assoc.append((star(star(f, g), h) - star(f, star(g, h))).l2_norm())
    return [
        _check_row("group", "identity_residual", max(identity), 0.0, max(identity) == 0.0),
        _check_row("group", "right_inverse_residual", max(right), 1e-12, max(right) <= 1e-12),
        _check_row("group", "left_inverse_residual", left[-1], 1e-3,
                   left[-1] <= 1e-3 and _strictly_monotone(left, increasing=False)),
        _check_row("group", "associativity_residual", assoc[-1], 1e-3,
                   assoc[-1] <= 1e-3 and _strictly_monotone(assoc, increasing=False)),
    ]


def _selftest_overlap(ctx: LieContext, cfg: ExperimentConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    exact = shifted_ball_overlap_exact(3, 1.0)
    n_list = cfg.geometry.n_list
    shrinking = [shifted_ball_overlap_exact(n, n ** -0.6) for n in n_list]
    growing = [shifted_ball_overlap_exact(n, n ** -0.4) for n in n_list]
    return [
        _check_row("overlap", "exact_n3_s1_error", abs(exact - 0.6875), 1e-10, abs(exact - 0.6875) <= 1e-10),
        _check_row("overlap", "decreasing_at_0.6", float(shrinking[-1]), float(shrinking[0]),
                   _strictly_monotone(shrinking, increasing=False)),
        _check_row("overlap", "increasing_at_0.4", float(growing[-1]), float(growing[0]),
                   _strictly_monotone(growing, increasing=True)),
    ]


def _selftest_witness(ctx: LieContext, cfg: ExperimentConfig, rng: np.random.Generator) -> List[Dict[str, Any]]:
    section = cfg.witness
    rows = _witness_rows(ctx, _witness_direction(ctx, section), section.eps, section.N, [10.0, 100.0])
    ratio = rows[-1]["growth"] / rows[0]["growth"]
    norm_error = max(abs(r["f_norm"] - section.eps) for r in rows)
    return [
        _check_row("witness", "growth_ratio_R100_R10", ratio, 10.0, 8.0 <= ratio <= 12.0),
        _check_row("witness", "f_norm_error", norm_error, 1e-12, norm_error <= 1e-12),
    ]


SELFTEST_CHECKS: Dict[str, Callable[[LieContext, ExperimentConfig, np.random.Generator], List[Dict[str, Any]]]] = {
    "liegroup": _selftest_liegroup,
    "cocycle": _selftest_cocycle,
    "roundtrip": _selftest_roundtrip,
    "group": _selftest_group,
    "overlap": _selftest_overlap,
    "witness": _selftest_witness,
}


def run_selftest(cfg: ExperimentConfig, ctx: LieContext, threads: int, timings: bool) -> ExperimentOutcome:
    unknown = [name for name in cfg.selftest.checks if name not in SELFTEST_CHECKS]
    if unknown:
        raise ArgumentError(f"unknown selftest checks: {', '.join(unknown)}")
    rows = []
    for i, name in enumerate(cfg.selftest.checks):
        rows.extend(SELFTEST_CHECKS[name](ctx, cfg, make_rng(cfg.experiment.seed, _SELFTEST_STREAM, i)))
        logger.info(f"[experiments] selftest {name} done")
    table = records_to_frame(rows, SELFTEST_COLUMNS)
    failed = [f"{r['check']}.{r['metric']}" for r in rows if not r["passed"]]
    passed = not failed
    return ExperimentOutcome({"checks": table}, {"failed": failed, "passed": passed}, passed=passed)


RUNNERS: Dict[ExperimentName, Callable[..., ExperimentOutcome]] = {
    ExperimentName.GEOMETRY: run_geometry,
    ExperimentName.LEVY: run_levy,
    ExperimentName.TRANSLATION: run_defect_sweep,
    ExperimentName.ROTATION: run_defect_sweep,
    ExperimentName.STAR: run_defect_sweep,
    ExperimentName.SEMIDIRECT: run_defect_sweep,
    ExperimentName.BROWNIAN: run_brownian,
    ExperimentName.WITNESS: run_witness,
    ExperimentName.SELFTEST: run_selftest,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1, timings: bool = False) -> ExperimentOutcome:
    ctx = build_context(cfg)
    name = cfg.experiment.name
    logger.info(f"[experiments] running {name.value} on {ctx.label} (seed {cfg.experiment.seed})")
    outcome = RUNNERS[name](cfg, ctx, threads, timings)
    outcome.summary = {
        "experiment": name.value,
        "group": ctx.label,
        "seed": cfg.experiment.seed,
        **outcome.summary,
    }
    return outcome
