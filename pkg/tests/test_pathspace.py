import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import pdist

from app.core.errors import ArgumentError, ContextMismatch, DomainError, RangeError
from app.core.liegroup import AlgebraElement, GroupElement, exp_alg, haar_sample, random_algebra
from app.core.pathspace import (
    GroupPath,
    PathClass,
    StepPath,
    ad_const,
    ad_path,
    cocycle_residual,
    develop,
    geodesic,
    log_derivative,
    midpoint_nodes,
    norms,
    product_integral,
    roundtrip_error,
    semidirect_inverse,
    semidirect_multiply,
    star,
    star_inverse,
    step_approx,
)


# StepPath

def test_coordinates_are_orthonormal(so3, rng):
    f = StepPath.random(so3, rng, 12, norm=2.5)
    assert np.linalg.norm(f.coordinates()) == pytest.approx(f.l2_norm())
    assert f.l2_norm() == pytest.approx(2.5)
    back = StepPath.from_coordinates(so3, 12, f.coordinates())
    np.testing.assert_allclose(back.blocks, f.blocks, atol=1e-14)


def test_refine_preserves_inner_products(so3, rng):
    f, g = StepPath.random(so3, rng, 6), StepPath.random(so3, rng, 4)
    assert f.refine(5).inner(g) == pytest.approx(f.inner(g), abs=1e-14)
    assert (f + g).N == 12


def test_project_is_orthogonal(so3, rng):
    f = StepPath.random(so3, rng, 15)
    p = f.project(6)
    residual = f - p
    other = StepPath.random(so3, rng, 6)
    assert residual.inner(other) == pytest.approx(0.0, abs=1e-14)
    assert p.l2_norm() <= f.l2_norm() + 1e-15


def test_mixed_contexts_rejected(so3, su2):
    with pytest.raises(ContextMismatch):
        StepPath.zero(so3, 4) + StepPath.zero(su2, 4)


def test_steppath_dict_roundtrip(ctx, rng):
    f = StepPath.random_smooth(ctx, rng, 8)
    back = StepPath.from_dict(f.to_dict())
    assert back.ctx == f.ctx
    assert np.array_equal(back.blocks, f.blocks)


# Product integral and log derivative

def test_product_integral_of_zero_is_identity(ctx):
    f = StepPath.zero(ctx, 8)
    assert np.array_equal(product_integral(f, 0.7).matrix, ctx.identity)
    assert np.array_equal(develop(f, 16).nodes[-1], ctx.identity)


def test_constant_path_develops_to_one_parameter_subgroup(so3):
    x = AlgebraElement([0.3, -0.2, 0.5])
    f = StepPath.constant(so3, x, 4)
    np.testing.assert_allclose(product_integral(f, 1.0).matrix, exp_alg(so3, x).matrix, atol=1e-12)
    np.testing.assert_allclose(develop(f, 64).nodes, geodesic(so3, x, 64).nodes, atol=1e-12)


def test_product_integral_ordering(so3):
    a, b = AlgebraElement([1.0, 0.0, 0.0]), AlgebraElement([0.0, 1.0, 0.0])
    f = StepPath(so3, np.stack([a.coords, b.coords]))
    expected = exp_alg(so3, b * 0.5).matrix @ exp_alg(so3, a * 0.5).matrix
    np.testing.assert_allclose(product_integral(f, 1.0).matrix, expected, atol=1e-12)


def test_product_integral_range(so3):
    with pytest.raises(RangeError):
        product_integral(StepPath.zero(so3, 2), 1.5)


def test_develop_requires_multiple_grid(so3, rng):
    with pytest.raises(ArgumentError):
        develop(StepPath.random(so3, rng, 3), 8)


def test_develop_is_based_and_valid(ctx, rng):
    path = develop(StepPath.random(ctx, rng, 16, norm=3.0), 256)
    assert path.classify() in (PathClass.BASED_PATH, PathClass.BASED_LOOP)
    assert path.is_valid(tol=10 * ctx.tol)


def test_develop_long_grid_stays_in_group(ctx, rng):
    path = develop(StepPath.random(ctx, rng, 16, norm=3.0), 2 ** 14)
    assert float(ctx.membership_defect(path.nodes[-1])) <= 10 * ctx.tol


def test_log_derivative_inverts_develop(ctx, rng):
    f = StepPath.random(ctx, rng, 16, norm=2.0)
    back = log_derivative(develop(f, 64))
    assert (back - f).l2_norm() < 1e-9


def test_log_derivative_of_coarse_fast_path_fails(so3):
    f = StepPath.constant(so3, AlgebraElement([44.0, 0.0, 0.0]), 2)
    with pytest.raises(DomainError):
        log_derivative(develop(f, 2))


def test_roundtrip_error_decays_linearly(so3, rng):
    f = StepPath.random_smooth(so3, rng, 2 ** 12)
    grids = [2 ** k for k in range(5, 10)]
    errors = [roundtrip_error(f, K) for K in grids]
    slope = stats.linregress(np.log(grids), np.log(errors)).slope
    assert slope <= -0.9


# GroupPath

def test_geodesic_evaluation_is_exact(so3):
    x = AlgebraElement([0.4, 1.1, -0.3])
    r = geodesic(so3, x, 16)
    np.testing.assert_allclose(r.at(0.37).matrix, exp_alg(so3, x * 0.37).matrix, atol=1e-12)
    with pytest.raises(RangeError):
        r.at(-0.1)


def test_pointwise_product_and_inverse(so3, rng):
    f = develop(StepPath.random(so3, rng, 8), 32)
    g = develop(StepPath.random(so3, rng, 8), 32)
    product = f @ g
    np.testing.assert_allclose(product.nodes[5], f.nodes[5] @ g.nodes[5])
    identity = f @ f.inverse()
    np.testing.assert_allclose(identity.nodes, np.broadcast_to(so3.identity, identity.nodes.shape), atol=1e-12)
    with pytest.raises(ArgumentError):
        f @ develop(StepPath.random(so3, rng, 8), 16)


def test_left_translation_leaves_based_class(so3, rng):
    path = develop(StepPath.random(so3, rng, 4), 16)
    moved = path.left_translate(haar_sample(so3, rng))
    assert moved.path_class == PathClass.FREE_PATH
    assert moved.classify() == PathClass.FREE_PATH


def test_validate_rejects_non_members(so3):
    nodes = np.repeat(so3.identity[None], 3, axis=0)
    nodes[1] *= 1.1
    with pytest.raises(DomainError):
        GroupPath(so3, nodes).validate()


def test_grouppath_dict_roundtrip(so3):
    r = step_approx(geodesic(so3, AlgebraElement([1.0, 0.0, 0.0]), 8), 4)
    back = GroupPath.from_dict(r.to_dict())
    assert back.step_blocks == 4
    assert back.path_class == r.path_class
    assert np.array_equal(back.nodes, r.nodes)


def test_step_approx_is_piecewise_constant(so3):
    r = geodesic(so3, AlgebraElement([1.0, 0.5, 0.0]), 16)
    rho = step_approx(r, 4)
    np.testing.assert_array_equal(rho.at(0.3).matrix, r.nodes[4])
    np.testing.assert_array_equal(rho.at(1.0).matrix, r.nodes[12])
    with pytest.raises(ArgumentError):
        step_approx(r, 5)


def test_step_approx_within_block_holder_bound(ctx, rng):
    # ||r(t) - r(i/N)|| <= (energy of r on block i)^(1/2) N^(-1/2)
    N, K = 16, 256
    r = develop(StepPath.random_smooth(ctx, rng, 32, norm=3.0), K)
    rho = step_approx(r, N)
    gaps = np.linalg.norm(r.nodes - rho.nodes, axis=(1, 2))
    per_block = log_derivative(r).blocks.reshape(N, K // N, -1)
    block_energy = np.sqrt(np.sum(per_block ** 2, axis=(1, 2)) / K)
    block_of_node = np.minimum(np.arange(K + 1) // (K // N), N - 1)
    assert np.all(gaps <= block_energy[block_of_node] / np.sqrt(N) + 1e-12)


def test_norms_of_constant_path(so3):
    f = StepPath.constant(so3, AlgebraElement([0.0, 0.0, 2.0]), 8)
    report = norms(f)
    assert report.l2_of_log_derivative == pytest.approx(2.0)
    # ||g(t)||_HS^2 = 3 for every orthogonal 3x3 matrix
    assert report.sobolev_norm == pytest.approx(np.sqrt(3.0 + 4.0), rel=1e-6)
    assert report.holder_constant_observed > 0


def test_norms_of_geodesic(ctx, rng):
    x = random_algebra(ctx, rng, 1.3)
    report = norms(geodesic(ctx, x, 64))
    assert report.l2_of_log_derivative == pytest.approx(x.norm(), abs=10 * ctx.tol)


def test_metric_is_left_invariant(ctx, rng):
    f = develop(StepPath.random(ctx, rng, 8, norm=2.0), 64)
    g = develop(StepPath.random(ctx, rng, 8, norm=2.0), 64)
    h = haar_sample(ctx, rng)
    before = (log_derivative(f) - log_derivative(g)).l2_norm()
    after = (log_derivative(f.left_translate(h)) - log_derivative(g.left_translate(h))).l2_norm()
    assert after == pytest.approx(before, rel=1e-9)
    assert norms(f.left_translate(h)).l2_of_log_derivative == pytest.approx(norms(f).l2_of_log_derivative, rel=1e-9)


def test_holder_constant_is_max_over_all_node_pairs(so3, rng):
    path = develop(StepPath.random(so3, rng, 8, norm=2.0), 2048)
    flat = path.nodes.reshape(len(path.nodes), -1)
    expected = np.max(pdist(flat) / np.sqrt(pdist(path.times[:, None])))
    assert norms(path).holder_constant_observed == pytest.approx(expected, rel=1e-12)


def test_norms_of_coarse_fast_path_fails(so3):
    f = StepPath.constant(so3, AlgebraElement([44.0, 0.0, 0.0]), 2)
    with pytest.raises(DomainError):
        norms(develop(f, 2))


# Cocycle identity and the * group law

def test_cocycle_residual_second_order(so3, rng):
    f = StepPath.random_smooth(so3, rng, 16)
    g = StepPath.random_smooth(so3, rng, 16)
    coarse = cocycle_residual(develop(f, 512), develop(g, 512))
    fine = cocycle_residual(develop(f, 1024), develop(g, 1024))
    assert fine < 1e-4
    assert coarse / fine >= 1.8


def test_cocycle_with_trivial_factor(so3, rng):
    f = develop(StepPath.random(so3, rng, 8), 32)
    constant = GroupPath.constant(so3, GroupElement.identity(so3), 32)
    assert cocycle_residual(f, constant) == pytest.approx(0.0, abs=1e-10)


def test_star_identity_exact(ctx, rng):
    f = StepPath.random(ctx, rng, 16)
    zero = StepPath.zero(ctx, 16)
    assert np.array_equal(star(zero, f).blocks, f.blocks)
    assert np.array_equal(star(f, zero).blocks, f.blocks)


def test_star_right_inverse(ctx, rng):
    f = StepPath.random(ctx, rng, 32, norm=2.0)
    assert star(f, star_inverse(f)).l2_norm() <= 1e-12


def test_star_left_inverse_and_associativity_converge(so3, rng):
    f0, g0, h0 = (StepPath.random_smooth(so3, rng, 16) for _ in range(3))
    left, assoc = [], []
    for k in (1, 2, 4, 8):
        f, g, h = f0.refine(k), g0.refine(k), h0.refine(k)
        left.append(star(star_inverse(f), f).l2_norm())
        assoc.append((star(star(f, g), h) - star(f, star(g, h))).l2_norm())
    assert all(b < a for a, b in zip(left, left[1:]))
    assert all(b < a for a, b in zip(assoc, assoc[1:]))
    assert assoc[-1] < 1e-3


def test_star_decomposition(so3, rng):
    # f * g = f + Ad_{P(m_i)} g_i block by block
    f, g = StepPath.random(so3, rng, 8), StepPath.random(so3, rng, 8)
    expected = np.stack([
        f.blocks[i] + ad_const(GroupElement(m), StepPath(so3, g.blocks[[i]])).blocks[0]
        for i, m in enumerate(midpoint_nodes(f))
    ])
    np.testing.assert_allclose(star(f, g).blocks, expected, atol=1e-13)
    assert (star(f, g) - f).l2_norm() == pytest.approx(g.l2_norm(), rel=1e-12)


def test_ad_path_of_constant_is_ad_const(so3, rng):
    g = exp_alg(so3, AlgebraElement([0.2, -0.7, 1.0]))
    f = StepPath.random(so3, rng, 8)
    moved = ad_path(GroupPath.constant(so3, g, 16), f)
    assert moved.N == 16
    np.testing.assert_allclose(moved.blocks, ad_const(g, f).refine(2).blocks, atol=1e-12)


def test_ad_path_identity_is_exact(so3, rng):
    f = StepPath.random(so3, rng, 8)
    moved = ad_path(GroupPath.constant(so3, GroupElement.identity(so3), 8), f)
    assert np.array_equal(moved.blocks, f.blocks)


def test_semidirect_group_law(so3, rng):
    a = (haar_sample(so3, rng), StepPath.random(so3, rng, 8))
    e = (GroupElement.identity(so3), StepPath.zero(so3, 8))
    x, g = semidirect_multiply(a, e)
    np.testing.assert_allclose(x.matrix, a[0].matrix)
    np.testing.assert_allclose(g.blocks, a[1].blocks, atol=1e-14)

    x, g = semidirect_multiply(a, semidirect_inverse(a))
    np.testing.assert_allclose(x.matrix, so3.identity, atol=1e-12)
    assert g.l2_norm() <= 1e-12


def test_star_contexts_must_match(so3, su2, rng):
    with pytest.raises(ContextMismatch):
        star(StepPath.random(so3, rng, 2), StepPath.random(su2, rng, 2))
