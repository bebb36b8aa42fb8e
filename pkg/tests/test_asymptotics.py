from __future__ import annotations

import math

import numpy as np
import pytest

from spectra.asymptotics import (
    State,
    a_coefficient,
    a_sum,
    build_context,
    e_iterate,
    h_functions,
    path_sums,
    predict,
    reachable_betas,
    residual_path_sum,
    s_k,
    s_k_enumerate,
    selection_check,
)
from spectra.errors import CoverageError, ParameterError, SmallDenominatorError
from spectra.lattice import AsymptoticParams, BoxGeometry
from spectra.potential import (
    DirectionalPotential,
    directional_part,
    generate_random_potential,
    separable_potential,
)
from spectra.sturm1d import solve

BASE = State(1, 0, (0, 14))


@pytest.fixture(scope="module")
def V7():
    return generate_random_potential(7, 2, 2, 17, 0.25, 3.0)


@pytest.fixture(scope="module")
def pairs7(V7):
    return solve(directional_part(V7, 0), 128)


@pytest.fixture(scope="module")
def ctx(V7, pairs7):
    return build_context(V7, 0, AsymptoticParams(rho=10.0, alpha=0.04, l=17), pairs=pairs7)


def test_context_shapes(ctx):
    assert ctx.j_max == 64 and ctx.m == 2
    assert len(ctx.lam1d) == 130
    assert ctx.energy(BASE) == pytest.approx(ctx.lam1d[2] + 196)
    with pytest.raises(CoverageError):
        ctx.column(65, 0)


@pytest.mark.parametrize("dst,target", [
    ((0, 13), State(1, 0, (0, 13))),
    ((0, 15), State(2, 1, (0, 15))),
    ((0, 15), State(0, 1, (0, 15))),
    ((0, 13), State(4, 1, (0, 13))),
])
def test_block_matches_literal_sum(ctx, dst, target):
    A = ctx.a_block(BASE.beta, dst, 1)
    got = A[ctx.column(BASE.j, BASE.slot), ctx.column(target.j, target.slot)]
    want = a_coefficient(BASE, target, ctx.table, ctx.pairs, ctx.radius(1))
    assert got == pytest.approx(want, abs=1e-13)


def test_coupling_closed_form(ctx, V7):
    # at rho = 10 only the orbit (0, 1) survives truncation; W(x) = 2 v cos(x_2), and
    # (2/pi) int cos(14y) cos(13y) 2 cos(y) dy = 1, leaving sum_{n < 2r} phi_t(n)^T v phi_s(n)
    assert list(ctx.table.entries) == [((0, 1), 0)]
    v = V7.coefficients[(0, 1)]
    phi_s = ctx.pairs.coeffs(ctx.pairs.band(1)[0])
    phi_t = ctx.pairs.coeffs(ctx.pairs.band(2)[1])
    n_max = math.ceil(2 * ctx.radius(1))
    want = sum(phi_t[n] @ v @ phi_s[n] for n in range(n_max))
    got = a_coefficient(BASE, State(2, 1, (0, 13)), ctx.table, ctx.pairs, ctx.radius(1))
    assert got == pytest.approx(want, abs=1e-14)


def test_unclipped_blocks_are_symmetric(ctx):
    # with the source cut and band window far outside the basis, A is an exact Galerkin sandwich
    step = 6
    for dst in ctx.neighbours(BASE.beta)[:4]:
        A = ctx.a_block(BASE.beta, dst, step)
        B = ctx.a_block(dst, BASE.beta, step)
        if A is None:
            assert B is None
            continue
        np.testing.assert_allclose(A, B.T, atol=1e-13)


@pytest.mark.parametrize("k", [1, 2])
def test_stepwise_sum_matches_path_enumeration(ctx, k):
    Lam = ctx.energy(BASE) + 1e-4
    fast = s_k(ctx, BASE, Lam, k, check_guards=False)
    slow = s_k_enumerate(ctx, BASE, Lam, k)
    assert fast == pytest.approx(slow, rel=1e-10, abs=1e-18)


def test_path_sum_limits(ctx):
    with pytest.raises(ParameterError):
        path_sums(ctx, BASE, ctx.energy(BASE), k_max=31)
    with pytest.raises(ParameterError):
        path_sums(ctx, BASE, ctx.energy(BASE), k_max=0)


def test_guard_fires_on_tight_floor(V7, pairs7):
    tight = build_context(V7, 0, AsymptoticParams(rho=10.0, alpha=0.04, l=17), pairs=pairs7,
                          denominator_factor=1e6)
    with pytest.raises(SmallDenominatorError) as info:
        path_sums(tight, BASE, tight.energy(BASE), k_max=2)
    assert info.value.state is not None


def test_iteration_basics(ctx):
    st = e_iterate(ctx, BASE, 3, k_max=4)
    assert st.E[0] == 0.0
    assert len(st.E) == 4 and len(st.S_terms) == 3
    assert st.bound_ok
    assert st.min_denominator > 0
    # successive corrections settle: the change shrinks each round
    assert abs(st.E[3] - st.E[2]) <= abs(st.E[2] - st.E[1]) + 1e-15
    value, budget = predict(st, 2, 10.0, 0.36)
    assert value == st.lambda_base + st.E[1]
    assert budget == pytest.approx(10.0 ** -0.72)
    with pytest.raises(ParameterError):
        st.prediction(5)


def test_separable_potential_has_no_corrections():
    P = DirectionalPotential(0, 1.0, 2, {1: np.diag([0.2, -0.1])})
    V = separable_potential(BoxGeometry((math.pi, math.pi)), P, l=17)
    ctx0 = build_context(V, 0, AsymptoticParams(rho=10.0, alpha=0.04, l=17), pairs=solve(P, 64))
    st = e_iterate(ctx0, BASE, 2)
    assert st.E == (0.0, 0.0, 0.0)
    assert a_sum(ctx0, BASE) == 0.0


def test_a_sum_is_row_l1_norm(ctx):
    col = ctx.column(BASE.j, BASE.slot)
    parts = []
    for dst in ctx.neighbours(BASE.beta):
        A = ctx.a_block(BASE.beta, dst, 1)
        if A is None:
            continue
        for c2 in range(A.shape[1]):
            if dst == BASE.beta and c2 == col:
                continue
            parts.append(abs(A[col, c2]))
    assert a_sum(ctx, BASE) == pytest.approx(math.fsum(parts), rel=1e-14)
    assert 0 < a_sum(ctx, BASE) < 1


def test_h_functions_and_selection(ctx):
    hs = h_functions(ctx, BASE)
    assert [h.i for h in hs] == [1, 2, 3]
    assert all(h.norm > 0 for h in hs)
    zero = {beta: np.zeros(len(ctx.lam1d)) for h in hs for beta in h.coeffs}
    ok, rhs = selection_check(0.9, hs[0], zero, 3)
    assert ok and rhs == 0.0
    # <psi, h/|h|> with psi = h/|h| is 1, so |c|^2 must exceed 1/(2 p2)
    unit = {beta: v / hs[0].norm for beta, v in hs[0].coeffs.items()}
    assert selection_check(0.3, hs[0], unit, 3)[0] is False
    assert selection_check(0.5, hs[0], unit, 3)[0] is True


def test_residual_path_sum_is_linear_in_overlaps(ctx):
    Lam = ctx.energy(BASE)
    betas = reachable_betas(ctx, BASE.beta, 3)
    rng = np.random.default_rng(0)
    x = {b: rng.normal(size=len(ctx.lam1d)) for b in betas}
    y = {b: rng.normal(size=len(ctx.lam1d)) for b in betas}
    xy = {b: x[b] + 2 * y[b] for b in betas}
    a = residual_path_sum(ctx, BASE, Lam, 2, x)
    b = residual_path_sum(ctx, BASE, Lam, 2, y)
    assert residual_path_sum(ctx, BASE, Lam, 2, xy) == pytest.approx(a + 2 * b, rel=1e-10)
    zero = {b: np.zeros(len(ctx.lam1d)) for b in betas}
    assert residual_path_sum(ctx, BASE, Lam, 2, zero) == 0.0


def test_reachable_betas_grow(ctx):
    one = reachable_betas(ctx, BASE.beta, 1)
    two = reachable_betas(ctx, BASE.beta, 2)
    assert BASE.beta in one and set(one) <= set(two)
    assert all(b[0] == 0 and b[1] >= 0 for b in two)
