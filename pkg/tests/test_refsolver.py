from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import galerkin_quadrature
from spectra.errors import ContractError, NoMatchError, ResourceError
from spectra.lattice import BoxGeometry
from spectra.potential import (
    DirectionalPotential,
    MatrixFourierPotential,
    directional_part,
    generate_random_potential,
    off_ray_part,
    separable_potential,
    zero_potential,
)
from spectra.refsolver import (
    assemble_L,
    assemble_potential,
    basis_dimension,
    eigen_full,
    embed_comparison,
    largest_cutoff,
    match,
    orbit_basis,
    overlaps,
)
from spectra.sturm1d import solve

PI_BOX = BoxGeometry((math.pi, math.pi))


@pytest.mark.parametrize("a", [(math.pi, math.pi), (2.0, 3.0)])
def test_potential_matrix_against_quadrature(a):
    geometry = BoxGeometry(a)
    V = generate_random_potential(5, 2, 2, 17, 0.4, 2.6, geometry)
    basis = orbit_basis(geometry, 4.0)
    G = assemble_potential(V, basis)
    rng = np.random.default_rng(1)
    picks = rng.integers(0, len(basis), size=(25, 2))
    picks[:3] = [[0, 0], [0, 1], [1, 1]]
    rows = [tuple(basis.indices[i]) for i, _ in picks]
    cols = [tuple(basis.indices[k]) for _, k in picks]
    want = galerkin_quadrature(V.coefficients, a, rows, cols, 2)
    for (i, k), w in zip(picks, want):
        np.testing.assert_allclose(G[2 * i:2 * i + 2, 2 * k:2 * k + 2], w, atol=1e-11)
    np.testing.assert_array_equal(G, G.T)


def test_potential_matrix_three_dimensions():
    geometry = BoxGeometry((math.pi, 2.0, 2.5))
    V = generate_random_potential(2, 2, 3, 30, 0.4, 2.2, geometry)
    basis = orbit_basis(geometry, 3.5)
    G = assemble_potential(V, basis)
    rows = [tuple(basis.indices[i]) for i in (0, 3, 7, 7)]
    cols = [tuple(basis.indices[k]) for k in (5, 3, 2, 11)]
    want = galerkin_quadrature(V.coefficients, geometry.edge_lengths, rows, cols, 2, points=33)
    for (i, k), w in zip([(0, 5), (3, 3), (7, 2), (7, 11)], want):
        np.testing.assert_allclose(G[2 * i:2 * i + 2, 2 * k:2 * k + 2], w, atol=1e-11)


def test_free_spectrum():
    full = eigen_full(zero_potential(PI_BOX, 2), 6.0)
    want = np.sort(np.repeat([n1 * n1 + n2 * n2 for n1 in range(7) for n2 in range(7) if n1 * n1 + n2 * n2 < 36], 2))
    np.testing.assert_allclose(full.eigenvalues, want, atol=1e-12)


def test_dimension_cap():
    with pytest.raises(ResourceError) as info:
        assemble_L(zero_potential(PI_BOX, 2), 30.0, max_dim=100)
    assert info.value.required == basis_dimension(PI_BOX, 30.0, 2)


def test_largest_cutoff_fits():
    c = largest_cutoff(PI_BOX, 2, 400)
    assert basis_dimension(PI_BOX, c, 2) <= 400
    assert basis_dimension(PI_BOX, c + 2e-3, 2) > 400


@given(st.integers(0, 2**31), st.floats(0.05, 0.6))
@settings(max_examples=10, deadline=None)
def test_spectrum_stays_within_sup_bound_of_free_levels(seed, amp):
    V = generate_random_potential(seed, 2, 2, 17, amp, 2.5)
    full = eigen_full(V, 5.0)
    free = np.sort(np.repeat(full.basis.norm2, 2))
    # Weyl: the Galerkin potential block has operator norm at most M
    assert np.max(np.abs(full.eigenvalues - free)) <= V.sup_norm_bound() + 1e-12


def test_comparison_mode_embedding():
    P = DirectionalPotential(0, 1.0, 2, {1: np.diag([0.2, -0.1]), 2: [[0.0, 0.05], [0.05, 0.0]]})
    pairs = solve(P, 64)
    basis = orbit_basis(PI_BOX, 20.0)
    mode = embed_comparison(pairs, 3, 1, (0, 4), basis)
    k = pairs.band(3)[1]
    assert mode.lam == pytest.approx(pairs.eigenvalues[k] + 16)
    assert abs(mode.dropped) < 1e-14
    with pytest.raises(ContractError):
        embed_comparison(pairs, 3, 0, (1, 4), basis)
    with pytest.raises(ContractError):
        embed_comparison(pairs, 3, 2, (0, 4), basis)


def test_separable_overlaps_are_exact_eigenvectors():
    P = DirectionalPotential(0, 1.0, 2, {1: np.diag([0.2, -0.1]), 2: [[0.0, 0.05], [0.05, 0.0]]})
    V = separable_potential(PI_BOX, P)
    pairs = solve(P, 64)
    full = eigen_full(V, 15.0, keep_matrix=True)
    G_off = assemble_potential(off_ray_part(V, 0), full.basis)
    ov = overlaps(full, embed_comparison(pairs, 2, 0, (0, 5), full.basis), full.matrix, G_off)
    assert np.all(ov.coupling == 0)
    assert ov.tail < 1e-12
    assert ov.parseval == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_less(ov.binding_residual, 1e-10)
    res = match(ov, P.sup_norm(), 20.0, 27, 0.04)
    assert abs(res.gap) < 1e-10 and abs(res.c) > 0.99


def test_binding_identity_with_coupling():
    V = generate_random_potential(7, 2, 2, 17, 0.25, 3.0)
    P = directional_part(V, 0)
    pairs = solve(P, 64)
    full = eigen_full(V, 14.0, keep_matrix=True)
    G_off = assemble_potential(off_ray_part(V, 0), full.basis)
    ov = overlaps(full, embed_comparison(pairs, 1, 0, (0, 6), full.basis), full.matrix, G_off)
    assert np.max(ov.binding_residual) <= 1e-9 + ov.tail
    assert np.max(np.abs(ov.coupling)) > 1e-3
    records = ov.records()
    assert len(records) == len(full) and records[0]["N"] == 0


def test_match_failures():
    V = generate_random_potential(7, 2, 2, 17, 0.25, 3.0)
    P = directional_part(V, 0)
    pairs = solve(P, 64)
    full = eigen_full(V, 12.0, keep_matrix=True)
    G_off = assemble_potential(off_ray_part(V, 0), full.basis)
    ov = overlaps(full, embed_comparison(pairs, 0, 0, (0, 7), full.basis), full.matrix, G_off)
    with pytest.raises(NoMatchError):
        match(ov, 1e-12, 10.0, 27, 0.04)
    with pytest.raises(NoMatchError):
        match(ov, 10.0, 1e-3, 27, 0.04)  # threshold rho^(-q alpha) above 1


def test_overlap_shape_contract():
    full = eigen_full(zero_potential(PI_BOX, 2), 5.0, keep_matrix=True)
    pairs = solve(DirectionalPotential(0, 1.0, 2, {}), 16)
    mode = embed_comparison(pairs, 1, 0, (0, 2), full.basis)
    with pytest.raises(ContractError):
        overlaps(full, mode, full.matrix, np.zeros((2, 2)))


def test_json_and_csv(tmp_path):
    V = MatrixFourierPotential(PI_BOX, 2, {(1, 1): [[0.1, 0.0], [0.0, 0.2]]})
    full = eigen_full(V, 4.0, keep_matrix=True)
    full.save(tmp_path / "full.json")
    assert full.to_json()["dimension"] == len(full)
