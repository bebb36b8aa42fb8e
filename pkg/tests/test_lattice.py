from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_lattice
from spectra.errors import GeometryError, ParameterError, ShellError
from spectra.lattice import (
    HIGHER_RESONANCE,
    NON_RESONANCE,
    SINGLE_RESONANCE,
    AsymptoticParams,
    BoxGeometry,
    LatticeVector,
    build_lattice,
    classify,
    decompose,
    estimate_measure_ratio,
    lattice_indices,
    shell_orbits,
    splitmix64,
    uniform01,
)

PI_BOX = BoxGeometry((math.pi, math.pi))


def params(rho, **kw):
    return AsymptoticParams(rho=rho, alpha=0.04, l=17, **kw)


def test_geometry_rejects_bad_boxes():
    with pytest.raises(GeometryError):
        BoxGeometry((math.pi,))
    with pytest.raises(GeometryError):
        BoxGeometry((math.pi, 0.0))
    with pytest.raises(GeometryError):
        BoxGeometry((math.pi, float("inf")))


def test_lattice_counts_on_pi_box():
    # integer points strictly inside circles of radius 1.5 and 2.5
    assert len(build_lattice(PI_BOX, 1.5)) == 9
    assert len(build_lattice(PI_BOX, 2.5)) == 21
    # boundary points are excluded: |(1,0)| = 1
    assert len(build_lattice(PI_BOX, 1.0)) == 1


@pytest.mark.parametrize("a,cutoff", [((math.pi, math.pi), 4.3), ((2.0, 3.5), 5.1), ((1.0, 2.0, 3.0), 7.0)])
def test_lattice_matches_nested_loops(a, cutoff):
    geometry = BoxGeometry(a)
    got = sorted(tuple(v) for v in lattice_indices(geometry, cutoff).tolist())
    assert got == brute_lattice(a, cutoff)
    nonneg = sorted(tuple(v) for v in lattice_indices(geometry, cutoff, nonnegative=True).tolist())
    assert nonneg == [g for g in brute_lattice(a, cutoff) if min(g) >= 0]


def test_lattice_vector_properties():
    geometry = BoxGeometry((2.0, math.pi))
    g = LatticeVector((3, -1), geometry)
    np.testing.assert_allclose(g.frequency, [1.5 * math.pi, -1.0])
    assert g.norm2 == pytest.approx((1.5 * math.pi) ** 2 + 1)
    assert g.multiplicity == 4
    assert LatticeVector((0, 2), geometry).multiplicity == 2
    assert LatticeVector((0, 0), geometry).multiplicity == 1
    assert g.orbit == (3, 1)
    with pytest.raises(GeometryError):
        LatticeVector((1, 2, 3), geometry)


@given(st.integers(-40, 40), st.integers(-40, 40), st.integers(0, 1))
def test_decompose_reassembles(n1, n2, axis):
    g = LatticeVector((n1, n2), PI_BOX)
    j, beta = decompose(g, axis)
    assert beta.index[axis] == 0
    rebuilt = list(beta.index)
    rebuilt[axis] = j
    assert tuple(rebuilt) == g.index
    assert g.norm2 == pytest.approx(j * j + beta.norm2)


def test_parameter_derived_quantities():
    p = params(20.0)
    assert p.alpha1 == pytest.approx(0.12)
    assert p.alpha2 == pytest.approx(0.36)
    assert p.p == 15
    assert p.q == 27  # floor(2 / 0.08 + 2)
    assert p.p2 == 3  # floor(2 / 0.72) + 1
    assert p.r1 == pytest.approx(20**0.12 + 1)
    assert p.r(3) == pytest.approx(49 * p.r1)
    assert p.witness_radius == pytest.approx(15 * 20**0.04)


@pytest.mark.parametrize("kw", [
    {"alpha": 0.05},   # alpha >= 1/(d+20)
    {"alpha": 0.0},
    {"l": 14},          # l <= (d+20)(d-1)/2 + d + 3 = 16
    {"rho": -1.0},
    {"c1": 2.0, "c2": 1.0},
])
def test_parameter_validation(kw):
    base = {"rho": 10.0, "alpha": 0.04, "l": 17}
    base.update(kw)
    with pytest.raises(ParameterError):
        AsymptoticParams(**base)


def test_shell_orbits_are_nonnegative_and_inside():
    p = params(10.0)
    idx = shell_orbits(PI_BOX, p)
    norms = np.sqrt(PI_BOX.norm2(idx))
    assert np.all(idx >= 0)
    assert np.all((norms > 5) & (norms < 20))
    expected = [g for g in brute_lattice(PI_BOX.edge_lengths, 20.0) if min(g) >= 0 and sum(n * n for n in g) > 25]
    assert len(idx) == len(expected)


def test_classify_outside_shell():
    with pytest.raises(ShellError):
        classify(LatticeVector((1, 1), PI_BOX), params(10.0))


def _witness_levels(index, p):
    """Brute loop over b: the resonance values |2 gamma.b + |b|^2| for 0 < |b| < p rho^alpha."""
    out = {}
    for b in brute_lattice(PI_BOX.edge_lengths, p.witness_radius):
        if b == (0, 0):
            continue
        out[b] = abs(2 * sum(x * y for x, y in zip(index, b)) + sum(y * y for y in b))
    return out


def _brute_class(index, p):
    values = _witness_levels(index, p)
    w1, w2 = p.rho**p.alpha1, p.rho**p.alpha2
    if not any(v < w1 for v in values.values()):
        return NON_RESONANCE
    e2 = [b for b, v in values.items() if v < w2 and math.gcd(*b) == 1]
    if len(e2) >= 2 and np.linalg.matrix_rank(np.array(e2, dtype=float)) >= 2:
        return HIGHER_RESONANCE
    return "single-or-bounds"


@pytest.mark.parametrize("rho", [10.0, 20.0])
def test_classify_agrees_with_brute_force(rho):
    p = params(rho)
    for idx in shell_orbits(PI_BOX, p)[::7].tolist():
        got = classify(LatticeVector(tuple(idx), PI_BOX), p)
        want = _brute_class(idx, p)
        if want == "single-or-bounds":
            assert got.tag in (SINGLE_RESONANCE, HIGHER_RESONANCE)
        else:
            assert got.tag == want, idx


def _single_points(rho):
    p = params(rho)
    out = []
    for idx in shell_orbits(PI_BOX, p).tolist():
        c = classify(LatticeVector(tuple(idx), PI_BOX), p)
        if c.is_single and c.axis == 0:
            out.append(tuple(idx))
    return sorted(out)


def test_single_resonance_sets_frozen():
    # reference values from the brute witness scan above, restricted to axis e_1
    assert _single_points(10.0) == [(0, 15), (0, 16), (1, 14), (1, 16)]
    assert _single_points(20.0) == [(0, 15), (0, 16), (0, 20), (0, 27), (0, 29), (0, 35), (0, 36), (0, 37),
                                    (0, 38), (0, 39), (1, 14), (1, 16), (1, 21), (1, 23), (1, 27), (1, 28),
                                    (1, 29), (1, 30), (1, 35), (1, 36), (1, 38)]


def test_single_resonance_record_contents():
    p = params(10.0)
    c = classify(LatticeVector((1, 14), PI_BOX), p)
    assert c.tag == SINGLE_RESONANCE and c.axis == 0
    assert c.direction == (1, 0)
    assert c.j == 1 and c.beta == (0, 14)
    assert (-1, 0) in c.witnesses
    for b in c.witnesses:
        assert _witness_levels((1, 14), p)[b] < p.rho**p.alpha1


def test_second_witness_must_be_shortest_on_its_line():
    p = params(10.0)
    # (0, 15) meets b = (9, -3) exactly, but (3, -1) is the shortest vector on that line and
    # gives |2 gamma.b + |b|^2| = 20, so the point stays single-resonant
    assert _witness_levels((0, 15), p)[(9, -3)] == 0
    assert _witness_levels((0, 15), p)[(3, -1)] == 20
    assert classify(LatticeVector((0, 15), PI_BOX), p).is_single
    # (3, 5) has the independent primitive witnesses (1, -1) and (-3, 1), both at level 2 < rho^alpha_2
    assert _witness_levels((3, 5), p)[(1, -1)] == 2 and _witness_levels((3, 5), p)[(-3, 1)] == 2
    c = classify(LatticeVector((3, 5), PI_BOX), p)
    assert c.tag == HIGHER_RESONANCE and c.order == 2


def test_splitmix64_reference_stream():
    # published SplitMix64 outputs for state 0
    out = splitmix64(0, np.arange(3))
    assert [int(v) for v in out] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


@given(st.integers(0, 2**64 - 1))
@settings(max_examples=30)
def test_uniform01_range_and_counter_addressing(seed):
    u = uniform01(seed, np.arange(50))
    assert np.all((u >= 0) & (u < 1))
    np.testing.assert_array_equal(u[10:20], uniform01(seed, np.arange(10, 20)))


def test_measure_ratio_is_chunk_independent_and_bounded():
    p = params(10.0)
    a = estimate_measure_ratio(0, p, PI_BOX, 5000, seed=3, chunk=777)
    b = estimate_measure_ratio(0, p, PI_BOX, 5000, seed=3, chunk=8192)
    assert a == b
    assert 0 <= a.ratio <= 1
    assert a.stderr == pytest.approx(math.sqrt(a.ratio * (1 - a.ratio) / a.accepted))
    with pytest.raises(ParameterError):
        estimate_measure_ratio(0, p, PI_BOX, 0, seed=3)
