"""Perturbation series for eigenvalues near a single-resonance lattice point.

Comparison states are ``(j, slot, beta)``: band ``j`` of the one-dimensional
problem (``slot`` numbers the ``m`` eigenvalues of the band), times the
transverse cosine mode ``uhat_beta``; ``beta`` is a nonnegative orbit index
with zero component along the resonance axis.  The coupling ``A(s -> t)`` is
the matrix element of the truncated off-ray potential between comparison
eigenfunctions, with the source expansion cut at cosine index ``2 r``.

The corrections are Brillouin-Wigner path sums

    S_k(L) = sum A(b, s1) A(s1, s2) ... A(sk, b) / prod_i (L - lambda_{s_i})

over paths avoiding the base state ``b`` between the endpoints; the iteration
``E_0 = 0``, ``E_s = sum_k S_k(lambda_b + E_{s-1})`` yields the predictions
``lambda_b + E_{s-1}``.  Sums are contracted step by step over the state
space rather than by enumerating paths.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import cosine_block, pair_weight
from .errors import CoverageError, ParameterError, SmallDenominatorError
from .lattice import AsymptoticParams, BoxGeometry
from .potential import CouplingTable, MatrixFourierPotential, coupling_table, directional_part, truncate
from .sturm1d import EigenpairSet, band_table, minimum_gap, solve

DEFAULT_K_MAX = 4
DEFAULT_N_TRUNC = 256

Beta = tuple[int, ...]


@dataclass(frozen=True)
class State:
    j: int
    slot: int
    beta: Beta


@dataclass
class ExpansionContext:
    """Everything needed to evaluate couplings for one direction at one ``rho``."""

    params: AsymptoticParams
    geometry: BoxGeometry
    axis: int
    pairs: EigenpairSet
    table: CouplingTable
    gap_floor: float  # c_18
    denominator_factor: float = 0.5
    gap_factor: float = 0.5
    j_max: int = field(init=False)

    def __post_init__(self):
        self.j_max = self.pairs.reliable_max_j
        lam, phi = band_table(self.pairs, self.j_max)
        self.m = self.pairs.m
        self.n_rows = self.pairs.n_trunc + 1
        self.lam1d = lam.reshape(-1)  # column = j * m + slot
        self.phi = phi.reshape(-1, self.n_rows * self.m).T  # ((n, i), column)
        self.col_j = np.repeat(np.arange(self.j_max + 1), self.m)
        self.row_n = np.repeat(np.arange(self.n_rows), self.m)
        self.steps = self.table.transverse_steps()
        self._seq: dict = {}
        self._d: dict = {}
        self._a: dict = {}

    # -- bookkeeping -----------------------------------------------------

    def column(self, j: int, slot: int) -> int:
        if not (0 <= j <= self.j_max and 0 <= slot < self.m):
            raise CoverageError(f"band {j} slot {slot} is outside the labeled range 0..{self.j_max}")
        return j * self.m + slot

    def state(self, beta: Beta, col: int) -> State:
        return State(int(col // self.m), int(col % self.m), beta)

    def beta_norm2(self, beta: Beta) -> float:
        return float(self.geometry.norm2(beta))

    def energies(self, beta: Beta) -> np.ndarray:
        return self.lam1d + self.beta_norm2(beta)

    def energy(self, s: State) -> float:
        return float(self.lam1d[self.column(s.j, s.slot)] + self.beta_norm2(s.beta))

    def neighbours(self, beta: Beta) -> list[Beta]:
        out = {tuple(abs(b + st) for b, st in zip(beta, step)) for step in self.steps}
        return sorted(out)

    def radius(self, step: int) -> float:
        return self.params.r(step)

    # -- coupling blocks -------------------------------------------------

    def _transverse_terms(self, src: Beta, dst: Beta) -> tuple:
        others = [k for k in range(len(src)) if k != self.axis]
        terms = []
        for signs in itertools.product((1, -1), repeat=len(others)):
            b1 = [0] * len(src)
            weight = 1.0
            for k, s in zip(others, signs):
                b1[k] = abs(dst[k] + s * src[k])
                weight *= float(pair_weight(src[k], dst[k]))
            terms.append((tuple(b1), weight))
        return tuple(sorted(terms))

    def _sequence(self, b1: Beta) -> np.ndarray | None:
        if b1 not in self._seq:
            found = {n1: v for (beta1, n1), v in self.table.entries.items() if beta1 == b1}
            if found:
                seq = np.zeros((max(found) + 1, self.m, self.m))
                for n1, v in found.items():
                    seq[n1] = v
                self._seq[b1] = seq
            else:
                self._seq[b1] = None
        return self._seq[b1]

    def d_block(self, src: Beta, dst: Beta):
        """Galerkin block of the off-ray potential from ``uhat_src`` to ``uhat_dst`` (cosine rows ``(n', i)``)."""
        key = self._transverse_terms(src, dst)
        if key not in self._d:
            out = None
            for b1, weight in key:
                seq = self._sequence(b1)
                if seq is None:
                    continue
                blk = weight * cosine_block(seq, self.n_rows)
                out = blk if out is None else out + blk
            self._d[key] = out
        return key, self._d[key]

    def a_block(self, src: Beta, dst: Beta, step: int) -> np.ndarray | None:
        """``A[s, t] = A((j_s, src) -> (j_t, dst))`` at path step ``step``; None when identically zero."""
        key, D = self.d_block(src, dst)
        if D is None:
            return None
        cache_key = (key, step)
        if cache_key not in self._a:
            r = self.radius(step)
            src_phi = np.where((self.row_n < 2 * r)[:, None], self.phi, 0.0)
            A = src_phi.T @ (D.T @ self.phi)
            window = np.abs(self.col_j[:, None] - self.col_j[None, :]) * self.pairs.delta_norm < 6 * r
            self._a[cache_key] = np.where(window, A, 0.0)
        return self._a[cache_key]

    def window(self, step: int) -> np.ndarray:
        r = self.radius(step)
        return np.abs(self.col_j[:, None] - self.col_j[None, :]) * self.pairs.delta_norm < 6 * r


def build_context(V: MatrixFourierPotential, axis: int, params: AsymptoticParams, pairs: EigenpairSet | None = None,
                  n_trunc: int = DEFAULT_N_TRUNC, gap_floor: float | None = None,
                  denominator_factor: float = 0.5, gap_factor: float = 0.5) -> ExpansionContext:
    geometry = V.geometry
    local = params.for_direction(geometry, axis)
    if pairs is None:
        pairs = solve(directional_part(V, axis), n_trunc)
    truncated, _ = truncate(V, local)
    table = coupling_table(truncated, axis, local)
    if gap_floor is None:
        gap_floor = minimum_gap(pairs, pairs.reliable_max_j)
    return ExpansionContext(local, geometry, axis, pairs, table, gap_floor, denominator_factor, gap_factor)


# -- single coefficients ---------------------------------------------------

def a_coefficient(source: State, target: State, table: CouplingTable, pairs: EigenpairSet, r: float) -> float:
    """``A(source -> target)`` as a direct sum over coupling entries and cosine indices.

    For every transverse sign pattern the table entries ``d(beta_1, n_1)``
    with ``beta_1 = |beta_t + s beta_s|`` couple source index ``n < 2 r`` to
    target index ``n'`` through ``w(n, n') [d(|n'-n|) + d(n'+n)]``.
    """
    axis, m = table.axis, pairs.m
    for s in (source, target):
        if len(pairs.band(s.j)) <= s.slot:
            raise CoverageError(f"band {s.j} slot {s.slot} missing from the 1-D spectrum")
    phi_s = pairs.coeffs(pairs.band(source.j)[source.slot])
    phi_t = pairs.coeffs(pairs.band(target.j)[target.slot])
    n_top = phi_s.shape[0]
    others = [k for k in range(len(source.beta)) if k != axis]
    total = []
    for signs in itertools.product((1, -1), repeat=len(others)):
        b1 = [0] * len(source.beta)
        weight = 1.0
        for k, sg in zip(others, signs):
            b1[k] = abs(target.beta[k] + sg * source.beta[k])
            weight *= float(pair_weight(source.beta[k], target.beta[k]))
        b1 = tuple(b1)
        for (beta1, n1), d in table.entries.items():
            if beta1 != b1:
                continue
            for n in range(min(math.ceil(2 * r), n_top)):
                for n2 in range(n_top):
                    hits = (abs(n2 - n) == n1) + (n2 + n == n1)
                    if not hits:
                        continue
                    w = weight * float(pair_weight(n, n2)) * hits
                    for k in range(m):
                        for i in range(m):
                            total.append(w * d[i, k] * phi_s[n, k] * phi_t[n2, i])
    return math.fsum(total)


def a_sum(ctx: ExpansionContext, base: State, step: int = 1) -> float:
    """``sum_Q |A(base -> t)|`` over all first-step targets."""
    col = ctx.column(base.j, base.slot)
    parts = []
    for dst in ctx.neighbours(base.beta):
        A = ctx.a_block(base.beta, dst, step)
        if A is None:
            continue
        row = np.abs(A[col]).copy()
        if dst == base.beta:
            row[col] = 0.0
        parts.extend(row.tolist())
    return math.fsum(parts)


# -- path sums ---------------------------------------------------------------

@dataclass(frozen=True)
class PathSums:
    terms: tuple[float, ...]  # S_1 .. S_k
    min_denominator: float
    states_visited: int


def _guard(ctx: ExpansionContext, base: State, beta: Beta, denom: np.ndarray, reach: np.ndarray) -> float:
    """Check the denominator dichotomy on reachable states; returns the smallest |denominator|."""
    if not reach.any():
        return math.inf
    if beta != base.beta:
        floor = ctx.denominator_factor * ctx.params.rho ** ctx.params.alpha2
    else:
        floor = ctx.gap_factor * ctx.gap_floor
    vals = np.abs(denom[reach])
    k = int(np.argmin(vals))
    if not vals[k] > floor:
        col = int(np.flatnonzero(reach)[k])
        s = ctx.state(beta, col)
        raise SmallDenominatorError(f"denominator {vals[k]:.4g} at state {s} does not clear {floor:.4g}",
                                    state=s, denominator=float(denom[col]))
    return float(vals[k])


def path_sums(ctx: ExpansionContext, base: State, Lambda: float, k_max: int = DEFAULT_K_MAX,
              check_guards: bool = True) -> PathSums:
    """``S_1 .. S_{k_max}`` at spectral argument ``Lambda`` by step-wise contraction."""
    if k_max < 1:
        raise ParameterError("k_max must be at least 1")
    if k_max > 2 * ctx.params.p:
        raise ParameterError(f"k_max = {k_max} exceeds 2p = {2 * ctx.params.p}")
    bcol = ctx.column(base.j, base.slot)
    K = len(ctx.lam1d)
    f = {base.beta: np.zeros(K)}
    f[base.beta][bcol] = 1.0
    reach = {base.beta: np.zeros(K, dtype=bool)}
    reach[base.beta][bcol] = True
    terms, min_den, visited = [], math.inf, 0
    for step in range(1, k_max + 1):
        g, rg = {}, {}
        window = ctx.window(step)
        for src, vec in f.items():
            for dst in ctx.neighbours(src):
                A = ctx.a_block(src, dst, step)
                if A is None:
                    continue
                g[dst] = g.get(dst, 0.0) + vec @ A
                hit = (reach[src].astype(float) @ window) > 0
                rg[dst] = rg.get(dst, False) | hit
        f, reach = {}, {}
        for dst in sorted(g):
            vec, rc = g[dst], rg[dst].copy()
            if dst == base.beta:
                vec = vec.copy()
                vec[bcol] = 0.0
                rc[bcol] = False
            denom = Lambda - ctx.energies(dst)
            if check_guards:
                min_den = min(min_den, _guard(ctx, base, dst, denom, rc))
            with np.errstate(divide="ignore", invalid="ignore"):
                f[dst] = np.where(rc, vec / denom, 0.0)
            reach[dst] = rc
            visited += int(rc.sum())
        parts = []
        for src, vec in f.items():
            if base.beta in ctx.neighbours(src):
                A = ctx.a_block(src, base.beta, step + 1)
                if A is not None:
                    parts.extend((vec * A[:, bcol]).tolist())
        terms.append(math.fsum(parts))
    return PathSums(tuple(terms), min_den, visited)


def s_k(ctx: ExpansionContext, base: State, Lambda: float, k: int, check_guards: bool = True) -> float:
    return path_sums(ctx, base, Lambda, k, check_guards).terms[k - 1]


def s_k_enumerate(ctx: ExpansionContext, base: State, Lambda: float, k: int) -> float:
    """``S_k`` by explicit depth-first enumeration of every path (reference for small ``k``)."""
    bcol = ctx.column(base.j, base.slot)
    K = len(ctx.lam1d)
    out = []

    def walk(beta, col, step, value):
        if step > k:
            if base.beta in ctx.neighbours(beta):
                A = ctx.a_block(beta, base.beta, step)
                if A is not None:
                    out.append(value * A[col, bcol])
            return
        for dst in ctx.neighbours(beta):
            A = ctx.a_block(beta, dst, step)
            if A is None:
                continue
            en = ctx.energies(dst)
            for c2 in range(K):
                if dst == base.beta and c2 == bcol:
                    continue
                if A[col, c2] == 0.0:
                    continue
                walk(dst, c2, step + 1, value * A[col, c2] / (Lambda - en[c2]))

    walk(base.beta, bcol, 1, 1.0)
    return math.fsum(out)


# -- iteration and prediction -----------------------------------------------

@dataclass(frozen=True)
class ExpansionState:
    base: State
    lambda_base: float
    E: tuple[float, ...]  # E_0 .. E_s
    S_terms: tuple[tuple[float, ...], ...]  # per iteration, S_1 .. S_kmax
    remainder_estimates: tuple[float, ...]  # rho^{-(s+1) alpha_2}
    k_max: int
    min_denominator: float
    states_visited: int
    bound_ok: bool  # |E_s| <= bound_constant * rho^{-alpha_2}

    def prediction(self, order: int) -> float:
        if not 1 <= order <= len(self.E):
            raise ParameterError(f"order {order} not available; iterated to {len(self.E) - 1}")
        return self.lambda_base + self.E[order - 1]


def e_iterate(ctx: ExpansionContext, base: State, s_max: int, k_max: int = DEFAULT_K_MAX,
              bound_constant: float = 1.0) -> ExpansionState:
    if s_max < 1:
        raise ParameterError("s_max must be at least 1")
    lam = ctx.energy(base)
    E, S_all, min_den, visited = [0.0], [], math.inf, 0
    for _ in range(s_max):
        ps = path_sums(ctx, base, lam + E[-1], k_max)
        S_all.append(ps.terms)
        E.append(math.fsum(ps.terms))
        min_den = min(min_den, ps.min_denominator)
        visited += ps.states_visited
    a2 = ctx.params.alpha2
    rho = ctx.params.rho
    remainders = tuple(rho ** (-(s + 1) * a2) for s in range(s_max + 1))
    bound_ok = all(abs(e) <= bound_constant * rho ** (-a2) for e in E)
    return ExpansionState(base, lam, tuple(E), tuple(S_all), remainders, k_max, min_den, visited, bound_ok)


def predict(state: ExpansionState, order: int, rho: float, alpha2: float, budget_constant: float = 1.0) -> tuple[float, float]:
    """``(lambda_base + E_{order-1}, budget_constant * rho^{-order alpha_2})``."""
    return state.prediction(order), budget_constant * rho ** (-order * alpha2)


# -- auxiliary functions ----------------------------------------------------

@dataclass(frozen=True)
class HFunction:
    i: int
    coeffs: dict  # beta -> (K,) coefficients on chi_{(j, slot), beta}
    norm: float

    def inner(self, overlaps: dict) -> float:
        """``<psi, h>`` given ``overlaps[beta][col] = <psi, chi_{col, beta}>``."""
        return math.fsum(float(v @ overlaps[beta]) for beta, v in self.coeffs.items())


def h_functions(ctx: ExpansionContext, base: State, i_max: int | None = None) -> list[HFunction]:
    """``h_i = sum A(b, s1) A(s1, s2) chi_{s2} / (lambda_b - lambda_{s1})^i`` for ``i = 1..i_max``."""
    i_max = ctx.params.p2 if i_max is None else i_max
    bcol = ctx.column(base.j, base.slot)
    lam = ctx.energy(base)
    first = {}
    for b1 in ctx.neighbours(base.beta):
        A = ctx.a_block(base.beta, b1, 1)
        if A is None:
            continue
        row = A[bcol].copy()
        if b1 == base.beta:
            row[bcol] = 0.0
        den = lam - ctx.energies(b1)
        row = np.where(row != 0.0, row, 0.0)
        first[b1] = (row, den)
    out = []
    for i in range(1, i_max + 1):
        coeffs = {}
        for b1, (row, den) in first.items():
            with np.errstate(divide="ignore", invalid="ignore"):
                vec = np.where(row != 0.0, row / den**i, 0.0)
            for b2 in ctx.neighbours(b1):
                A = ctx.a_block(b1, b2, 2)
                if A is None:
                    continue
                coeffs[b2] = coeffs.get(b2, 0.0) + vec @ A
        norm = math.sqrt(math.fsum(float(v @ v) for v in coeffs.values()))
        out.append(HFunction(i, coeffs, norm))
    return out


def selection_check(c: float, h: HFunction, overlaps: dict, p2: int) -> tuple[bool, float] | None:
    """``|c|^2 > |<psi, h/|h|>|^2 / (2 p2)``; None when ``h`` vanishes."""
    if h.norm == 0.0:
        return None
    proj = h.inner(overlaps) / h.norm
    rhs = proj * proj / (2 * p2)
    return c * c > rhs, rhs


def residual_path_sum(ctx: ExpansionContext, base: State, Lambda: float, k: int, overlaps: dict) -> float:
    """``C_k``: paths of ``k`` guarded steps plus one free step, weighted by the oracle overlaps.

    ``overlaps[beta]`` holds ``c(N, (j, slot), beta)`` for every column; the
    final state must differ from ``base``.
    """
    bcol = ctx.column(base.j, base.slot)
    K = len(ctx.lam1d)
    f = {base.beta: np.zeros(K)}
    f[base.beta][bcol] = 1.0
    for step in range(1, k + 1):
        g = {}
        for src, vec in f.items():
            for dst in ctx.neighbours(src):
                A = ctx.a_block(src, dst, step)
                if A is not None:
                    g[dst] = g.get(dst, 0.0) + vec @ A
        f = {}
        for dst, vec in g.items():
            vec = vec.copy()
            if dst == base.beta:
                vec[bcol] = 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                f[dst] = np.where(vec != 0.0, vec / (Lambda - ctx.energies(dst)), 0.0)
    parts = []
    for src, vec in f.items():
        for dst in ctx.neighbours(src):
            A = ctx.a_block(src, dst, k + 1)
            if A is None:
                continue
            last = vec @ A
            c = overlaps[dst].copy()
            if dst == base.beta:
                c[bcol] = 0.0
            parts.extend((last * c).tolist())
    return math.fsum(parts)


def reachable_betas(ctx: ExpansionContext, base: Beta, steps: int) -> list[Beta]:
    seen, front = {base}, {base}
    for _ in range(steps):
        front = {n for b in front for n in ctx.neighbours(b)} - seen
        seen |= front
    return sorted(seen)
