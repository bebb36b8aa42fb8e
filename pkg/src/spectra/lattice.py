"""Dual lattice of the Neumann box, resonance sets and their classification.

Lattice vectors are stored by integer index ``n``; the frequency vector is
``(n_1 pi/a_1, ..., n_d pi/a_d)``.  A point ``x`` lies in the resonance set
``V_b(w)`` when ``| |x|^2 - |x+b|^2 | = |2 x.b + |b|^2| < w``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    GeometryError,
    InsufficientSamplesError,
    ParameterError,
    ShellError,
)

NON_RESONANCE = "NonResonance"
SINGLE_RESONANCE = "SingleResonance"
HIGHER_RESONANCE = "HigherResonance"


@dataclass(frozen=True)
class BoxGeometry:
    """The box ``[0, a_1] x ... x [0, a_d]``."""

    edge_lengths: tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(a) for a in self.edge_lengths)
        object.__setattr__(self, "edge_lengths", edges)
        if len(edges) < 2:
            raise GeometryError(f"dimension must be at least 2, got {len(edges)}")
        if any(not (a > 0) or not math.isfinite(a) for a in edges):
            raise GeometryError(f"edge lengths must be positive, got {edges}")

    @property
    def d(self) -> int:
        return len(self.edge_lengths)

    @property
    def volume(self) -> float:
        return math.prod(self.edge_lengths)

    @cached_property
    def spacing(self) -> np.ndarray:
        """Frequency of the unit index along each axis, ``pi / a_k``."""
        return np.pi / np.asarray(self.edge_lengths)

    def axis_norm(self, axis: int) -> float:
        return float(self.spacing[axis])

    def frequency(self, index) -> np.ndarray:
        return np.asarray(index, dtype=float) * self.spacing

    def norm2(self, index) -> float | np.ndarray:
        f = self.frequency(index)
        return np.sum(f * f, axis=-1)


@dataclass(frozen=True)
class LatticeVector:
    index: tuple[int, ...]
    geometry: BoxGeometry = field(repr=False)

    def __post_init__(self):
        idx = tuple(int(n) for n in self.index)
        if len(idx) != self.geometry.d:
            raise GeometryError(f"index {idx} does not match dimension {self.geometry.d}")
        object.__setattr__(self, "index", idx)

    @property
    def frequency(self) -> np.ndarray:
        return self.geometry.frequency(self.index)

    @property
    def norm2(self) -> float:
        return float(self.geometry.norm2(self.index))

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm2)

    @property
    def multiplicity(self) -> int:
        """Size of the sign-flip orbit ``|A_gamma|``."""
        return 2 ** sum(1 for n in self.index if n != 0)

    @property
    def orbit(self) -> tuple[int, ...]:
        """Nonnegative representative of the sign-flip orbit."""
        return tuple(abs(n) for n in self.index)


def lattice_indices(geometry: BoxGeometry, cutoff: float, nonnegative: bool = False) -> np.ndarray:
    """Integer indices with ``|gamma| < cutoff`` in lexicographic order, shape (N, d)."""
    if cutoff < 0:
        raise ParameterError(f"cutoff must be nonnegative, got {cutoff}")
    bounds = [int(math.floor(cutoff / s)) for s in geometry.spacing]
    axes = [np.arange(0 if nonnegative else -b, b + 1) for b in bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, geometry.d)
    keep = geometry.norm2(grid) < cutoff * cutoff
    return grid[keep]


def build_lattice(geometry: BoxGeometry, cutoff: float) -> list[LatticeVector]:
    """All vectors of the full (signed) lattice strictly inside the ball of radius ``cutoff``."""
    return [LatticeVector(tuple(row), geometry) for row in lattice_indices(geometry, cutoff).tolist()]


def decompose(gamma: LatticeVector, axis: int) -> tuple[int, LatticeVector]:
    """Split ``gamma = j e_axis + beta`` with ``beta`` orthogonal to the axis."""
    idx = list(gamma.index)
    j = idx[axis]
    idx[axis] = 0
    return j, LatticeVector(tuple(idx), gamma.geometry)


@dataclass(frozen=True)
class AsymptoticParams:
    """Scale parameters of the expansion.

    ``delta_norm`` is ``|delta|`` for the resonance direction and only enters
    the radii ``r_k``; use :meth:`for_direction` to bind it to an axis.
    """

    rho: float
    alpha: float
    l: int
    d: int = 2
    delta_norm: float = 1.0
    c1: float = 0.5
    c2: float = 2.0

    def __post_init__(self):
        if not self.rho > 0:
            raise ParameterError(f"rho must be positive, got {self.rho}")
        if self.d < 2:
            raise ParameterError(f"d must be at least 2, got {self.d}")
        if not 0 < self.alpha < 1.0 / (self.d + 20):
            raise ParameterError(f"alpha must lie in (0, 1/(d+20)) = (0, {1 / (self.d + 20):.6g}), got {self.alpha}")
        a1, a2 = self.alpha_k(1), self.alpha_k(2)
        if not (2 * a2 - a1 + (self.d + 3) * self.alpha < 1 and a2 > 2 * a1):
            raise ParameterError("alpha violates 2 alpha_2 - alpha_1 + (d+3) alpha < 1 or alpha_2 > 2 alpha_1")
        l_min = (self.d + 20) * (self.d - 1) / 2 + self.d + 3
        if not self.l > l_min:
            raise ParameterError(f"decay order l must exceed {l_min}, got {self.l}")
        if self.p < 1:
            raise ParameterError(f"p = l - d must be at least 1, got {self.p}")
        if not 0 < self.c1 < self.c2:
            raise ParameterError(f"shell constants must satisfy 0 < c1 < c2, got {self.c1}, {self.c2}")
        if not self.delta_norm > 0:
            raise ParameterError("delta_norm must be positive")

    def alpha_k(self, k: int) -> float:
        return 3**k * self.alpha

    @property
    def alpha1(self) -> float:
        return self.alpha_k(1)

    @property
    def alpha2(self) -> float:
        return self.alpha_k(2)

    @property
    def p(self) -> int:
        return self.l - self.d

    @property
    def q(self) -> int:
        # integer part; the epsilon absorbs d/(2 alpha) landing a hair below an integer
        return int(math.floor(self.d / (2 * self.alpha) + 2 + 1e-9))

    @property
    def p2(self) -> int:
        return int(math.floor(self.d / (2 * self.alpha2) + 1e-9)) + 1

    @property
    def r1(self) -> float:
        return self.rho**self.alpha1 / self.delta_norm**2 + 1

    def r(self, k: int) -> float:
        """``r_k = 7 r_{k-1}``."""
        if k < 1:
            raise ParameterError("radius order starts at 1")
        return self.r1 * 7 ** (k - 1)

    @property
    def truncation_radius(self) -> float:
        return self.rho**self.alpha

    @property
    def witness_radius(self) -> float:
        return self.p * self.rho**self.alpha

    @property
    def shell(self) -> tuple[float, float]:
        return self.c1 * self.rho, self.c2 * self.rho

    def with_rho(self, rho: float) -> "AsymptoticParams":
        return replace(self, rho=float(rho))

    def for_direction(self, geometry: BoxGeometry, axis: int) -> "AsymptoticParams":
        return replace(self, delta_norm=geometry.axis_norm(axis), d=geometry.d)

    def as_dict(self) -> dict:
        return {
            "rho": self.rho, "alpha": self.alpha, "l": self.l, "d": self.d,
            "delta_norm": self.delta_norm, "c1": self.c1, "c2": self.c2,
            "alpha1": self.alpha1, "alpha2": self.alpha2, "p": self.p, "q": self.q,
            "p2": self.p2, "r1": self.r1,
        }


@dataclass(frozen=True)
class DomainClass:
    """Outcome of :func:`classify`.

    ``axis`` is set for single resonance along a coordinate direction;
    ``direction`` is the primitive witness direction (index form) in every
    single-resonance case, including off-axis lines where ``axis`` is None.
    """

    tag: str
    witnesses: tuple[tuple[int, ...], ...] = ()
    axis: int | None = None
    direction: tuple[int, ...] | None = None
    j: int | None = None
    beta: tuple[int, ...] | None = None
    order: int | None = None
    note: str = ""

    @property
    def is_single(self) -> bool:
        return self.tag == SINGLE_RESONANCE and self.axis is not None


@dataclass(frozen=True)
class _WitnessPool:
    index: np.ndarray  # (B, d) int
    freq: np.ndarray  # (B, d)
    norm2: np.ndarray  # (B,)
    primitive: np.ndarray  # (B,) bool
    line_id: np.ndarray  # (B,) int, equal for b and -b


@lru_cache(maxsize=64)
def _witness_pool(geometry: BoxGeometry, radius: float) -> _WitnessPool:
    idx = lattice_indices(geometry, radius)
    idx = idx[np.any(idx != 0, axis=1)]
    gcd = np.gcd.reduce(np.abs(idx), axis=1)
    primitive = gcd == 1
    # canonical sign: first nonzero component positive
    first = np.argmax(idx != 0, axis=1)
    sign = np.sign(idx[np.arange(len(idx)), first])
    canon = idx * sign[:, None] // gcd[:, None]
    _, line_id = np.unique(canon, axis=0, return_inverse=True)
    freq = geometry.frequency(idx)
    return _WitnessPool(idx, freq, np.sum(freq * freq, axis=1), primitive, line_id.reshape(-1))


def resonance_values(x: np.ndarray, freq: np.ndarray, norm2: np.ndarray) -> np.ndarray:
    """``|2 x.b + |b|^2|`` for every row ``b`` of ``freq``; ``x`` may be (d,) or (n, d)."""
    return np.abs(2.0 * (np.asarray(x) @ freq.T) + norm2)


def _resonance_order(values: np.ndarray, pool: _WitnessPool, params: AsymptoticParams) -> int | None:
    # only the shortest vector on each lattice line may serve as an E_k witness
    order = None
    for k in range(2, params.d + 1):
        hits = pool.primitive & (values < params.rho ** params.alpha_k(k))
        if np.count_nonzero(hits) >= k and np.linalg.matrix_rank(pool.freq[hits]) >= k:
            order = k
    return order


def classify(gamma: LatticeVector, params: AsymptoticParams, geometry: BoxGeometry | None = None) -> DomainClass:
    """Place ``gamma`` in the non-resonance, single-resonance or higher-resonance domain.

    The scan runs over every ``b`` with ``0 < |b| < p rho^alpha``.  Higher
    resonance is decided first (membership in some ``E_k``, ``k >= 2``, with
    linearly independent witnesses at level ``rho^alpha_k``, each the
    shortest lattice vector on its line).
    Otherwise the resonance direction is the coordinate axis ``e_k`` whose
    value ``| |gamma|^2 - |gamma +- e_k|^2 |`` is smallest, ties going to the
    lower axis.
    """
    geometry = geometry or gamma.geometry
    lo, hi = params.shell
    norm = math.sqrt(float(geometry.norm2(gamma.index)))
    if not lo < norm < hi:
        raise ShellError(f"|gamma| = {norm:.6g} outside the shell ({lo:.6g}, {hi:.6g}) for rho = {params.rho}")
    pool = _witness_pool(geometry, params.witness_radius)
    x = geometry.frequency(gamma.index)
    values = resonance_values(x, pool.freq, pool.norm2)
    w1 = params.rho**params.alpha1
    in_v = values < w1
    witnesses = tuple(tuple(int(v) for v in row) for row in pool.index[in_v].tolist())
    if not witnesses:
        return DomainClass(NON_RESONANCE)

    order = _resonance_order(values, pool, params)
    if order is not None:
        return DomainClass(HIGHER_RESONANCE, witnesses, order=order)

    best = None
    for axis in range(geometry.d):
        e = geometry.axis_norm(axis)
        for sign in (1, -1):
            val = abs(2 * sign * x[axis] * e + e * e)
            if val < w1 and (best is None or val < best[0]):
                best = (val, axis)
    if best is None:
        k = int(np.argmin(np.where(in_v, values, np.inf)))
        b = pool.index[k]
        g = int(np.gcd.reduce(np.abs(b)))
        return DomainClass(SINGLE_RESONANCE, witnesses, direction=tuple(int(v) // g for v in b),
                           note="off-axis resonance line")

    axis = best[1]
    local = params.for_direction(geometry, axis)
    j, beta = decompose(gamma, axis)
    beta_freq = np.abs(beta.frequency)
    others = [k for k in range(geometry.d) if k != axis]
    ok = abs(j) < local.r1 and all(beta_freq[k] > w1 / 3 for k in others)
    direction = tuple(1 if k == axis else 0 for k in range(geometry.d))
    if not ok:
        return DomainClass(HIGHER_RESONANCE, witnesses, order=2, direction=direction,
                           note="single-resonance bounds violated")
    return DomainClass(SINGLE_RESONANCE, witnesses, axis=axis, direction=direction, j=j, beta=beta.index)


def shell_orbits(geometry: BoxGeometry, params: AsymptoticParams) -> np.ndarray:
    """Nonnegative indices strictly inside the shell ``c1 rho < |gamma| < c2 rho``."""
    lo, hi = params.shell
    idx = lattice_indices(geometry, hi, nonnegative=True)
    return idx[geometry.norm2(idx) > lo * lo]


def classification_rows(gammas: Iterable[LatticeVector], classes: Iterable[DomainClass]) -> list[dict]:
    rows = []
    for g, c in zip(gammas, classes):
        rows.append({
            "index": " ".join(str(n) for n in g.index),
            "norm2": g.norm2,
            "tag": c.tag,
            "delta": "" if c.direction is None else " ".join(str(n) for n in c.direction),
            "j": "" if c.j is None else c.j,
            "beta": "" if c.beta is None else " ".join(str(n) for n in c.beta),
            "witness_count": len(c.witnesses),
        })
    return rows


CLASSIFICATION_COLUMNS = ("index", "norm2", "tag", "delta", "j", "beta", "witness_count")


def write_classification_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CLASSIFICATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (format(v, ".17g") if isinstance(v, float) else v) for k, v in row.items()})


# -- Monte Carlo ----------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, counters: np.ndarray) -> np.ndarray:
    """Counter-based SplitMix64.

    Output ``i`` is ``mix(seed + (counters[i] + 1) * 0x9E3779B97F4A7C15)``
    (all arithmetic mod 2**64) with the standard finalizer
    ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
    z *= 0x94D049BB133111EB; z ^= z >> 31``.
    """
    with np.errstate(over="ignore"):
        z = np.uint64(seed % 2**64) + (np.asarray(counters, dtype=np.uint64) + np.uint64(1)) * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def uniform01(seed: int, counters: np.ndarray) -> np.ndarray:
    """Doubles in [0, 1) from the top 53 bits of :func:`splitmix64`."""
    return (splitmix64(seed, counters) >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class MeasureEstimate:
    ratio: float
    stderr: float
    accepted: int
    samples: int
    rho: float


def estimate_measure_ratio(axis: int, params: AsymptoticParams, geometry: BoxGeometry, samples: int,
                           seed: int, chunk: int = 8192) -> MeasureEstimate:
    """Fraction of ``V_delta(rho^alpha_1)`` inside the shell that avoids ``E_2``.

    Proposals are uniform in the bounding box of the slab
    ``V_delta(rho^alpha_1)`` cut to ``|x_k| <= c2 rho``; sample ``i`` uses
    counters ``i*d .. i*d + d-1`` of :func:`uniform01`, so the estimate does
    not depend on chunking.
    """
    if samples < 1:
        raise ParameterError("samples must be at least 1")
    d = geometry.d
    e = geometry.axis_norm(axis)
    w1 = params.rho**params.alpha1
    w2 = params.rho**params.alpha2
    lo, hi = params.shell
    # |2 e x_axis + e^2| < w1
    centre, half = -e / 2, w1 / (2 * e)
    low = np.full(d, -hi)
    width = np.full(d, 2 * hi)
    low[axis], width[axis] = centre - half, 2 * half
    pool = _witness_pool(geometry, params.witness_radius)
    prim = pool.primitive
    freq, norm2, ids = pool.freq[prim], pool.norm2[prim], pool.line_id[prim]
    accepted = single = 0
    for start in range(0, samples, chunk):
        n = min(chunk, samples - start)
        counters = np.arange(start * d, (start + n) * d, dtype=np.uint64)
        x = low + width * uniform01(seed, counters).reshape(n, d)
        r2 = np.sum(x * x, axis=1)
        slab = np.abs(2 * e * x[:, axis] + e * e) < w1
        x = x[(r2 > lo * lo) & (r2 < hi * hi) & slab]
        if not len(x):
            continue
        hits = resonance_values(x, freq, norm2) < w2
        big = np.iinfo(np.int64).max
        first = np.where(hits, ids, big).min(axis=1)
        last = np.where(hits, ids, -1).max(axis=1)
        in_e2 = hits.any(axis=1) & (first != last)
        accepted += len(x)
        single += int(np.count_nonzero(~in_e2))
    if accepted == 0:
        raise InsufficientSamplesError(f"no sample landed in V_delta within the shell ({samples} proposals)")
    ratio = single / accepted
    return MeasureEstimate(ratio, math.sqrt(ratio * (1 - ratio) / accepted), accepted, samples, params.rho)

