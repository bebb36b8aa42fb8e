"""Matrix potentials stored as cosine-series coefficients.

Coefficients follow the full-lattice convention: ``v_gamma = (v, u_gamma) / mu(F)``,
stored once per sign-flip orbit on the nonnegative representative, so

    V(x) = sum_{gamma in Gamma/2} v_gamma u_gamma(x)
         = sum_{orbits} |A_gamma| v_gamma u_gamma(x).

The coefficient of ``V`` against the orthonormal function ``uhat_gamma`` is
``sqrt(|A_gamma| mu(F)) v_gamma``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import ConsistencyError, DomainError, ParameterError, PotentialError
from .lattice import AsymptoticParams, BoxGeometry, lattice_indices


def _multiplicity(index) -> int:
    return 2 ** sum(1 for n in index if n != 0)


@dataclass(frozen=True)
class MatrixFourierPotential:
    geometry: BoxGeometry
    m: int
    coefficients: Mapping[tuple[int, ...], np.ndarray]
    l: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise PotentialError(f"matrix size must be positive, got {self.m}")
        clean = {}
        for key, mat in self.coefficients.items():
            key = tuple(int(n) for n in key)
            if len(key) != self.geometry.d or any(n < 0 for n in key):
                raise PotentialError(f"coefficient index {key} is not a nonnegative {self.geometry.d}-index")
            if key in clean:
                raise PotentialError(f"duplicate coefficient index {key}")
            mat = np.array(mat, dtype=float)
            if mat.shape != (self.m, self.m):
                raise PotentialError(f"coefficient at {key} has shape {mat.shape}, expected {(self.m, self.m)}")
            if not np.array_equal(mat, mat.T):
                raise PotentialError(f"coefficient at {key} is not exactly symmetric")
            mat.setflags(write=False)
            clean[key] = mat
        object.__setattr__(self, "coefficients", dict(sorted(clean.items())))

    @property
    def d(self) -> int:
        return self.geometry.d

    def norm(self, index) -> float:
        return math.sqrt(float(self.geometry.norm2(index)))

    def coefficient(self, index) -> np.ndarray:
        """Coefficient at any (signed) lattice index; zero off the support."""
        return self.coefficients.get(tuple(abs(int(n)) for n in index), np.zeros((self.m, self.m)))

    @property
    def support_radius(self) -> float:
        norms = [self.norm(k) for k, v in self.coefficients.items() if np.any(v)]
        return max(norms, default=0.0)

    @cached_property
    def grid(self) -> np.ndarray:
        """Dense orbit-coefficient array, shape ``(K_1+1, .., K_d+1, m, m)``."""
        keys = np.array(list(self.coefficients) or [(0,) * self.d])
        extent = keys.max(axis=0) + 1
        out = np.zeros(tuple(extent) + (self.m, self.m))
        for key, mat in self.coefficients.items():
            out[key] = mat
        out.setflags(write=False)
        return out

    def orthonormal_coefficients(self) -> dict[tuple[int, ...], np.ndarray]:
        scale = self.geometry.volume
        return {k: v * math.sqrt(_multiplicity(k) * scale) for k, v in self.coefficients.items()}

    def orbit_expand(self) -> dict[tuple[int, ...], np.ndarray]:
        """Full signed-lattice map ``gamma -> v_gamma`` (each orbit repeated over its sign flips)."""
        out = {}
        for key, mat in self.coefficients.items():
            nz = [k for k, n in enumerate(key) if n]
            for mask in range(2 ** len(nz)):
                signed = list(key)
                for bit, k in enumerate(nz):
                    if mask >> bit & 1:
                        signed[k] = -signed[k]
                out[tuple(signed)] = mat
        return out

    def sup_norm_bound(self) -> float:
        """``sum_orbits |A_gamma| ||v_gamma||_2``, an upper bound for ``sup_x ||V(x)||_2``."""
        return float(sum(_multiplicity(k) * np.linalg.norm(v, 2) for k, v in self.coefficients.items()))

    def scaled(self, factor: float) -> "MatrixFourierPotential":
        return MatrixFourierPotential(self.geometry, self.m, {k: v * factor for k, v in self.coefficients.items()}, self.l)

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "l": self.l,
            "a": list(self.geometry.edge_lengths),
            "coefficients": [{"index": list(k), "matrix": v.tolist()} for k, v in self.coefficients.items()],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MatrixFourierPotential":
        try:
            geometry = BoxGeometry(tuple(doc["a"]))
            if int(doc["d"]) != geometry.d:
                raise PotentialError(f"d = {doc['d']} disagrees with len(a) = {geometry.d}")
            coeffs = {}
            for entry in doc["coefficients"]:
                key = tuple(int(n) for n in entry["index"])
                if key in coeffs:
                    raise PotentialError(f"duplicate coefficient index {key}")
                coeffs[key] = np.array(entry["matrix"], dtype=float)
            return cls(geometry, int(doc["m"]), coeffs, int(doc.get("l", 0)))
        except (KeyError, TypeError) as exc:
            raise PotentialError(f"malformed potential document: {exc!r}") from exc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "MatrixFourierPotential":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def zero_potential(geometry: BoxGeometry, m: int, l: int = 0) -> MatrixFourierPotential:
    return MatrixFourierPotential(geometry, m, {}, l)


@dataclass(frozen=True)
class DecaySums:
    weighted: np.ndarray  # sum |v|^2 (1 + |gamma|^{2l})
    absolute: np.ndarray  # sum |v|


def validate_decay(potential: MatrixFourierPotential) -> DecaySums:
    """Entrywise orbit sums ``S_ij`` and ``M_ij`` over the stored coefficients."""
    m, l = potential.m, potential.l
    s = np.zeros((m, m))
    a = np.zeros((m, m))
    for key, v in potential.coefficients.items():
        s += v * v * (1.0 + potential.norm(key) ** (2 * l))
        a += np.abs(v)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a))):
        raise ConsistencyError("decay sums are not finite")
    return DecaySums(s, a)


@dataclass(frozen=True)
class TruncationReport:
    radius: float
    tail: np.ndarray  # entrywise l2 norm of discarded coefficients
    bound: np.ndarray  # sqrt(S_ij) rho^{-p alpha}
    discarded: tuple[tuple[int, ...], ...]


def truncate(potential: MatrixFourierPotential, params: AsymptoticParams) -> tuple[MatrixFourierPotential, TruncationReport]:
    """Keep orbits with ``|gamma| < rho^alpha``.

    The discarded tail obeys ``tail_ij <= sqrt(S_ij) rho^{-l alpha} <= sqrt(S_ij) rho^{-p alpha}``
    for ``rho >= 1``; the second form is checked.
    """
    if params.rho < 1:
        raise ParameterError("truncation bound needs rho >= 1")
    radius = params.truncation_radius
    kept, tail2, dropped = {}, np.zeros((potential.m, potential.m)), []
    for key, v in potential.coefficients.items():
        if potential.norm(key) < radius:
            kept[key] = v
        else:
            tail2 += v * v
            dropped.append(key)
    tail = np.sqrt(tail2)
    bound = np.sqrt(validate_decay(potential).weighted) * params.rho ** (-params.p * params.alpha)
    if np.any(tail > bound):
        raise ConsistencyError(f"truncation tail {tail.max():.3e} exceeds its decay bound {bound.max():.3e}")
    out = MatrixFourierPotential(potential.geometry, potential.m, kept, potential.l)
    return out, TruncationReport(radius, tail, bound, tuple(dropped))


@dataclass(frozen=True)
class DirectionalPotential:
    """``P(s) = sum_{n in Z} p_|n| cos(n s)`` on ``[0, pi]``, ``s = x . delta``."""

    axis: int
    delta_norm: float
    m: int
    coefficients: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for n, mat in self.coefficients.items():
            mat = np.array(mat, dtype=float)
            if int(n) < 0 or mat.shape != (self.m, self.m) or not np.array_equal(mat, mat.T):
                raise PotentialError(f"bad directional coefficient at n = {n}")
            clean[int(n)] = mat
        object.__setattr__(self, "coefficients", dict(sorted(clean.items())))

    @property
    def support(self) -> int:
        return max((n for n, v in self.coefficients.items() if np.any(v)), default=0)

    @property
    def mean(self) -> np.ndarray:
        return self.coefficients.get(0, np.zeros((self.m, self.m)))

    def sequence(self, length: int | None = None) -> np.ndarray:
        length = self.support + 1 if length is None else length
        out = np.zeros((length, self.m, self.m))
        for n, v in self.coefficients.items():
            if n < length:
                out[n] = v
        return out

    def evaluate(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape + (self.m, self.m))
        for n, v in self.coefficients.items():
            out += (1.0 if n == 0 else 2.0) * np.cos(n * s)[..., None, None] * v
        return out

    def sup_norm(self, samples: int = 4097) -> float:
        """``max_s ||P(s)||_2`` on a uniform grid of ``[0, pi]``."""
        if not self.coefficients:
            return 0.0
        vals = self.evaluate(np.linspace(0.0, np.pi, samples))
        return float(np.max(np.abs(np.linalg.eigvalsh(vals))))


def directional_part(potential: MatrixFourierPotential, axis: int) -> DirectionalPotential:
    """Coefficients on the ray ``delta Z``: ``p_n = v_{n delta}``."""
    coeffs = {}
    for key, v in potential.coefficients.items():
        if all(n == 0 for k, n in enumerate(key) if k != axis):
            coeffs[key[axis]] = v
    return DirectionalPotential(axis, potential.geometry.axis_norm(axis), potential.m, coeffs)


def off_ray_part(potential: MatrixFourierPotential, axis: int) -> MatrixFourierPotential:
    """``V - P``: every coefficient not on the ray ``delta Z``."""
    coeffs = {k: v for k, v in potential.coefficients.items()
              if any(n != 0 for i, n in enumerate(k) if i != axis)}
    return MatrixFourierPotential(potential.geometry, potential.m, coeffs, potential.l)


def separable_potential(geometry: BoxGeometry, P: DirectionalPotential, l: int = 0) -> MatrixFourierPotential:
    """The ``d``-dimensional potential ``V(x) = P(x . delta)``."""
    coeffs = {}
    for n, v in P.coefficients.items():
        key = [0] * geometry.d
        key[P.axis] = n
        coeffs[tuple(key)] = v
    return MatrixFourierPotential(geometry, P.m, coeffs, l)


@dataclass(frozen=True)
class CouplingTable:
    """``d(beta_1, n_1)`` for the off-ray orbits inside ``Gamma(rho^alpha)``.

    Keys are ``(beta_1, n_1)`` with ``beta_1`` a nonnegative full index whose
    axis component is zero and ``n_1 >= 0``; the value is the coefficient of
    the orbit ``n_1 delta + beta_1``.
    """

    geometry: BoxGeometry
    axis: int
    m: int
    entries: Mapping[tuple[tuple[int, ...], int], np.ndarray]
    radius: float

    def __len__(self) -> int:
        return len(self.entries)

    def as_potential(self) -> MatrixFourierPotential:
        coeffs = {}
        for (beta1, n1), v in self.entries.items():
            key = list(beta1)
            key[self.axis] = n1
            coeffs[tuple(key)] = v
        return MatrixFourierPotential(self.geometry, self.m, coeffs)

    def transverse_steps(self) -> list[tuple[int, ...]]:
        """Distinct signed transverse offsets ``beta_1`` (all sign flips of the stored orbits)."""
        steps = set()
        for beta1, _ in self.entries:
            nz = [k for k, n in enumerate(beta1) if n]
            for mask in range(2 ** len(nz)):
                signed = list(beta1)
                for bit, k in enumerate(nz):
                    if mask >> bit & 1:
                        signed[k] = -signed[k]
                steps.add(tuple(signed))
        return sorted(steps)


def coupling_table(potential: MatrixFourierPotential, axis: int, params: AsymptoticParams) -> CouplingTable:
    geometry = potential.geometry
    local = params.for_direction(geometry, axis)
    radius = local.truncation_radius
    e = geometry.axis_norm(axis)
    entries = {}
    for key, v in potential.coefficients.items():
        beta1 = tuple(0 if k == axis else n for k, n in enumerate(key))
        if not any(beta1):
            continue
        norm = potential.norm(key)
        if not 0 < norm < radius:
            continue
        n1 = key[axis]
        if not (potential.norm(beta1) < local.witness_radius and abs(n1) * e < local.witness_radius
                and abs(n1) < local.r1 / 2):
            raise ConsistencyError(f"coupling key beta_1={beta1}, n_1={n1} violates the single-resonance bounds")
        entries[(beta1, n1)] = v
    return CouplingTable(geometry, axis, potential.m, entries, radius)


def evaluate(potential: MatrixFourierPotential, x) -> np.ndarray:
    """Synthesize ``V(x)`` from the cosine series."""
    x = np.asarray(x, dtype=float)
    edges = np.asarray(potential.geometry.edge_lengths)
    if x.shape != (potential.d,) or np.any(x < 0) or np.any(x > edges):
        raise DomainError(f"point {x.tolist()} is not inside the box {edges.tolist()}")
    out = np.zeros((potential.m, potential.m))
    for key, v in potential.coefficients.items():
        u = np.prod(np.cos(np.asarray(key) * np.pi * x / edges))
        out += _multiplicity(key) * u * v
    return out


def unit_amplitude_bound(norm: float, l: int) -> float:
    """Relative coefficient cap ``min(1, (2 / (1 + |gamma|))^{l+1})``."""
    return min(1.0, (2.0 / (1.0 + norm)) ** (l + 1))


def generate_random_potential(seed: int, m: int, d: int, l: int, amplitude: float, support_radius: float,
                              geometry: BoxGeometry | None = None) -> MatrixFourierPotential:
    """Random symmetric coefficients on the orbits with ``|gamma| < support_radius``.

    Entries satisfy ``|v_ij,gamma| <= amplitude * min(1, (2/(1+|gamma|))^{l+1})``,
    so ``amplitude`` is the coefficient scale at unit frequency and the decay
    sum converges for any support.
    """
    l_min = (d + 20) * (d - 1) / 2 + d + 3
    if not l > l_min:
        raise ParameterError(f"decay order l must exceed {l_min}, got {l}")
    if m < 2:
        raise ParameterError(f"matrix size must be at least 2, got {m}")
    geometry = geometry or BoxGeometry((math.pi,) * d)
    if geometry.d != d:
        raise ParameterError("geometry dimension disagrees with d")
    rng = np.random.default_rng(seed)
    coeffs = {}
    for key in lattice_indices(geometry, support_radius, nonnegative=True).tolist():
        key = tuple(key)
        cap = amplitude * unit_amplitude_bound(math.sqrt(float(geometry.norm2(key))), l)
        x = rng.uniform(-1.0, 1.0, size=(m, m))
        mat = 0.5 * (x + x.T) * cap
        if np.any(mat):
            coeffs[key] = mat
    return MatrixFourierPotential(geometry, m, coeffs, l)
