"""Reference spectrum of ``-Laplace + V`` on the box by product-cosine Galerkin truncation.

The basis is every nonnegative index ``gamma`` with ``|gamma| < cutoff``,
ordered lexicographically, with the matrix component fastest.  Comparison
eigenfunctions ``chi_{j,beta} = uhat_beta phi_j`` of the separable operator
``-Laplace + P(x . delta)`` are embedded into the same basis.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import product_entries
from .errors import ContractError, NoMatchError, ResourceError
from .lattice import BoxGeometry, lattice_indices
from .potential import MatrixFourierPotential
from .sturm1d import DEFAULT_TOL, EigenpairSet, eigensolve_symmetric

DEFAULT_MAX_DIM = 4000


@dataclass(frozen=True, eq=False)
class OrbitBasis:
    geometry: BoxGeometry
    indices: np.ndarray  # (nb, d), nonnegative
    cutoff: float

    def __post_init__(self):
        extent = self.indices.max(axis=0) + 1
        pos = np.full(tuple(extent), -1, dtype=np.int64)
        pos[tuple(self.indices.T)] = np.arange(len(self.indices))
        object.__setattr__(self, "_pos", pos)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def norm2(self) -> np.ndarray:
        return self.geometry.norm2(self.indices)

    def position(self, idx: np.ndarray) -> np.ndarray:
        """Basis position of each row of ``idx`` (nonnegative), -1 if absent."""
        idx = np.atleast_2d(np.asarray(idx, dtype=int))
        pos = self._pos
        inside = np.all(idx < np.array(pos.shape), axis=1) & np.all(idx >= 0, axis=1)
        out = np.full(len(idx), -1, dtype=np.int64)
        out[inside] = pos[tuple(idx[inside].T)]
        return out


def orbit_basis(geometry: BoxGeometry, cutoff: float) -> OrbitBasis:
    return OrbitBasis(geometry, lattice_indices(geometry, cutoff, nonnegative=True), cutoff)


def basis_dimension(geometry: BoxGeometry, cutoff: float, m: int) -> int:
    return m * len(lattice_indices(geometry, cutoff, nonnegative=True))


def largest_cutoff(geometry: BoxGeometry, m: int, max_dim: int = DEFAULT_MAX_DIM) -> float:
    """Largest cutoff (to 1e-3) whose basis fits ``max_dim``."""
    lo, hi = 0.0, 1.0
    while basis_dimension(geometry, hi, m) <= max_dim:
        lo, hi = hi, 2 * hi
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if basis_dimension(geometry, mid, m) <= max_dim else (lo, mid)
    return lo


def assemble_potential(V: MatrixFourierPotential, basis: OrbitBasis) -> np.ndarray:
    """Galerkin matrix of multiplication by ``V`` (no kinetic part); exactly symmetric."""
    m, nb = V.m, len(basis)
    out = np.zeros((m * nb, m * nb))
    if not V.coefficients:
        return out
    steps = np.array(sorted(V.orbit_expand()))
    a, b = [], []
    for g in steps:
        partner = basis.position(np.abs(basis.indices + g))
        ok = partner >= 0
        a.append(np.flatnonzero(ok))
        b.append(partner[ok])
    a, b = np.concatenate(a), np.concatenate(b)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = np.unique(lo * nb + hi)
    rows, cols = key // nb, key % nb
    blocks = product_entries(V.grid, basis.indices[rows], basis.indices[cols])
    comp = np.arange(m)
    I = (rows * m)[:, None, None] + comp[None, :, None]
    K = (cols * m)[:, None, None] + comp[None, None, :]
    out[I, K] = blocks
    out[K, I] = blocks
    return out


def assemble_L(V: MatrixFourierPotential, cutoff: float, max_dim: int = DEFAULT_MAX_DIM,
               basis: OrbitBasis | None = None) -> tuple[np.ndarray, OrbitBasis]:
    geometry = V.geometry
    dim = basis_dimension(geometry, cutoff, V.m) if basis is None else V.m * len(basis)
    if dim > max_dim:
        raise ResourceError(f"basis dimension {dim} exceeds the cap {max_dim}", required=dim)
    basis = basis or orbit_basis(geometry, cutoff)
    out = assemble_potential(V, basis)
    out[np.diag_indices_from(out)] += np.repeat(basis.norm2, V.m)
    return out, basis


@dataclass(frozen=True, eq=False)
class FullSpectrum:
    basis: OrbitBasis
    m: int
    eigenvalues: np.ndarray
    vectors: np.ndarray  # columns psi_N
    residuals: np.ndarray
    matrix: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.eigenvalues)

    def to_json(self) -> dict:
        return {"m": self.m, "cutoff": self.basis.cutoff, "dimension": len(self),
                "eigenvalues": self.eigenvalues.tolist(), "residuals": self.residuals.tolist()}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def eigen_full(V: MatrixFourierPotential, cutoff: float, tol: float = DEFAULT_TOL,
               max_dim: int = DEFAULT_MAX_DIM, keep_matrix: bool = False) -> FullSpectrum:
    L, basis = assemble_L(V, cutoff, max_dim)
    w, q, res = eigensolve_symmetric(L, tol)
    return FullSpectrum(basis, V.m, w, q, res, L if keep_matrix else None)


@dataclass(frozen=True)
class ComparisonMode:
    """``chi_{j,beta}`` embedded in the full basis."""

    j: int
    slot: int
    beta: tuple[int, ...]
    lam: float  # lambda_j + |beta|^2
    vector: np.ndarray
    dropped: float  # 1 - ||embedded chi||^2


def embed_comparison(pairs: EigenpairSet, j: int, slot: int, beta, basis: OrbitBasis) -> ComparisonMode:
    """Place ``phi_j (x) uhat_beta`` onto the full basis; modes outside the ball are dropped."""
    beta = tuple(int(b) for b in beta)
    axis, m = pairs.axis, pairs.m
    if beta[axis] != 0 or any(b < 0 for b in beta):
        raise ContractError(f"transverse index {beta} must be nonnegative with zero axis component")
    if len(pairs.band(j)) <= slot:
        raise ContractError(f"band {j} has no slot {slot}")
    k = pairs.band(j)[slot]
    phi = pairs.coeffs(k)
    idx = np.tile(np.array(beta), (pairs.n_trunc + 1, 1))
    idx[:, axis] = np.arange(pairs.n_trunc + 1)
    pos = basis.position(idx)
    ok = pos >= 0
    vec = np.zeros(m * len(basis))
    for i in range(m):
        vec[pos[ok] * m + i] = phi[ok, i]
    lam = float(pairs.eigenvalues[k] + basis.geometry.norm2(beta))
    return ComparisonMode(j, slot, beta, lam, vec, float(1.0 - vec @ vec))


@dataclass(frozen=True)
class OverlapSet:
    mode: ComparisonMode
    eigenvalues: np.ndarray
    c: np.ndarray  # <psi_N, chi>
    coupling: np.ndarray  # <psi_N, (V - P) chi>
    tail: float  # ||(-Laplace + P) chi - lambda chi|| in the truncated basis

    @property
    def gap(self) -> np.ndarray:
        return self.eigenvalues - self.mode.lam

    @property
    def binding_residual(self) -> np.ndarray:
        return np.abs(self.gap * self.c - self.coupling)

    @property
    def parseval(self) -> float:
        return math.fsum(self.c ** 2)

    def records(self) -> list[dict]:
        return [{"N": n, "Lambda": float(self.eigenvalues[n]), "gap": float(self.gap[n]), "c": float(self.c[n])}
                for n in range(len(self.c))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "Lambda", "gap", "c"])
            for row in self.records():
                w.writerow([row["N"], f"{row['Lambda']:.17g}", f"{row['gap']:.17g}", f"{row['c']:.17g}"])


def overlaps(full: FullSpectrum, mode: ComparisonMode, L: np.ndarray, G_off: np.ndarray) -> OverlapSet:
    """Overlaps of every ``psi_N`` with one comparison mode, plus both sides of the binding identity.

    ``L`` is the full Galerkin matrix and ``G_off`` the Galerkin matrix of the
    off-ray remainder ``V - P`` on the same basis.  Since ``L psi = Lambda psi``
    in the truncated space, ``(Lambda - lambda) c - <psi, (V-P) chi>`` equals
    ``<psi, (L - G_off - lambda) chi>``, bounded by ``tail``.
    """
    if L.shape[0] != len(mode.vector) or G_off.shape != L.shape or full.vectors.shape[0] != L.shape[0]:
        raise ContractError("full spectrum, comparison mode and matrices use different truncations")
    chi = mode.vector
    off_chi = G_off @ chi
    c = full.vectors.T @ chi
    coupling = full.vectors.T @ off_chi
    tail = float(np.linalg.norm(L @ chi - off_chi - mode.lam * chi))
    return OverlapSet(mode, full.eigenvalues, c, coupling, tail)


@dataclass(frozen=True)
class MatchResult:
    N: int
    Lambda: float
    c: float
    gap: float
    threshold: float
    degenerate: tuple[int, ...]  # other N with Lambda within 1e-9 of the winner


def match(ov: OverlapSet, M: float, rho: float, q: int, alpha: float) -> MatchResult:
    """Eigenvalue closest in overlap: maximize ``|c|`` subject to ``|Lambda_N - lambda| < 2M``."""
    threshold = rho ** (-q * alpha)
    window = np.flatnonzero(np.abs(ov.gap) < 2 * M)
    if not len(window):
        raise NoMatchError(f"no eigenvalue within 2M = {2 * M:.4g} of {ov.mode.lam:.10g}")
    best = int(window[np.argmax(np.abs(ov.c[window]))])
    if not abs(ov.c[best]) > threshold:
        raise NoMatchError(f"best overlap {abs(ov.c[best]):.3e} does not exceed rho^(-q alpha) = {threshold:.3e}")
    near = np.flatnonzero(np.abs(ov.eigenvalues - ov.eigenvalues[best]) < 1e-9)
    return MatchResult(best, float(ov.eigenvalues[best]), float(ov.c[best]), float(ov.gap[best]), threshold,
                       tuple(int(n) for n in near if n != best))
