"""Matrix Sturm-Liouville problem ``-|delta|^2 Y'' + P(s) Y`` on ``[0, pi]`` with Neumann ends.

Discretized in the orthonormal cosine basis ``C_0 = 1/sqrt(pi)``,
``C_n = sqrt(2/pi) cos(n s)``; vectors are ordered ``(n, i)`` with the
matrix component ``i`` fastest.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .basis import cosine_block
from .errors import ContractError, LabelingError, ParameterError, SolverError, TruncationError
from .lattice import AsymptoticParams
from .potential import DirectionalPotential

DEFAULT_TOL = 1e-12
UNLABELED = -1


def assemble_T(P: DirectionalPotential, n_trunc: int) -> np.ndarray:
    """Galerkin matrix on modes ``n = 0..n_trunc``, size ``m (n_trunc + 1)``."""
    if n_trunc < 4 * P.support or n_trunc < 1:
        raise TruncationError(f"truncation {n_trunc} is below 4x the potential support {P.support}")
    size = n_trunc + 1
    out = cosine_block(P.sequence(), size)
    kinetic = (np.arange(size) * P.delta_norm) ** 2
    out[np.diag_indices_from(out)] += np.repeat(kinetic, P.m)
    return out


@dataclass(frozen=True)
class EigenpairSet:
    """Eigenpairs stored column-wise; ``vectors[:, k]`` belongs to ``eigenvalues[k]``."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    m: int = 1
    n_trunc: int = 0
    delta_norm: float = 1.0
    axis: int = 0
    sup_P: float = 0.0
    labels: np.ndarray | None = None  # band index j, or UNLABELED
    slots: np.ndarray | None = None
    in_window: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    @property
    def reliable_max_j(self) -> int:
        """Bands that are trustworthy at this truncation."""
        return self.n_trunc // 2

    def coeffs(self, k: int) -> np.ndarray:
        """Coefficients of pair ``k`` as an ``(n_trunc + 1, m)`` array."""
        return self.vectors[:, k].reshape(-1, self.m)

    def band(self, j: int) -> np.ndarray:
        """Column indices of band ``j`` ordered by slot."""
        if self.labels is None:
            raise LabelingError("eigenpairs are not labeled", [])
        idx = np.flatnonzero(self.labels == j)
        return idx[np.argsort(self.slots[idx], kind="stable")]

    def gram_deviation(self) -> float:
        q = self.vectors
        return float(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))))

    def to_json(self, threshold: float = 1e-15) -> dict:
        pairs = []
        for k in range(len(self)):
            c = self.coeffs(k)
            nz = np.argwhere(np.abs(c) > threshold)
            pairs.append({
                "j": int(self.labels[k]) if self.labels is not None else None,
                "slot": int(self.slots[k]) if self.slots is not None else None,
                "lambda": float(self.eigenvalues[k]),
                "residual": float(self.residuals[k]),
                "coeffs": [[int(n), int(i), float(c[n, i])] for n, i in nz],
            })
        return {"m": self.m, "n_trunc": self.n_trunc, "axis": self.axis, "delta_norm": self.delta_norm,
                "sup_P": self.sup_P, "pairs": pairs}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def _fix_signs(q: np.ndarray) -> np.ndarray:
    # first entry of largest magnitude is made positive
    pivot = np.argmax(np.abs(q) > np.max(np.abs(q), axis=0) * (1 - 1e-9), axis=0)
    signs = np.sign(q[pivot, np.arange(q.shape[1])])
    signs[signs == 0] = 1.0
    return q * signs


def eigensolve_symmetric(matrix: np.ndarray, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full spectrum of a symmetric matrix: ``(eigenvalues, vectors, residuals)``.

    Eigenvalues ascend; residuals ``||A v - lambda v||`` are checked against
    ``tol * ||A||_2``.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {a.shape}")
    if not np.array_equal(a, a.T):
        raise ContractError("matrix is not exactly symmetric")
    if tol <= 0:
        raise ParameterError("tolerance must be positive")
    try:
        w, q = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"symmetric eigensolver did not converge: {exc}") from exc
    q = _fix_signs(q)
    scale = max(float(np.max(np.abs(w))) if len(w) else 0.0, 1e-300)
    residuals = np.linalg.norm(a @ q - q * w, axis=0)
    worst = float(residuals.max()) if len(w) else 0.0
    if worst > tol * scale:
        raise SolverError(f"eigen-residual {worst:.3e} exceeds {tol:.1e} * ||A|| = {tol * scale:.3e}")
    return w, q, residuals


def solve(P: DirectionalPotential, n_trunc: int, tol: float = DEFAULT_TOL, label: bool = True) -> EigenpairSet:
    w, q, res = eigensolve_symmetric(assemble_T(P, n_trunc), tol)
    out = EigenpairSet(w, q, res, m=P.m, n_trunc=n_trunc, delta_norm=P.delta_norm, axis=P.axis)
    return label_bands(out, P.sup_norm()) if label else replace(out, sup_P=P.sup_norm())


def label_bands(pairs: EigenpairSet, sup_P: float) -> EigenpairSet:
    """Assign each pair the cosine index carrying most of its weight.

    At most ``m`` pairs may share a band; surplus claimants are resolved by
    eigenvalue proximity to ``|j delta|^2``.  A surplus inside the reliable
    range ``j <= n_trunc / 2`` is a labeling error; above it the losers are
    left unlabeled.
    """
    m = pairs.m
    weights = (pairs.vectors.reshape(pairs.n_trunc + 1, m, -1) ** 2).sum(axis=1)
    dominant = np.argmax(weights, axis=0)
    labels = np.full(len(pairs), UNLABELED)
    slots = np.full(len(pairs), -1)
    for j in np.unique(dominant):
        claim = np.flatnonzero(dominant == j)
        free = (j * pairs.delta_norm) ** 2
        order = claim[np.argsort(np.abs(pairs.eigenvalues[claim] - free), kind="stable")]
        keep, extra = order[:m], order[m:]
        if len(extra) and j <= pairs.reliable_max_j:
            overlaps = [(int(k), float(weights[j, k])) for k in order]
            raise LabelingError(f"{len(order)} eigenpairs claim band {j} (multiplicity {m})", overlaps)
        keep = keep[np.argsort(pairs.eigenvalues[keep], kind="stable")]
        labels[keep] = j
        slots[keep] = np.arange(len(keep))
    free = (np.maximum(labels, 0) * pairs.delta_norm) ** 2
    in_window = (labels >= 0) & (np.abs(pairs.eigenvalues - free) <= sup_P)
    return replace(pairs, labels=labels, slots=slots, in_window=in_window, sup_P=sup_P)


def band_table(pairs: EigenpairSet, j_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues ``(j_max+1, m)`` and coefficient blocks ``(j_max+1, m, n_trunc+1, m)``."""
    m = pairs.m
    lam = np.empty((j_max + 1, m))
    phi = np.empty((j_max + 1, m, pairs.n_trunc + 1, m))
    for j in range(j_max + 1):
        idx = pairs.band(j)
        if len(idx) != m:
            raise LabelingError(f"band {j} has {len(idx)} labeled pairs, expected {m}", [])
        lam[j] = pairs.eigenvalues[idx]
        for slot, k in enumerate(idx):
            phi[j, slot] = pairs.coeffs(k)
    return lam, phi


def mean_shift(P: DirectionalPotential) -> np.ndarray:
    """Eigenvalues of the mean matrix ``p_0``: the limits of ``lambda_j - |j delta|^2``."""
    return np.linalg.eigvalsh(P.mean)


@dataclass(frozen=True)
class WindowFit:
    j: np.ndarray
    deviation: np.ndarray  # lambda_j - |j delta|^2 - nearest mean eigenvalue
    window_ok: bool
    slope: float
    intercept: float


def window_fit(pairs: EigenpairSet, P: DirectionalPotential, j_min: int = 5, j_max: int | None = None) -> WindowFit:
    """Check ``|lambda_j - |j delta|^2| <= sup|P|`` and fit the decay of the shifted deviation."""
    j_max = pairs.reliable_max_j if j_max is None else j_max
    mu = mean_shift(P)
    js, devs, ok = [], [], True
    for k in range(len(pairs)):
        j = int(pairs.labels[k])
        if not j_min <= j <= j_max:
            continue
        diff = pairs.eigenvalues[k] - (j * pairs.delta_norm) ** 2
        ok &= abs(diff) <= pairs.sup_P
        js.append(j)
        devs.append(float(np.min(np.abs(diff - mu))))
    js, devs = np.array(js), np.array(devs)
    pos = devs > 0
    slope, intercept = np.polyfit(np.log(js[pos]), np.log(devs[pos]), 1)
    return WindowFit(js, devs, bool(ok), float(slope), float(intercept))


@dataclass(frozen=True)
class DecayReport:
    r: float
    coefficient_max: float  # max |<phi_j, C_{n,i}>| over |n| >= 2r, j + 1 < r
    tail_max: float  # max over the (n, n1) grid of sum_{|j1| >= 6r} |<phi_{j+j1}, C_{n+n1,i}>|
    coefficient_threshold: float
    tail_threshold: float
    per_pair: dict

    @property
    def holds(self) -> bool:
        return self.coefficient_max <= self.coefficient_threshold and self.tail_max <= self.tail_threshold


def refined_coefficients(pairs: EigenpairSet, T: np.ndarray, k: int, width: int) -> np.ndarray:
    """Coefficients of pair ``k`` with the components far from its band recomputed.

    Eigensolvers deliver small components only to ``eps ||T|| / gap`` absolute
    accuracy.  Rows ``n`` with ``|n - j| > width`` of ``(T - lambda) x = 0`` are
    solved for those components given the others; the shifted block is
    strongly diagonally dominant there, so the tiny entries come out with
    relative accuracy.
    """
    m, j, lam = pairs.m, int(pairs.labels[k]), pairs.eigenvalues[k]
    x = pairs.vectors[:, k].copy()
    n_of = np.repeat(np.arange(pairs.n_trunc + 1), m)
    for side in (n_of < j - width, n_of > j + width):
        if not side.any():
            continue
        rest = ~side
        a = T[np.ix_(side, side)] - lam * np.eye(int(side.sum()))
        x[side] = np.linalg.solve(a, -T[np.ix_(side, rest)] @ x[rest])
    return x.reshape(-1, m)


def decay_report(pairs: EigenpairSet, params: AsymptoticParams, r: float, constant: float = 1.0,
                 P: DirectionalPotential | None = None) -> DecayReport:
    """Off-band coefficient decay and the far-band tail sums at radius ``r``.

    The tail runs over labeled bands only, i.e. up to ``n_trunc / 2``.  When
    ``P`` is given the small coefficients are refined first (see
    ``refined_coefficients``).
    """
    if r < params.r1 * (1 - 1e-12):
        raise ParameterError(f"radius {r} is below r_1 = {params.r1}")
    if pairs.labels is None:
        raise LabelingError("decay report needs labeled eigenpairs", [])
    m = pairs.m
    labels = pairs.labels
    if P is None:
        coefs = np.abs(pairs.vectors.reshape(pairs.n_trunc + 1, m, -1))
    else:
        T = assemble_T(P, pairs.n_trunc)
        width = max(2 * P.support, 1)
        coefs = np.zeros((pairs.n_trunc + 1, m, len(pairs)))
        for k in np.flatnonzero((labels >= 0) & (labels <= pairs.reliable_max_j)):
            coefs[:, :, k] = np.abs(refined_coefficients(pairs, T, k, width))
    n_far = math.ceil(2 * r)
    near = [int(j) for j in range(pairs.n_trunc + 1) if j + 1 < r]
    per_pair = {}
    cmax = 0.0
    for j in near:
        for slot, k in enumerate(pairs.band(j)):
            val = float(coefs[n_far:, :, k].max()) if n_far <= pairs.n_trunc else 0.0
            per_pair[(j, slot)] = val
            cmax = max(cmax, val)
    # n ranges over |n| < 2r and n1 over |n1| < r1 / 2, both signed
    n_lim = math.ceil(2 * r) - 1
    n1_lim = math.ceil(params.r1 / 2) - 1
    rows = sorted({abs(n + n1) for n in range(-n_lim, n_lim + 1) for n1 in range(-n1_lim, n1_lim + 1)})
    rows = [n for n in rows if n <= pairs.n_trunc]
    valid = labels >= 0
    tmax = 0.0
    for j in near:
        far = valid & (np.abs(labels - j) >= 6 * r)
        if not far.any():
            continue
        sums = coefs[rows][:, :, far].sum(axis=2)
        tmax = max(tmax, float(sums.max()))
    return DecayReport(r, cmax, tmax,
                       constant * params.rho ** (-(params.l - 1) * params.alpha),
                       constant * params.rho ** (-(params.l - 2) * params.alpha),
                       per_pair)


def minimum_gap(pairs: EigenpairSet, j_max: int) -> float:
    """Smallest distance between distinct labeled eigenvalues with ``j <= j_max``."""
    sel = (pairs.labels >= 0) & (pairs.labels <= j_max)
    lam = np.sort(pairs.eigenvalues[sel])
    return float(np.min(np.diff(lam))) if len(lam) > 1 else math.inf
