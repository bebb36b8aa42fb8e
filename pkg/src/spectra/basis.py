"""Product rules for the orthonormal Neumann cosine basis.

Along an axis of length ``a`` the orthonormal modes are ``1/sqrt(a)`` and
``sqrt(2/a) cos(n pi x / a)``; in ``d`` dimensions the basis function
``uhat_gamma`` is their product, i.e. ``sqrt(|A_gamma| / mu(F)) u_gamma``.

A potential ``v(x) = sum_{g in Z^d} v_{|g|} u_g(x)`` (the full-lattice
expansion, coefficient depending only on ``|g_k|``) has Galerkin entries

    <uhat_gp, v uhat_g> = sum_{s in {+1,-1}^d} v_{|gp + s g|} prod_k w(g_k, gp_k)

with ``w = 1`` when both indices are nonzero, ``1/sqrt(2)`` when exactly
one is zero and ``1/2`` when both are zero.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

SQRT_HALF = 1.0 / math.sqrt(2.0)


def pair_weight(n: np.ndarray, n2: np.ndarray) -> np.ndarray:
    """Per-axis factor ``w(n, n2)`` of the product rule (broadcasting)."""
    zeros = (np.asarray(n) == 0).astype(int) + (np.asarray(n2) == 0).astype(int)
    return np.choose(zeros, [1.0, SQRT_HALF, 0.5])


def cosine_block(seq: np.ndarray, n_rows: int, n_cols: int | None = None) -> np.ndarray:
    """Galerkin matrix of ``sum_{k in Z} seq[|k|] cos(k s)`` on ``n = 0..N``.

    ``seq`` has shape (K, m, m); entries with index >= K are zero.  The
    result is ordered ``(n, i)`` with the component index fastest, shape
    ``(n_rows*m, n_cols*m)``.  The entry for modes ``(n2, n)`` is
    ``w(n, n2) (seq[|n2 - n|] + seq[n2 + n])``.
    """
    n_cols = n_rows if n_cols is None else n_cols
    seq = np.asarray(seq, dtype=float)
    k_len, m = seq.shape[0], seq.shape[1]
    rows = np.arange(n_rows)[:, None]
    cols = np.arange(n_cols)[None, :]
    padded = np.concatenate([seq, np.zeros((1, m, m))])

    def take(k):
        return padded[np.where(k < k_len, k, k_len)]

    blocks = take(np.abs(rows - cols)) + take(rows + cols)
    blocks *= pair_weight(rows, cols)[:, :, None, None]
    return blocks.transpose(0, 2, 1, 3).reshape(n_rows * m, n_cols * m)


def sign_patterns(d: int) -> np.ndarray:
    return np.array(list(itertools.product((1, -1), repeat=d)), dtype=int)


def product_entries(grid: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Blocks ``<uhat_row, v uhat_col>`` for index pairs, shape (P, m, m).

    ``grid`` holds the orbit coefficients densely, shape ``(K_1, .., K_d, m, m)``;
    indices outside it count as zero.
    """
    rows = np.asarray(rows, dtype=int)
    cols = np.asarray(cols, dtype=int)
    d = rows.shape[1]
    extent = np.array(grid.shape[:d])
    m = grid.shape[d]
    out = np.zeros((len(rows), m, m))
    weight = np.prod(pair_weight(rows, cols), axis=1)
    for s in sign_patterns(d):
        idx = np.abs(rows + s * cols)
        inside = np.all(idx < extent, axis=1)
        if not inside.any():
            continue
        sel = idx[inside]
        out[inside] += grid[tuple(sel.T)]
    return out * weight[:, None, None]
