"""Graph diffusion over the 2L directional tokens.

Content tokens of the horizontal and vertical sequences become graph
nodes.  A banded Gaussian kernel gives a symmetric score matrix W, the
row-normalized transition matrix P drives a t-step random walk, and the
diffusion distance between two nodes is the density-weighted squared
difference of their t-step transition profiles.

Two routes compute the same distances: an explicit matrix-power route
(differentiable through the tape; the reference for everything else) and
a spectral route via eigendecomposition of the symmetric normalization
(fast, used for inference and inspection).  A hybrid mode carries the
spectral value while routing gradients through a truncated matrix-power
computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ste import DirectionalSequence
from .tensor import NumericsError, Tensor, concat

__all__ = [
    "neighborhood_mask",
    "build_score_matrix",
    "transition_matrix",
    "diffusion_distance_iterative",
    "diffusion_distance_spectral",
    "split_blocks",
    "diffusion_distances",
    "DiffusionBlocks",
    "DiffusionResult",
]


def _check_kn(k_n: int, l: int) -> None:
    if l < 1:
        raise NumericsError("need at least one content token per direction")
    if k_n % 2 == 0 or k_n < 1:
        raise NumericsError(f"neighborhood size must be odd and positive, got {k_n}")


def neighborhood_mask(l: int, k_n: int) -> np.ndarray:
    """(2L, 2L) 0/1 adjacency template for the directional graph.

    Same-direction blocks connect each index to its k_n nearest indices by
    |i - j| (ties toward the smaller index, self included), symmetrized by
    union so the assembled matrix is exactly symmetric.  Cross-direction
    blocks connect indices within a band of half-width k_n // 2.
    """
    _check_kn(k_n, l)
    same = np.zeros((l, l))
    for i in range(l):
        order = sorted(range(l), key=lambda j: (abs(i - j), j))
        for j in order[: min(k_n, l)]:
            same[i, j] = 1.0
    same = np.maximum(same, same.T)
    offsets = np.abs(np.arange(l)[:, None] - np.arange(l)[None, :])
    cross = (offsets <= k_n // 2).astype(float)
    mask = np.zeros((2 * l, 2 * l))
    mask[:l, :l] = same
    mask[:l, l:] = cross
    mask[l:, :l] = cross.T
    mask[l:, l:] = same
    return mask


def build_score_matrix(
    z_h: DirectionalSequence, z_v: DirectionalSequence, k_n: int, mu: Tensor
) -> Tensor:
    """Banded Gaussian similarity over the 2L content tokens (class tokens excluded)."""
    f = concat([z_h.content, z_v.content], axis=0)
    l = f.shape[0] // 2
    mask = neighborhood_mask(l, k_n)
    diff = f.reshape(2 * l, 1, f.shape[1]) - f.reshape(1, 2 * l, f.shape[1])
    sq = (diff * diff).sum(axis=-1)
    return (-(mu * sq)).exp() * Tensor(mask)


def transition_matrix(w: Tensor) -> tuple[Tensor, Tensor]:
    """Row-normalize W into the random-walk matrix P; returns (P, row sums)."""
    if np.any(w.data < 0):
        raise NumericsError("score matrix must be nonnegative")
    d = w.sum(axis=1)
    if np.any(d.data <= 0):
        raise NumericsError("isolated node: zero row sum in score matrix")
    return w / d.reshape(-1, 1), d


def diffusion_distance_iterative(p_mat: Tensor, d: Tensor, t: int) -> Tensor:
    """Distances from explicit matrix powers; the reference (and gradient) route.

    ``Dt(i, j) = sum_k (P^t(i,k) - P^t(j,k))^2 / pi(k)`` with the stationary
    density ``pi(k) = d(k) / sum(d)``.
    """
    if t < 1:
        raise NumericsError(f"diffusion steps must be >= 1, got {t}")
    n = p_mat.shape[0]
    pt = p_mat
    for _ in range(int(t) - 1):
        pt = pt @ p_mat
    inv_pi = d.sum() / d  # reciprocal local density
    diff = pt.reshape(n, 1, n) - pt.reshape(1, n, n)
    return (diff * diff * inv_pi.reshape(1, 1, n)).sum(axis=-1)


def diffusion_distance_spectral(w: np.ndarray, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Distances via eigendecomposition of D^-1/2 W D^-1/2.

    Returns (distances, eigenvalues sorted descending).  Requires the
    symmetric score matrix; equals the matrix-power route to spectral
    accuracy: with A = Psi Lambda Psi^T and Phi_r = sqrt(sum(d)) *
    D^-1/2 psi_r (orthonormal under the pi-weighted inner product),
    ``Dt(i,j) = sum_r lambda_r^(2t) (Phi_r(i) - Phi_r(j))^2``.
    """
    if t < 1:
        raise NumericsError(f"diffusion steps must be >= 1, got {t}")
    w = np.asarray(w, dtype=np.float64)
    if not np.array_equal(w, w.T):
        raise NumericsError("spectral route requires a symmetric score matrix")
    d = w.sum(axis=1)
    if np.any(d <= 0):
        raise NumericsError("isolated node: zero row sum in score matrix")
    inv_sqrt_d = 1.0 / np.sqrt(d)
    a = w * np.outer(inv_sqrt_d, inv_sqrt_d)
    lam, psi = np.linalg.eigh(a)
    lam, psi = lam[::-1], psi[:, ::-1]
    phi = np.sqrt(d.sum()) * inv_sqrt_d[:, None] * psi
    emb = phi * (lam**t)[None, :]
    diff = emb[:, None, :] - emb[None, :, :]
    return (diff * diff).sum(axis=-1), lam


@dataclass
class DiffusionBlocks:
    hh: Tensor
    hv: Tensor
    vh: Tensor
    vv: Tensor


def split_blocks(dt: Tensor) -> DiffusionBlocks:
    """Quadrant views of the 2L x 2L distance matrix (horizontal indices first)."""
    n = dt.shape[0]
    if n % 2 != 0 or dt.shape != (n, n):
        raise NumericsError(f"expected an even square matrix, got {dt.shape}")
    l = n // 2
    return DiffusionBlocks(
        hh=dt[:l, :l], hv=dt[:l, l:], vh=dt[l:, :l], vv=dt[l:, l:]
    )


@dataclass
class DiffusionResult:
    w: Tensor
    p: Tensor
    d: Tensor
    dt: Tensor
    blocks: DiffusionBlocks
    eigenvalues: np.ndarray | None


def diffusion_distances(
    z_h: DirectionalSequence,
    z_v: DirectionalSequence,
    k_n: int,
    mu: Tensor,
    t: int,
    path: str = "hybrid",
    t_grad: int = 5,
) -> DiffusionResult:
    """Build the graph and compute distances along the configured route.

    - "iterative": matrix powers at the full ``t`` through the tape.
    - "spectral": eigendecomposition value, treated as a constant.
    - "hybrid": spectral value at ``t`` with gradients from the matrix-power
      route truncated to ``min(t, t_grad)`` steps.
    """
    w = build_score_matrix(z_h, z_v, k_n, mu)
    p_mat, d = transition_matrix(w)
    eigenvalues = None
    if path == "iterative":
        dt = diffusion_distance_iterative(p_mat, d, t)
    elif path == "spectral":
        value, eigenvalues = diffusion_distance_spectral(w.data, t)
        dt = Tensor(value)
    elif path == "hybrid":
        dt_grad = diffusion_distance_iterative(p_mat, d, min(t, t_grad))
        value, eigenvalues = diffusion_distance_spectral(w.data, t)
        dt = dt_grad + Tensor(value - dt_grad.data)
    else:
        raise NumericsError(f"unknown diffusion path: {path!r}")
    return DiffusionResult(w=w, p=p_mat, d=d, dt=dt, blocks=split_blocks(dt), eigenvalues=eigenvalues)
