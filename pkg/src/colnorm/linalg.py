"""Dense matrix primitives used by the optimizers and diagnostics.

Matrices are plain ``float64`` numpy arrays of shape ``(m, n)``. The SVD is a
one-sided (Hestenes) Jacobi iteration using a round-robin pair ordering, so
every round rotates ``k // 2`` disjoint column pairs at once with vectorized
numpy arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NonFiniteError, ShapeError, SvdConvergenceError

# Standard quintic coefficients from the Muon lineage.
NS_COEFFICIENTS = (3.4445, -4.7750, 2.0315)
# Classic quintic Newton-Schulz, p(x) = (15x - 10x^3 + 3x^5) / 8. Converges
# monotonically to 1 on (0, 1], but slowly for small singular values.
NS_COEFFICIENTS_CONVERGENT = (1.875, -1.25, 0.375)
NS_EPS = 1e-7

_MAX_SWEEPS = 60
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray  # m x k
    sigma: np.ndarray  # k, descending
    vt: np.ndarray  # k x n

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2D float64 array, rejecting empty or non-finite input."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must be 2D with positive dims, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("non-finite matrix")
    return a


def _round_robin(k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pair schedule covering every (i, j), i < j, once per sweep."""
    players = list(range(k))
    if k % 2:
        players.append(-1)
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        half = size // 2
        left, right = players[:half], players[half:][::-1]
        pairs = [(min(a, b), max(a, b)) for a, b in zip(left, right) if a >= 0 and b >= 0]
        if pairs:
            i, j = zip(*pairs)
            rounds.append((np.array(i), np.array(j)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _jacobi_tall(a: np.ndarray, negligible: float) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonalize the columns of tall ``a`` (m >= n).

    Returns ``(b, v)`` with ``a @ v == b``, ``v`` orthogonal and the columns of
    ``b`` mutually orthogonal to working precision. Columns with norm at or
    below ``negligible`` are treated as zero and never rotated.
    """
    m, n = a.shape
    b = a.copy()
    v = np.eye(n)
    if n == 1:
        return b, v
    tol = _EPS * max(m, 1)
    schedule = _round_robin(n)
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for i, j in schedule:
            bi, bj = b[:, i], b[:, j]
            alpha = np.einsum("ij,ij->j", bi, bi)
            beta = np.einsum("ij,ij->j", bj, bj)
            gamma = np.einsum("ij,ij->j", bi, bj)
            floor = negligible * negligible
            active = (np.abs(gamma) > tol * np.sqrt(alpha) * np.sqrt(beta)) & (alpha > floor) & (beta > floor)
            if not active.any():
                continue
            rotated = True
            i, j = i[active], j[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            with np.errstate(over="ignore"):
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.hypot(1.0, t)
            s = c * t
            bi, bj = b[:, i], b[:, j]
            b[:, i] = c * bi - s * bj
            b[:, j] = s * bi + c * bj
            vi, vj = v[:, i], v[:, j]
            v[:, i] = c * vi - s * vj
            v[:, j] = s * vi + c * vj
        if not rotated:
            return b, v
    raise SvdConvergenceError("svd no convergence")


def _complete_orthonormal(q: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Replace columns of ``q`` not marked in ``filled`` by an orthonormal complement."""
    m = q.shape[0]
    basis = [q[:, c] for c in np.flatnonzero(filled)]
    for col in np.flatnonzero(~filled):
        best = None
        for e in range(m):
            cand = np.zeros(m)
            cand[e] = 1.0
            for _ in range(2):
                for b in basis:
                    cand -= (b @ cand) * b
            norm = np.linalg.norm(cand)
            if best is None or norm > best[0] + 1e-12:
                best = (norm, cand)
            if norm > 0.5:
                break
        vec = best[1] / best[0]
        q[:, col] = vec
        basis.append(vec)
    return q


def thin_svd(m) -> SvdFactors:
    """Thin SVD ``m = u @ diag(sigma) @ vt`` with ``k = min(m, n)``.

    Deterministic: in each column of ``u`` the first entry of largest
    magnitude is made nonnegative, with ``vt`` flipped to compensate.
    """
    a = as_matrix(m)
    rows, cols = a.shape
    transposed = rows < cols
    work = a.T if transposed else a
    # Columns this small relative to the whole matrix are roundoff.
    negligible = _EPS * np.linalg.norm(work)
    b, v = _jacobi_tall(work, negligible)
    sigma = np.sqrt(np.einsum("ij,ij->j", b, b))
    order = np.argsort(-sigma, kind="stable")
    sigma, b, v = sigma[order], b[:, order], v[:, order]
    nonzero = sigma > negligible
    q = np.zeros_like(b)
    q[:, nonzero] = b[:, nonzero] / sigma[nonzero]
    if not nonzero.all():
        q = _complete_orthonormal(q, nonzero)
    # work = q diag(sigma) v^T
    if transposed:
        u, vt = v, q.T
    else:
        u, vt = q, v.T
    u = np.ascontiguousarray(u)
    vt = np.ascontiguousarray(vt)
    k = u.shape[1]
    pivots = np.argmax(np.abs(u), axis=0)
    flip = u[pivots, np.arange(k)] < 0
    u[:, flip] *= -1.0
    vt[flip, :] *= -1.0
    return SvdFactors(u=u, sigma=sigma, vt=vt)


def polar_orthogonal(m) -> np.ndarray:
    """Exact polar factor ``U @ Vt``; the oracle for Newton-Schulz."""
    f = thin_svd(m)
    return f.u @ f.vt


def newton_schulz5(m, steps: int = 5, coefficients: Sequence[float] = NS_COEFFICIENTS) -> np.ndarray:
    """Approximate the polar factor with a quintic Newton-Schulz iteration.

    The input is scaled by ``1 / (||m||_F + 1e-7)``; each step applies
    ``X <- aX + b(XX^T)X + c(XX^T)^2 X`` with the Gram matrix on the small side.
    With the default coefficients singular values settle in a band around 1
    (roughly [0.7, 1.14]) rather than converging to exactly 1.
    """
    a = as_matrix(m)
    if steps < 1:
        raise ValueError("steps must be a positive integer")
    ca, cb, cc = coefficients
    if not a.any():
        return np.zeros_like(a)
    x = a / (np.linalg.norm(a) + NS_EPS)
    transposed = x.shape[0] > x.shape[1]
    if transposed:
        x = x.T
    for _ in range(steps):
        gram = x @ x.T
        x = ca * x + (cb * gram + cc * (gram @ gram)) @ x
    return np.ascontiguousarray(x.T) if transposed else x


def singular_spectrum(m) -> np.ndarray:
    return thin_svd(m).sigma


def condition_number(m, rank_tol: float = 1e-12) -> float:
    """``sigma_max / sigma_min'`` over singular values above ``rank_tol * sigma_max``.

    Returns ``inf`` for the zero matrix.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    sigma = singular_spectrum(m)
    top = sigma[0]
    if top == 0.0:
        return float("inf")
    kept = sigma[sigma > rank_tol * top]
    return float(top / kept[-1])
