"""Matrix-free truncated SVD (Golub-Kahan-Lanczos) and conjugate gradients."""
import logging
from typing import NamedTuple

import numpy as np
from scipy.sparse.linalg import aslinearoperator

from .signals import as_rng

__all__ = [
    "TruncatedSVD",
    "LanczosError",
    "CGError",
    "lanczos_truncated_svd",
    "cg_solve",
    "normalize_phase",
]

log = logging.getLogger(__name__)


class TruncatedSVD(NamedTuple):
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    def product(self):
        return (self.U * self.s) @ self.V.conj().T


class LanczosError(RuntimeError):
    """Truncated SVD did not converge; carries the best triplets found."""

    def __init__(self, msg, result, residuals):
        super().__init__(msg)
        self.result = result
        self.residuals = residuals


class CGError(RuntimeError):
    """Conjugate gradients failed; ``x`` is the last iterate."""

    def __init__(self, msg, x, residual):
        super().__init__(msg)
        self.x = x
        self.residual = residual


def normalize_phase(U, V):
    """Rotate each singular pair so the largest entry of ``U[:, i]`` is real
    and positive.  ``U[:, i] V[:, i]^H`` is unchanged."""
    if U.shape[1] == 0:
        return U, V
    idx = np.argmax(np.abs(U), axis=0)
    ph = U[idx, np.arange(U.shape[1])]
    ph = np.where(np.abs(ph) > 0, ph / np.where(np.abs(ph) > 0, np.abs(ph), 1), 1)
    return U * ph.conj(), V * ph.conj()


def _orth(w, B, k):
    """Project ``w`` off the first ``k`` columns of ``B`` (two passes)."""
    if k == 0:
        return w
    Bk = B[:, :k]
    w = w - Bk @ (Bk.conj().T @ w)
    return w - Bk @ (Bk.conj().T @ w)


def _fresh(rng, B, k, dim, dtype):
    w = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    w = _orth(w.astype(dtype), B, k)
    return w / np.linalg.norm(w)


def lanczos_truncated_svd(op, r, tol=1e-10, max_iter=None, rng_seed=0, v0=None):
    """Top-``r`` singular triplets of an implicitly given operator.

    Golub-Kahan bidiagonalization with full reorthogonalization.  The
    Krylov basis is expanded until every kept triplet has residual
    ``max(||A v - s u||, ||A^H u - s v||) <= tol * s_1`` or ``max_iter``
    steps are spent.  Iterations start on the smaller side of the operator,
    so the factorization becomes exact once the basis spans that side.

    Parameters
    ----------
    op : LinearOperator or ndarray, shape (P, Q)
    r : int
        Number of triplets, ``r <= min(P, Q)``.
    tol : float
        Residual tolerance relative to the largest singular value.
    max_iter : int, optional
        Maximum number of bidiagonalization steps (default ``30 * r``).
    rng_seed : int or Generator
        Seed of the random start vector (and of restarts after breakdown).
    v0 : ndarray, optional
        Start vector on the smaller side; a random one is drawn if omitted.

    Returns
    -------
    TruncatedSVD
        ``U`` (P x r), ``s`` (r,), ``V`` (Q x r); columns of ``U`` are
        phase-normalized.

    Raises
    ------
    LanczosError
        If the residual bound is not met within ``max_iter`` steps.
    """
    A = aslinearoperator(op)
    P, Q = A.shape
    r = int(r)
    if not 0 <= r <= min(P, Q):
        raise ValueError(f"rank {r} outside [0, {min(P, Q)}]")
    if r == 0:
        return TruncatedSVD(np.zeros((P, 0), complex), np.zeros(0), np.zeros((Q, 0), complex))
    transposed = P < Q
    if transposed:
        fwd, bwd = A.H, A
        m, n = Q, P
    else:
        fwd, bwd = A, A.H
        m, n = P, Q
    # fwd maps C^n -> C^m, n <= m; the start vector lives in C^n
    kmax = n
    if max_iter is None:
        max_iter = 30 * r
    kcap = min(kmax, max(int(max_iter), r))
    rng = as_rng(rng_seed)
    dtype = complex

    Vb = np.zeros((n, kcap + 1), dtype)
    Ub = np.zeros((m, kcap), dtype)
    alpha = np.zeros(kcap)
    beta = np.zeros(kcap)

    if v0 is None or np.linalg.norm(v0) == 0:
        Vb[:, 0] = _fresh(rng, Vb, 0, n, dtype)
    else:
        Vb[:, 0] = np.asarray(v0, dtype) / np.linalg.norm(v0)

    scale = 0.0
    result = None
    resid = None
    k = 0
    next_check = min(kcap, r + 2)
    while k < kcap:
        u = fwd @ Vb[:, k]
        if k > 0:
            u = u - beta[k - 1] * Ub[:, k - 1]
        u = _orth(u, Ub, k)
        a = np.linalg.norm(u)
        scale = max(scale, a)
        if a <= 1e-14 * max(scale, 1e-300):
            # invariant subspace: continue with a fresh orthogonal direction
            alpha[k] = 0.0
            Ub[:, k] = _fresh(rng, Ub, k, m, dtype)
        else:
            alpha[k] = a
            Ub[:, k] = u / a
        w = bwd @ Ub[:, k] - alpha[k] * Vb[:, k]
        w = _orth(w, Vb, k + 1)
        b = np.linalg.norm(w)
        scale = max(scale, b)
        k += 1
        if k == kmax:
            beta[k - 1] = 0.0
        elif b <= 1e-14 * max(scale, 1e-300):
            beta[k - 1] = 0.0
            Vb[:, k] = _fresh(rng, Vb, k, n, dtype)
        else:
            beta[k - 1] = b
            Vb[:, k] = w / b

        if k < next_check and k < kcap:
            continue
        next_check = k + max(2, r // 4)
        B = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1)
        X, s, Yh = np.linalg.svd(B)
        keep = min(r, k)
        # fwd V y = s U x exactly; bwd U x - s V y = beta_k v_{k+1} x[k-1]
        resid = np.abs(beta[k - 1] * X[k - 1, :keep])
        Uk = Ub[:, :k] @ X[:, :keep]
        Vk = Vb[:, :k] @ Yh[:keep].conj().T
        result = (Uk, s[:keep], Vk)
        s1 = s[0] if s[0] > 0 else 1.0
        if keep == r and np.all(resid <= tol * s1):
            if k > r and s[r - 1] - s[r] < 1e-12 * s1:
                log.debug("near-degenerate singular values at rank %d: %.3e vs %.3e", r, s[r - 1], s[r])
            break
    else:
        if k == kmax and result is not None and len(result[1]) == r:
            # basis spans the smaller side: the factorization is exact
            resid = np.zeros(r)
        else:
            out = _finish(result, transposed, r, m, n)
            raise LanczosError(
                f"truncated SVD did not converge in {k} steps "
                f"(max residual {np.max(resid) if resid is not None else np.nan:.3e})",
                out,
                resid,
            )
    return _finish(result, transposed, r, m, n)


def _finish(result, transposed, r, m, n):
    Uk, s, Vk = result
    if transposed:
        Uk, Vk = Vk, Uk
    U, V = normalize_phase(Uk, Vk)
    return TruncatedSVD(U, s, V)


def cg_solve(apply, rhs, tol=1e-10, max_iter=None, x0=None, restarts=1, callback=None):
    """Solve ``apply(X) = rhs`` for a Hermitian positive definite map.

    The inner product is the Frobenius one, so ``rhs`` may be any array
    (typically ``r x r``).  After ``max_iter`` iterations the residual is
    recomputed from scratch and the iteration restarts, at most ``restarts``
    times.

    Parameters
    ----------
    apply : callable
    rhs : ndarray
    tol : float
        Stop when ``||apply(X) - rhs||_F <= tol * ||rhs||_F``.
    max_iter : int, optional
        Iterations per cycle; defaults to ``rhs.size`` (exact-arithmetic bound).
    x0 : ndarray, optional
        Warm start.
    callback : callable, optional
        Called with every iterate.

    Raises
    ------
    CGError
        On negative curvature or when the tolerance is not met.
    """
    rhs = np.asarray(rhs)
    if max_iter is None:
        max_iter = rhs.size
    bnorm = np.linalg.norm(rhs)
    x = np.zeros_like(rhs, dtype=np.result_type(rhs, float)) if x0 is None else np.array(x0, dtype=np.result_type(rhs, x0, float))
    if bnorm == 0:
        return np.zeros_like(x)
    target = tol * bnorm
    res = rhs - apply(x) if x0 is not None else rhs.copy()
    for cycle in range(restarts + 1):
        if cycle > 0:
            res = rhs - apply(x)
        rr = np.real(np.vdot(res, res))
        if np.sqrt(rr) <= target:
            return x
        p = res.copy()
        for _ in range(max_iter):
            Ap = apply(p)
            curv = np.real(np.vdot(p, Ap))
            if curv <= 0:
                raise CGError(f"non-positive curvature {curv:.3e}", x, np.sqrt(rr))
            step = rr / curv
            x = x + step * p
            res = res - step * Ap
            rr_new = np.real(np.vdot(res, res))
            if callback is not None:
                callback(x)
            if np.sqrt(rr_new) <= target:
                return x
            p = res + (rr_new / rr) * p
            rr = rr_new
    res = rhs - apply(x)
    raise CGError(
        f"CG did not reach tol {tol:.1e} (residual {np.linalg.norm(res) / bnorm:.3e})",
        x,
        np.linalg.norm(res),
    )
