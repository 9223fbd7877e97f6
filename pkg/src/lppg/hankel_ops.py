"""Multilevel Hankel operators.

Signals are stored as flat vectors in column-major order (level 1 fastest).
Row and column indices of the lifted matrix follow the same convention:
``u = u_1 + u_2 p_1 + u_3 p_1 p_2 + ...`` and ``v = v_1 + v_2 q_1 + ...``,
with entry ``(u, v)`` equal to ``x[u_1 + v_1, u_2 + v_2, ...]``.

All products against the lifted matrix are evaluated with FFT correlations,
so nothing of size ``P x Q`` is ever formed outside of :func:`hankel_embed`.
"""
import contextlib
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.sparse.linalg import LinearOperator

__all__ = [
    "ShapeError",
    "DenseSizeError",
    "HankelShape",
    "dense_limit",
    "check_dense_size",
    "hankel_weights",
    "hankel_embed",
    "hankel_adjoint",
    "hankel_matvec",
    "hankel_rmatvec",
    "hankel_adjoint_lowrank",
    "hankel_left_inverse",
    "HankelOperator",
    "LowRankPlusHankel",
]

DENSE_LIMIT = 4096


class ShapeError(ValueError):
    """Raised for inconsistent Hankel geometry or mismatched array sizes."""


class DenseSizeError(MemoryError):
    """Raised when a dense P x Q matrix is requested above the size limit."""


@contextlib.contextmanager
def dense_limit(n):
    """Temporarily change the largest signal size allowed to densify."""
    global DENSE_LIMIT
    old = DENSE_LIMIT
    DENSE_LIMIT = n
    try:
        yield
    finally:
        DENSE_LIMIT = old


@dataclass(frozen=True)
class HankelShape:
    """Geometry of a level-d Hankel lift.

    Parameters
    ----------
    levels : tuple of (n, p, q)
        Per-dimension signal length and row/column split, with
        ``p + q == n + 1``.
    """

    levels: tuple

    def __post_init__(self):
        levels = tuple(tuple(int(v) for v in lvl) for lvl in self.levels)
        if not levels:
            raise ShapeError("at least one level is required")
        for lvl in levels:
            if len(lvl) != 3:
                raise ShapeError(f"level {lvl} must be (n, p, q)")
            n, p, q = lvl
            if min(n, p, q) < 1:
                raise ShapeError(f"level {lvl} has non-positive entries")
            if p + q != n + 1:
                raise ShapeError(f"level {lvl} violates p + q = n + 1")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_dims(cls, dims, splits=None):
        """Build a shape from signal dims, using ``p = ceil((n + 1) / 2)``
        per level unless explicit row splits are given."""
        dims = (dims,) if np.isscalar(dims) else tuple(dims)
        if splits is None:
            splits = [math.ceil((n + 1) / 2) for n in dims]
        elif np.isscalar(splits):
            splits = (splits,)
        if len(splits) != len(dims):
            raise ShapeError("one split per dimension is required")
        return cls(tuple((n, p, n + 1 - p) for n, p in zip(dims, splits)))

    @property
    def dims(self):
        return tuple(lvl[0] for lvl in self.levels)

    @property
    def rows(self):
        return tuple(lvl[1] for lvl in self.levels)

    @property
    def cols(self):
        return tuple(lvl[2] for lvl in self.levels)

    @property
    def ndim(self):
        return len(self.levels)

    @property
    def N(self):
        return math.prod(self.dims)

    @property
    def P(self):
        return math.prod(self.rows)

    @property
    def Q(self):
        return math.prod(self.cols)

    @cached_property
    def fft_dims(self):
        # linear correlations of length n never wrap on a grid of size >= n
        return tuple(sfft.next_fast_len(n) for n in self.dims)

    @cached_property
    def _axes(self):
        return tuple(range(self.ndim))

    def _check(self, a, size, name):
        a = np.asarray(a)
        if a.shape[0] != size:
            raise ShapeError(f"{name} has leading size {a.shape[0]}, expected {size}")
        return a

    def _grid(self, flat, sizes):
        """(size, k) -> (*sizes, k) in column-major order."""
        return flat.reshape(tuple(sizes) + flat.shape[1:], order="F")

    def _flat(self, grid, size):
        return grid.reshape((size,) + grid.shape[self.ndim:], order="F")

    def _fft(self, grid):
        return sfft.fftn(grid, s=self.fft_dims, axes=self._axes)

    def _ifft(self, spec, sizes):
        out = sfft.ifftn(spec, axes=self._axes)
        return out[tuple(slice(0, s) for s in sizes)]


def hankel_weights(shape):
    """Multiplicity of every signal entry in the lifted matrix.

    This is the diagonal of ``H^* H``.  Each level contributes the 1-D
    pattern ``1, 2, ..., min(p, q), ..., 2, 1`` and levels combine by outer
    product.

    >>> hankel_weights(HankelShape(((5, 3, 3),)))
    array([1., 2., 3., 2., 1.])
    """
    w = np.ones(1)
    for n, p, q in shape.levels:
        wl = np.convolve(np.ones(p), np.ones(q))
        w = np.multiply.outer(wl, w)
    # outer products above put the last level first; ravel C-order then
    # yields level 1 fastest
    return w.ravel()


def check_dense_size(shape):
    """Raise :class:`DenseSizeError` if a ``P x Q`` array for ``shape`` is
    above the size limit."""
    if shape.N > DENSE_LIMIT:
        raise DenseSizeError(
            f"refusing to densify a {shape.P}x{shape.Q} matrix "
            f"(N={shape.N} > {DENSE_LIMIT})"
        )


def _dense_index(shape):
    """Signal index of every cell of the lifted matrix, shape (P, Q)."""
    u = np.unravel_index(np.arange(shape.P), shape.rows, order="F")
    v = np.unravel_index(np.arange(shape.Q), shape.cols, order="F")
    idx = tuple(ui[:, None] + vi[None, :] for ui, vi in zip(u, v))
    return np.ravel_multi_index(idx, shape.dims, order="F")


def hankel_embed(x, shape):
    """Dense lifted matrix of ``x``; refuses above the configured size limit."""
    x = shape._check(x, shape.N, "x")
    check_dense_size(shape)
    return x[_dense_index(shape)]


def hankel_adjoint(M, shape):
    """Skew-diagonal sums of a dense ``P x Q`` matrix."""
    M = np.asarray(M)
    if M.shape != (shape.P, shape.Q):
        raise ShapeError(f"matrix shape {M.shape} != {(shape.P, shape.Q)}")
    out = np.zeros(shape.N, dtype=np.result_type(M, float))
    np.add.at(out, _dense_index(shape).ravel(), M.ravel())
    return out


def hankel_matvec(x, v, shape):
    """``hankel_embed(x) @ v`` without forming the matrix."""
    return HankelOperator(x, shape).matvec_any(v)


def hankel_rmatvec(x, u, shape):
    """``hankel_embed(x).conj().T @ u`` without forming the matrix."""
    return HankelOperator(x, shape).rmatvec_any(u)


def hankel_adjoint_lowrank(U, V, shape, V_hat=None):
    """``H^*(U V^H)``: sum of skew-diagonals of a factored matrix.

    Every column pair contributes a linear convolution of ``U[:, i]`` with
    ``conj(V[:, i])``; all of them are accumulated in the Fourier domain so
    only one inverse transform is needed.

    Parameters
    ----------
    U : ndarray, shape (P, r)
    V : ndarray, shape (Q, r)
    V_hat : ndarray, optional
        Precomputed spectrum of ``conj(V)`` (see :func:`lowrank_spectrum`).
    """
    U = shape._check(U, shape.P, "U")
    V = shape._check(V, shape.Q, "V")
    U = U.reshape(shape.P, -1)
    V = V.reshape(shape.Q, -1)
    if U.shape[1] != V.shape[1]:
        raise ShapeError(f"factor ranks differ: {U.shape[1]} vs {V.shape[1]}")
    if U.shape[1] == 0:
        return np.zeros(shape.N, dtype=complex)
    if V_hat is None:
        V_hat = shape._fft(shape._grid(np.conj(V), shape.cols))
    U_hat = shape._fft(shape._grid(U, shape.rows))
    spec = np.einsum("...i,...i->...", U_hat, V_hat)
    out = shape._ifft(spec, shape.dims)
    return out.reshape(shape.N, order="F")


def lowrank_spectrum(V, shape):
    """Spectrum of ``conj(V)`` columns, reusable across adjoint calls."""
    V = np.asarray(V).reshape(shape.Q, -1)
    return shape._fft(shape._grid(np.conj(V), shape.cols))


def hankel_left_inverse(M, shape):
    """``W^{-1} H^* M`` for a dense matrix or a ``(U, V)`` factor pair.

    Recovers ``x`` exactly from ``hankel_embed(x)``.
    """
    if isinstance(M, tuple):
        y = hankel_adjoint_lowrank(M[0], M[1], shape)
    else:
        y = hankel_adjoint(M, shape)
    return y / hankel_weights(shape)


class HankelOperator(LinearOperator):
    """The lifted matrix of a signal as a scipy ``LinearOperator``.

    The signal spectrum is computed once; every product then costs one
    batched forward and one inverse FFT.
    """

    def __init__(self, x, shape):
        x = shape._check(x, shape.N, "x")
        self.x = x
        self.hshape = shape
        self._xhat = shape._fft(shape._grid(x, shape.dims))
        super().__init__(dtype=np.result_type(x, complex), shape=(shape.P, shape.Q))

    def _corr(self, b, in_sizes, out_sizes, out_size):
        # out[u] = sum_k x[u + k] b[k]
        s = self.hshape
        k = b.shape[1]
        bhat = s._fft(s._grid(np.conj(b), in_sizes))
        spec = self._xhat[..., None] * np.conj(bhat)
        out = s._ifft(spec, out_sizes)
        return s._flat(out, out_size).reshape(out_size, k)

    def _matmat(self, V):
        s = self.hshape
        return self._corr(np.asarray(V).reshape(s.Q, -1), s.cols, s.rows, s.P)

    def _rmatmat(self, U):
        s = self.hshape
        # (Hx)^H u = conj(sum_u x[u + v] conj(u[u]))
        return np.conj(self._corr(np.conj(np.asarray(U).reshape(s.P, -1)), s.rows, s.cols, s.Q))

    def _matvec(self, v):
        return self._matmat(v).ravel()

    def _rmatvec(self, u):
        return self._rmatmat(u).ravel()

    def _adjoint(self):
        return LinearOperator(
            shape=(self.shape[1], self.shape[0]),
            dtype=self.dtype,
            matvec=self._rmatvec,
            rmatvec=self._matvec,
            matmat=self._rmatmat,
            rmatmat=self._matmat,
        )

    def matvec_any(self, v):
        v = self.hshape._check(v, self.hshape.Q, "v")
        out = self._matmat(v.reshape(self.hshape.Q, -1))
        return out.reshape((self.hshape.P,) + v.shape[1:])

    def rmatvec_any(self, u):
        u = self.hshape._check(u, self.hshape.P, "u")
        out = self._rmatmat(u.reshape(self.hshape.P, -1))
        return out.reshape((self.hshape.Q,) + u.shape[1:])


class LowRankPlusHankel(LinearOperator):
    """``c * U S V^H + H(y)`` applied matrix-free.

    This is the argument of the truncated SVD in a proximal gradient step.
    ``U`` / ``V`` may be ``None`` (or ``c == 0``) for a pure Hankel operator.
    """

    def __init__(self, y, shape, U=None, S=None, V=None, c=1.0):
        self.hankel = HankelOperator(y, shape)
        self.lowrank = None
        if U is not None and c != 0:
            self.lowrank = (U, c * np.asarray(S), V)
        super().__init__(dtype=complex, shape=(shape.P, shape.Q))

    def _matmat(self, X):
        out = self.hankel._matmat(X)
        if self.lowrank is not None:
            U, S, V = self.lowrank
            out = out + U @ (S @ (V.conj().T @ X))
        return out

    def _rmatmat(self, Y):
        out = self.hankel._rmatmat(Y)
        if self.lowrank is not None:
            U, S, V = self.lowrank
            out = out + V @ (S.conj().T @ (U.conj().T @ Y))
        return out

    def _matvec(self, v):
        return self._matmat(np.asarray(v).reshape(-1, 1)).ravel()

    def _rmatvec(self, u):
        return self._rmatmat(np.asarray(u).reshape(-1, 1)).ravel()

    def _adjoint(self):
        return LinearOperator(
            shape=(self.shape[1], self.shape[0]),
            dtype=self.dtype,
            matvec=self._rmatvec,
            rmatvec=self._matvec,
            matmat=self._rmatmat,
            rmatmat=self._matmat,
        )
