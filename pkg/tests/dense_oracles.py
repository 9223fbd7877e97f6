"""Brute-force references built from explicit index loops and dense solves."""
import itertools

import numpy as np


def embed_loops(x, shape):
    """Lifted matrix by direct enumeration of the multilevel index formula."""
    xg = np.asarray(x).reshape(shape.dims, order="F")
    M = np.zeros((shape.P, shape.Q), dtype=complex)
    rows = list(itertools.product(*[range(p) for p in reversed(shape.rows)]))
    cols = list(itertools.product(*[range(q) for q in reversed(shape.cols)]))
    for ui, u in enumerate(rows):
        for vi, v in enumerate(cols):
            # product() iterates the last level slowest when reversed back
            idx = tuple(a + b for a, b in zip(reversed(u), reversed(v)))
            M[ui, vi] = xg[idx]
    return M


def lift_matrix(shape):
    """``A`` with ``vec(Hank(x)) = A x`` (column-major vec), shape (P*Q, N)."""
    A = np.zeros((shape.P * shape.Q, shape.N))
    for a in range(shape.N):
        e = np.zeros(shape.N)
        e[a] = 1.0
        A[:, a] = embed_loops(e, shape).real.ravel(order="F")
    return A


def adjoint_dense(M, shape):
    return lift_matrix(shape).T @ np.asarray(M).ravel(order="F")


def inner_x(H, s, obs, shape, alpha, beta):
    """Exact minimizer over x of the relaxed objective for a dense ``H``."""
    A = lift_matrix(shape)
    lhs = np.diag(obs) + beta * A.T @ A + alpha * np.eye(shape.N)
    rhs = s + beta * A.T @ H.ravel(order="F")
    return np.linalg.solve(lhs, rhs)


def f_dense(H, s, obs, shape, alpha, beta):
    """Relaxed objective at a dense ``H``, minimized over x."""
    x = inner_x(H, s, obs, shape, alpha, beta)
    A = lift_matrix(shape)
    hx = (A @ x).reshape((shape.P, shape.Q), order="F")
    return (
        0.5 * np.linalg.norm(obs * x - s) ** 2
        + 0.5 * beta * np.linalg.norm(H - hx) ** 2
        + 0.5 * alpha * np.linalg.norm(x) ** 2
    )


def joint_core_lstsq(U, V, s, obs, shape, alpha, beta):
    """Joint least squares over the r x r core and the signal.

    Returns the optimal core and the objective value.
    """
    r = U.shape[1]
    N = shape.N
    A = lift_matrix(shape)
    B = np.kron(V.conj(), U)  # vec(U S V^H) = B vec(S)
    idx = np.flatnonzero(obs)
    top = np.hstack([np.zeros((len(idx), r * r)), np.eye(N)[idx]])
    mid = np.sqrt(beta) * np.hstack([B, -A])
    bot = np.sqrt(alpha) * np.hstack([np.zeros((N, r * r)), np.eye(N)])
    K = np.vstack([top, mid, bot])
    b = np.concatenate([s[idx], np.zeros(shape.P * shape.Q + N)])
    z = np.linalg.lstsq(K, b, rcond=None)[0]
    S = z[: r * r].reshape((r, r), order="F")
    H = U @ S @ V.conj().T
    return S, f_dense(H, s, obs, shape, alpha, beta)


def projection_map_dense(U, V, d, shape, beta):
    """Vectorized core map ``S -> S - beta U^H Hank(d * Hank^*(U S V^H)) V``
    and its right-hand side builder, from dense lifts."""
    r = U.shape[1]
    A = lift_matrix(shape)
    cols = []
    for k in range(r * r):
        E = np.zeros(r * r, complex)
        E[k] = 1.0
        S = E.reshape((r, r), order="F")
        y = d * (A.T @ (U @ S @ V.conj().T).ravel(order="F"))
        Hy = (A @ y).reshape((shape.P, shape.Q), order="F")
        cols.append((S - beta * U.conj().T @ Hy @ V).ravel(order="F"))
    return np.column_stack(cols)


def projection_rhs_dense(U, V, d, s, shape):
    A = lift_matrix(shape)
    Hy = (A @ (d * s)).reshape((shape.P, shape.Q), order="F")
    return U.conj().T @ Hy @ V
