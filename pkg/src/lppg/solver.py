"""Low-rank projected proximal gradient (LPPG) for Hankel-structured recovery.

The recovery problem is

    min_{H, x}  1/2 ||s - P_Omega x||^2 + beta/2 ||H - Hank(x)||_F^2
                + alpha/2 ||x||^2    s.t. rank(H) <= r.

Eliminating ``x`` gives a single-variable objective ``F(H)`` whose smooth
part has a ``beta``-Lipschitz gradient.  Each LPPG iteration first
re-optimizes the core ``S`` of ``H = U S V^H`` with ``U, V`` held fixed and
then takes a proximal gradient step whose prox is a rank-``r`` truncated SVD.

Every ``P x Q`` quantity is carried either as low-rank factors or as the
generating vector of a Hankel matrix.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import hankel_ops as ho
from .linalg import CGError, LanczosError, cg_solve, lanczos_truncated_svd
from .signals import ObservedData, as_rng, nmse

__all__ = [
    "VARIANTS",
    "SolverConfig",
    "LowRankIterate",
    "StructuredMatrix",
    "SolverTrace",
    "SolverError",
    "default_beta",
    "resolvent",
    "x_star",
    "objective_terms",
    "objective_F",
    "grad_f",
    "mpg_step",
    "projection_system",
    "subspace_projection",
    "subgradient_element",
    "truncate",
    "solve",
]

log = logging.getLogger(__name__)

VARIANTS = ("lppg", "mpg", "pg")
STOP_RULES = ("subgradient", "rel_change")


class SolverError(RuntimeError):
    """A numerical kernel failed; ``trace`` holds the iterations so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def default_beta(shape, mask):
    """``Sp * N / (P * Q)``: the average inverse multiplicity times the
    sampling ratio."""
    return mask.Sp * shape.N / (shape.P * shape.Q)


@dataclass(frozen=True)
class SolverConfig:
    """Solver settings.

    ``gamma=None`` picks ``1 / beta`` for LPPG and MPG, and
    ``1 / (1 + beta * min(P, Q) + alpha)`` for the standard PG baseline.
    ``gamma=0`` turns the proximal step into a plain rank-``r`` truncation.
    ``beta=None`` picks :func:`default_beta` times ``beta_scale``.
    """

    r: int
    beta: float = None
    alpha: float = 1e-20
    gamma: float = None
    eps: float = 1e-6
    max_iter: int = 1000
    variant: str = "lppg"
    stop: str = "subgradient"
    rel_tol: float = 1e-3
    beta_scale: float = 1.0
    lanczos_tol: float = 1e-10
    lanczos_max_iter: int = None
    cg_tol: float = 1e-10
    cg_max_iter: int = None
    seed: int = 0

    def __post_init__(self):
        if int(self.r) < 1:
            raise ValueError(f"rank must be >= 1, got {self.r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.stop not in STOP_RULES:
            raise ValueError(f"unknown stopping rule {self.stop!r}; expected one of {STOP_RULES}")
        if self.beta is not None and not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.gamma is not None and self.beta is not None:
            self._check_gamma(self.beta, self.gamma, None)

    def _check_gamma(self, beta, gamma, shape):
        if not gamma >= 0:
            raise ValueError(f"step size must be non-negative, got {gamma}")
        if self.variant in ("lppg", "mpg") and gamma > 1 / beta * (1 + 1e-12):
            raise ValueError(f"step size {gamma} exceeds 1/beta = {1 / beta}")
        if self.variant == "pg" and shape is not None:
            lip = 1 + beta * min(shape.P, shape.Q) + self.alpha
            if gamma > 1 / lip * (1 + 1e-12):
                raise ValueError(f"step size {gamma} exceeds 1/L = {1 / lip}")

    def resolve(self, shape, mask):
        """Fill in ``beta`` and ``gamma`` for a concrete problem."""
        beta = self.beta if self.beta is not None else self.beta_scale * default_beta(shape, mask)
        gamma = self.gamma
        if gamma is None and self.variant == "pg":
            gamma = 1.0 / (1 + beta * min(shape.P, shape.Q) + self.alpha)
        elif gamma is None:
            gamma = 1.0 / beta
        self._check_gamma(beta, gamma, shape)
        return replace(self, beta=float(beta), gamma=float(gamma))


class LowRankIterate:
    """``H = U S V^H`` with orthonormal ``U`` (P x r), ``V`` (Q x r) and a
    general ``r x r`` core ``S``.

    ``H^* H`` (the skew-diagonal sums) is computed on first use and cached.
    """

    def __init__(self, U, S, V, shape):
        self.U = np.asarray(U, dtype=complex)
        self.S = np.asarray(S, dtype=complex)
        self.V = np.asarray(V, dtype=complex)
        self.shape = shape
        self._adj = None
        self._V_hat = None

    @classmethod
    def from_svd(cls, svd, shape):
        return cls(svd.U, np.diag(svd.s), svd.V, shape)

    @property
    def rank(self):
        return self.S.shape[0]

    def with_core(self, S):
        it = LowRankIterate(self.U, S, self.V, self.shape)
        it._V_hat = self._V_hat
        return it

    @property
    def V_hat(self):
        if self._V_hat is None:
            self._V_hat = ho.lowrank_spectrum(self.V, self.shape)
        return self._V_hat

    @property
    def adjoint(self):
        if self._adj is None:
            self._adj = ho.hankel_adjoint_lowrank(self.U @ self.S, self.V, self.shape, V_hat=self.V_hat)
        return self._adj

    def frob_norm(self):
        return float(np.linalg.norm(self.S))

    def dense(self):
        ho.check_dense_size(self.shape)
        return self.U @ self.S @ self.V.conj().T

    def dist(self, other):
        """``||self - other||_F`` from the factors alone."""
        cross = np.trace(self.S.conj().T @ (self.U.conj().T @ other.U) @ other.S @ (other.V.conj().T @ self.V))
        sq = np.linalg.norm(self.S) ** 2 + np.linalg.norm(other.S) ** 2 - 2 * cross.real
        return math.sqrt(max(sq, 0.0))


@dataclass
class StructuredMatrix:
    """``Hank(h) + sum_i c_i U_i S_i V_i^H`` without materialization."""

    shape: ho.HankelShape
    h: np.ndarray = None
    terms: list = field(default_factory=list)

    def _lowrank_sq(self):
        total = 0.0
        for c1, a in self.terms:
            for c2, b in self.terms:
                G = (a.U.conj().T @ b.U) @ b.S @ (b.V.conj().T @ a.V)
                total += (np.conj(c1) * c2 * np.trace(a.S.conj().T @ G)).real
        return total

    def frob_norm(self):
        w = ho.hankel_weights(self.shape)
        sq = self._lowrank_sq()
        if self.h is not None:
            sq += float(np.sum(w * np.abs(self.h) ** 2))
            for c, a in self.terms:
                sq += 2 * (c * np.vdot(self.h, a.adjoint)).real
        return math.sqrt(max(sq, 0.0))

    def operator(self):
        return _SumOperator(self)

    def dense(self):
        ho.check_dense_size(self.shape)
        out = np.zeros((self.shape.P, self.shape.Q), complex)
        if self.h is not None:
            out += ho.hankel_embed(self.h, self.shape)
        for c, a in self.terms:
            out += c * a.dense()
        return out


class _SumOperator(ho.LowRankPlusHankel):
    def __init__(self, m):
        h = m.h if m.h is not None else np.zeros(m.shape.N, complex)
        super().__init__(h, m.shape)
        self._terms = m.terms

    def _matmat(self, X):
        out = self.hankel._matmat(X)
        for c, a in self._terms:
            out = out + c * (a.U @ (a.S @ (a.V.conj().T @ X)))
        return out

    def _rmatmat(self, Y):
        out = self.hankel._rmatmat(Y)
        for c, a in self._terms:
            out = out + np.conj(c) * (a.V @ (a.S.conj().T @ (a.U.conj().T @ Y)))
        return out


class Problem:
    """Observation, geometry and derived diagonals shared by the kernels."""

    def __init__(self, data, shape, cfg):
        if data.mask.N != shape.N:
            raise ho.ShapeError(f"data has N={data.mask.N}, shape has N={shape.N}")
        self.data = data
        self.shape = shape
        self.cfg = cfg if cfg.gamma is not None and cfg.beta is not None else cfg.resolve(shape, data.mask)
        self.s = data.s
        self.obs = data.mask.indicator
        self.w = ho.hankel_weights(shape)
        self.d = resolvent(shape, data.mask, self.cfg.alpha, self.cfg.beta)


def _problem(data, shape, cfg):
    if isinstance(data, Problem):
        return data
    return Problem(data, shape, cfg)


def resolvent(shape, mask, alpha, beta):
    """Diagonal of ``(alpha I + P_Omega + beta H^* H)^{-1}``."""
    return 1.0 / (alpha + mask.indicator + beta * ho.hankel_weights(shape))


def x_star(it, data, cfg=None, shape=None):
    """Signal minimizing the relaxed objective for a fixed ``H``."""
    pb = _problem(data, shape or it.shape, cfg)
    return pb.d * (pb.s + pb.cfg.beta * it.adjoint)


def objective_terms(it, data, cfg=None, shape=None, x=None):
    """``(F, fidelity, mismatch, x*)`` at a rank-``r`` iterate.

    ``fidelity = 1/2 ||s - P x*||^2`` and ``mismatch = ||H - Hank(x*)||_F^2``.
    The mismatch is split into the distance of ``H`` to the Hankel subspace
    and the weighted distance between ``x*`` and the Hankel projection of ``H``.
    """
    pb = _problem(data, shape or it.shape, cfg)
    cfg = pb.cfg
    if x is None:
        x = x_star(it, pb)
    adj = it.adjoint
    proj = adj / pb.w
    off_hankel = max(it.frob_norm() ** 2 - float(np.sum(pb.w * np.abs(proj) ** 2)), 0.0)
    mismatch = off_hankel + float(np.sum(pb.w * np.abs(proj - x) ** 2))
    fidelity = 0.5 * float(np.sum(np.abs(pb.obs * x - pb.s) ** 2))
    F = fidelity + 0.5 * cfg.beta * mismatch + 0.5 * cfg.alpha * float(np.sum(np.abs(x) ** 2))
    return F, fidelity, mismatch, x


def objective_F(it, data, cfg=None, shape=None):
    """``F(H) = min_x`` of the relaxed objective; the rank indicator is zero
    because iterates are rank-``r`` by construction."""
    return objective_terms(it, data, cfg, shape)[0]


def grad_f(it, data, cfg=None, shape=None, x=None):
    """Gradient ``beta (H - Hank(x*(H)))`` as a structured matrix."""
    pb = _problem(data, shape or it.shape, cfg)
    if x is None:
        x = x_star(it, pb)
    return StructuredMatrix(pb.shape, h=-pb.cfg.beta * x, terms=[(pb.cfg.beta, it)])


def truncate(op, r, cfg, rng):
    svd = lanczos_truncated_svd(
        op,
        r,
        tol=cfg.lanczos_tol,
        max_iter=cfg.lanczos_max_iter or 30 * r,
        rng_seed=rng,
    )
    return svd


def mpg_step(it, data, cfg=None, shape=None, rng=None, x=None):
    """Proximal step ``T_r(H - gamma grad f(H))``.

    The argument of the truncated SVD is ``(1 - gamma beta) H + gamma beta
    Hank(x*)``; with the default ``gamma = 1 / beta`` it is a pure Hankel
    matrix.
    """
    pb = _problem(data, shape or it.shape, cfg)
    cfg = pb.cfg
    if x is None:
        x = x_star(it, pb)
    gb = cfg.gamma * cfg.beta
    c = 1.0 - gb
    if abs(c) < 1e-15:
        op = ho.HankelOperator(gb * x, pb.shape)
    else:
        op = ho.LowRankPlusHankel(gb * x, pb.shape, it.U, it.S, it.V, c=c)
    svd = truncate(op, cfg.r, cfg, as_rng(cfg.seed if rng is None else rng))
    return LowRankIterate.from_svd(svd, pb.shape)


def _pair_adjoints(it, shape):
    """``H^*(u_i v_j^H)`` for all column pairs, shape ``(N, r*r)``.

    Column ``i + r * j`` belongs to pair ``(i, j)``, matching column-major
    vectorization of ``r x r`` cores.
    """
    r = it.rank
    U_hat = shape._fft(shape._grid(it.U, shape.rows))
    spec = U_hat[..., :, None] * it.V_hat[..., None, :]
    out = shape._ifft(spec, shape.dims)
    return out.reshape((shape.N, r * r), order="F")


def projection_system(it, data, cfg=None, shape=None):
    """Core-update system ``(I - beta P* Hank L Hank^* P) S = P* Hank L s``.

    Returns ``(apply, rhs)`` where ``apply`` maps ``r x r`` cores to ``r x r``
    cores.  The map is assembled once as an ``r^2 x r^2`` Hermitian matrix
    from the skew-diagonal sums of all rank-one pairs ``u_i v_j^H``.
    """
    pb = _problem(data, shape or it.shape, cfg)
    r = it.rank
    C = _pair_adjoints(it, pb.shape)
    Cd = C.conj().T * pb.d
    K = pb.cfg.beta * (Cd @ C)
    K = 0.5 * (K + K.conj().T)
    rhs = (Cd @ pb.s).reshape((r, r), order="F")

    def apply(S):
        v = S.reshape(r * r, order="F")
        return (v - K @ v).reshape((r, r), order="F")

    return apply, rhs


def subspace_projection(it, data, cfg=None, shape=None):
    """Optimal core ``S*`` for fixed ``U, V`` (exact joint minimization over
    the core and the signal), solved by conjugate gradients warm-started at
    the current core."""
    pb = _problem(data, shape or it.shape, cfg)
    cfg = pb.cfg
    apply, rhs = projection_system(it, pb)
    r = it.rank
    S = cg_solve(apply, rhs, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter or r * r, x0=it.S, restarts=1)
    return it.with_core(S)


def subgradient_element(it_half, it_next, data, cfg=None, shape=None, x_half=None, x_next=None):
    """Computable element of ``dF(H_next)`` after a proximal step from ``H_half``.

    In general it is ``(1/gamma - beta)(H_half - H_next) + beta Hank(x*_half -
    x*_next)``; for ``gamma = 1/beta`` only the Hankel part survives and its
    norm costs ``O(N)``.

    Returns
    -------
    element : StructuredMatrix
    norm : float
    """
    pb = _problem(data, shape or it_half.shape, cfg)
    cfg = pb.cfg
    if x_half is None:
        x_half = x_star(it_half, pb)
    if x_next is None:
        x_next = x_star(it_next, pb)
    h = cfg.beta * (x_half - x_next)
    c = 1.0 / cfg.gamma - cfg.beta
    if abs(c) <= 1e-12 * cfg.beta:
        elem = StructuredMatrix(pb.shape, h=h)
        return elem, math.sqrt(float(np.sum(pb.w * np.abs(h) ** 2)))
    elem = StructuredMatrix(pb.shape, h=h, terms=[(c, it_half), (-c, it_next)])
    return elem, elem.frob_norm()


@dataclass
class SolverTrace:
    """Per-iteration record; entry 0 describes the initial iterate."""

    F: list = field(default_factory=list)
    fidelity: list = field(default_factory=list)
    mismatch: list = field(default_factory=list)
    F_half: list = field(default_factory=list)
    proj_step: list = field(default_factory=list)
    prox_step: list = field(default_factory=list)
    subgrad: list = field(default_factory=list)
    rel_change: list = field(default_factory=list)
    H_norm: list = field(default_factory=list)
    nmse: list = field(default_factory=list)
    time_projection: list = field(default_factory=list)
    time_prox: list = field(default_factory=list)
    time_total: list = field(default_factory=list)
    termination: str = None

    @property
    def n_iter(self):
        return max(len(self.F) - 1, 0)

    def rows(self):
        keys = [k for k in self.__dataclass_fields__ if k != "termination"]
        n = len(self.F)
        for i in range(n):
            yield {"iteration": i, **{k: (getattr(self, k)[i] if i < len(getattr(self, k)) else None) for k in keys}}


def _record(trace, it, pb, x, truth, H_norm=None):
    F, fid, mis, _ = objective_terms(it, pb, x=x)
    trace.F.append(F)
    trace.fidelity.append(fid)
    trace.mismatch.append(mis)
    trace.H_norm.append(it.frob_norm() if H_norm is None else H_norm)
    if truth is not None:
        trace.nmse.append(nmse(x, truth))


def _pad(trace):
    """Keep the per-iteration lists aligned with ``F`` (entry 0 has no step)."""
    for name in ("F_half", "proj_step", "prox_step", "subgrad", "rel_change",
                 "time_projection", "time_prox", "time_total"):
        getattr(trace, name).append(np.nan)


def solve(data, shape, cfg, truth=None, callback=None):
    """Run LPPG (or the MPG / standard PG baselines).

    Parameters
    ----------
    data : ObservedData
    shape : HankelShape
    cfg : SolverConfig
    truth : ndarray, optional
        Reference signal; when given the trace records the NMSE of ``x*``
        after every iteration.
    callback : callable, optional
        ``callback(k, iterate, trace)`` after every iteration.

    Returns
    -------
    x : ndarray
        ``x*`` of the final iterate.
    trace : SolverTrace
    iterate : LowRankIterate
    """
    pb = Problem(data, shape, cfg)
    cfg = pb.cfg
    if cfg.r > min(shape.P, shape.Q):
        raise ValueError(f"rank {cfg.r} exceeds min(P, Q) = {min(shape.P, shape.Q)}")
    if cfg.gamma == 0 and cfg.max_iter > 0:
        raise ValueError("iterating needs a positive step size")
    rng = as_rng(cfg.seed)
    trace = SolverTrace()
    try:
        H = LowRankIterate.from_svd(truncate(ho.HankelOperator(pb.s, shape), cfg.r, cfg, rng), shape)
    except LanczosError as exc:
        raise SolverError(f"initial truncated SVD failed: {exc}", trace) from exc
    x = x_star(H, pb)
    _record(trace, H, pb, x, truth)
    _pad(trace)
    # joint iterate of the standard PG baseline
    x_joint = x.copy()
    trace.termination = "max_iter"
    for k in range(cfg.max_iter):
        t0 = time.perf_counter()
        try:
            if cfg.variant == "lppg":
                H_half = subspace_projection(H, pb)
                x_half = x_star(H_half, pb)
                F_half = objective_terms(H_half, pb, x=x_half)[0]
                proj_step = H_half.dist(H)
            else:
                H_half, x_half, F_half, proj_step = H, x, trace.F[-1], 0.0
            t1 = time.perf_counter()
            if cfg.variant == "pg":
                H_next, x_joint_next = _pg_step(H, x_joint, pb, rng)
            else:
                H_next = mpg_step(H_half, pb, rng=rng, x=x_half)
            x_next = x_star(H_next, pb)
            t2 = time.perf_counter()
        except (LanczosError, CGError) as exc:
            trace.termination = "failure"
            raise SolverError(f"iteration {k + 1}: {exc}", trace) from exc

        if cfg.variant == "pg":
            sub = _pg_subgradient(H, x_joint, H_next, x_joint_next, pb)
            x_joint = x_joint_next
        else:
            sub = subgradient_element(H_half, H_next, pb, x_half=x_half, x_next=x_next)[1]
        rel = H_next.dist(H) / max(H.frob_norm(), np.finfo(float).tiny)
        H, x = H_next, x_next
        _record(trace, H, pb, x, truth)
        trace.F_half.append(F_half)
        trace.proj_step.append(proj_step)
        trace.prox_step.append(H_next.dist(H_half) if cfg.variant != "pg" else np.nan)
        trace.subgrad.append(sub)
        trace.rel_change.append(rel)
        trace.time_projection.append(t1 - t0)
        trace.time_prox.append(t2 - t1)
        trace.time_total.append(time.perf_counter() - t0)
        if callback is not None:
            callback(k + 1, H, trace)
        if cfg.stop == "subgradient" and sub < cfg.eps * H.frob_norm():
            trace.termination = "tolerance"
            break
        if cfg.stop == "rel_change" and rel < cfg.rel_tol:
            trace.termination = "rel_change"
            break
    return x, trace, H


def _pg_step(H, x, pb, rng):
    """One step of standard PG on the joint variable ``(H, x)``."""
    cfg = pb.cfg
    g, b = cfg.gamma, cfg.beta
    op = ho.LowRankPlusHankel(g * b * x, pb.shape, H.U, H.S, H.V, c=1.0 - g * b)
    H_next = LowRankIterate.from_svd(truncate(op, cfg.r, cfg, rng), pb.shape)
    grad_x = (cfg.alpha + pb.obs + b * pb.w) * x - pb.s - b * H.adjoint
    return H_next, x - g * grad_x


def _pg_subgradient(H, x, H_next, x_next, pb):
    """Norm of the joint subdifferential element after a standard PG step."""
    cfg = pb.cfg
    g, b = cfg.gamma, cfg.beta
    h_part = StructuredMatrix(pb.shape, h=b * (x - x_next), terms=[(1 / g - b, H), (-(1 / g - b), H_next)])
    x_part = (x - x_next) / g + (cfg.alpha + pb.obs + b * pb.w) * (x_next - x) - b * (H_next.adjoint - H.adjoint)
    return math.sqrt(h_part.frob_norm() ** 2 + float(np.sum(np.abs(x_part) ** 2)))
