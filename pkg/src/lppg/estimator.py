"""scikit-learn style front end for spectral completion."""
import numbers

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .hankel_ops import HankelShape
from .signals import ObservedData, SampleMask
from .solver import SolverConfig, solve

__all__ = ["SpectralCompletion", "check_signal", "check_mask"]


def check_signal(X, allow_nan=True):
    """Validate a 1-, 2- or 3-D complex signal.

    ``NaN`` marks unobserved entries (in either the real or imaginary part)
    when ``allow_nan`` is true.  Infinite values are always rejected.

    Returns
    -------
    X : ndarray of complex
    observed : ndarray of bool, same shape
    """
    X = np.asarray(X)
    if X.dtype.kind not in "biufc":
        raise TypeError(f"expected a numeric array, got dtype {X.dtype}")
    X = X.astype(complex)
    if X.ndim not in (1, 2, 3):
        raise ValueError(f"expected a 1-, 2- or 3-D signal, got ndim={X.ndim}")
    if X.size == 0:
        raise ValueError("empty signal")
    nan = np.isnan(X.real) | np.isnan(X.imag)
    if np.any(nan) and not allow_nan:
        raise ValueError("signal contains NaN")
    if np.any(np.isinf(X.real) | np.isinf(X.imag)):
        raise ValueError("signal contains infinite values")
    return X, ~nan


def check_mask(mask, shape):
    mask = np.asarray(mask)
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match signal shape {tuple(shape)}")
    if mask.dtype != bool:
        if not np.all(np.isin(mask, (0, 1))):
            raise ValueError("mask must be boolean or 0/1")
        mask = mask.astype(bool)
    return mask


class SpectralCompletion(TransformerMixin, BaseEstimator):
    """Recover a spectrally sparse signal from a subset of its samples.

    Parameters
    ----------
    rank : int
        Model order, the number of (damped) complex exponentials.
    beta : float, optional
        Hankel enforcement weight; defaults to ``beta_scale`` times the
        sampling ratio over the average Hankel multiplicity.
    beta_scale : float
        Multiplier for the default ``beta``; values of 10 to 100 help under
        heavy noise.
    alpha : float
        Tikhonov weight on the signal.
    gamma : float, optional
        Step size; defaults to ``1 / beta``.
    tol : float
        Stop when the subgradient norm drops below ``tol * ||H||_F``.
    max_iter : int
    variant : {"lppg", "mpg", "pg"}
    stop : {"subgradient", "rel_change"}
    rel_tol : float
        Threshold of the relative-change rule.
    splits : sequence of int, optional
        Row count of the Hankel matrix per dimension.
    random_state : int
        Seed of the Lanczos start vectors.

    Attributes
    ----------
    signal_ : ndarray
        Completed signal, same shape as the input.
    mask_ : ndarray of bool
    hankel_shape_ : HankelShape
    singular_values_ : ndarray
        Singular values of the final low-rank iterate.
    trace_ : SolverTrace
    n_iter_ : int
    termination_ : str
    beta_, gamma_ : float
        Values used after resolving defaults.

    Examples
    --------
    >>> import numpy as np
    >>> t = np.arange(31)
    >>> x = np.exp(2j * np.pi * 0.1 * t) + np.exp(2j * np.pi * 0.37 * t)
    >>> y = x.copy(); y[::3] = np.nan
    >>> est = SpectralCompletion(rank=2).fit(y)
    >>> bool(np.linalg.norm(est.signal_ - x) / np.linalg.norm(x) < 1e-4)
    True
    """

    def __init__(
        self,
        rank=1,
        beta=None,
        beta_scale=1.0,
        alpha=1e-20,
        gamma=None,
        tol=1e-6,
        max_iter=1000,
        variant="lppg",
        stop="subgradient",
        rel_tol=1e-3,
        splits=None,
        random_state=0,
    ):
        self.rank = rank
        self.beta = beta
        self.beta_scale = beta_scale
        self.alpha = alpha
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter
        self.variant = variant
        self.stop = stop
        self.rel_tol = rel_tol
        self.splits = splits
        self.random_state = random_state

    def _config(self):
        if not isinstance(self.rank, numbers.Integral):
            raise TypeError(f"rank must be an integer, got {self.rank!r}")
        seed = self.random_state if self.random_state is not None else 0
        return SolverConfig(
            r=int(self.rank),
            beta=self.beta,
            alpha=self.alpha,
            gamma=self.gamma,
            eps=self.tol,
            max_iter=self.max_iter,
            variant=self.variant,
            stop=self.stop,
            rel_tol=self.rel_tol,
            beta_scale=self.beta_scale,
            seed=seed,
        )

    def _problem(self, X, mask):
        X, observed = check_signal(X)
        if mask is not None:
            observed = check_mask(mask, X.shape) & observed
        flat_obs = observed.ravel(order="F")
        idx = np.flatnonzero(flat_obs)
        if len(idx) == 0:
            raise ValueError("no observed entries")
        s = np.where(observed, X, 0).ravel(order="F")
        data = ObservedData(s, SampleMask(idx, X.size))
        shape = HankelShape.from_dims(X.shape, self.splits)
        return X, observed, data, shape

    def _run(self, X, mask, y):
        X, observed, data, shape = self._problem(X, mask)
        truth = None
        if y is not None:
            y, _ = check_signal(y, allow_nan=False)
            if y.shape != X.shape:
                raise ValueError(f"reference shape {y.shape} does not match {X.shape}")
            truth = y.ravel(order="F")
        cfg = self._config().resolve(shape, data.mask)
        x, trace, H = solve(data, shape, cfg, truth=truth)
        return X, observed, shape, cfg, x, trace, H

    def fit(self, X, y=None, mask=None):
        """Complete ``X``.

        Parameters
        ----------
        X : array-like, 1-D to 3-D
            Samples, with ``NaN`` at unobserved positions.
        y : array-like, optional
            Clean reference signal; only used to record NMSE in ``trace_``.
        mask : array-like of bool, optional
            Observed positions, combined with the ``NaN`` pattern of ``X``.
        """
        X, observed, shape, cfg, x, trace, H = self._run(X, mask, y)
        self.signal_ = x.reshape(X.shape, order="F")
        self.mask_ = observed
        self.hankel_shape_ = shape
        self.singular_values_ = np.linalg.svd(H.S, compute_uv=False)
        self.trace_ = trace
        self.n_iter_ = trace.n_iter
        self.termination_ = trace.termination
        self.beta_ = cfg.beta
        self.gamma_ = cfg.gamma
        return self

    def transform(self, X, mask=None):
        """Complete a new signal with the fitted settings."""
        check_is_fitted(self, "signal_")
        X, _, _, _, x, _, _ = self._run(X, mask, None)
        return x.reshape(X.shape, order="F")

    def fit_transform(self, X, y=None, mask=None):
        return self.fit(X, y, mask=mask).signal_

    def score(self, X, y):
        """Negative NMSE of the completion of ``X`` against reference ``y``."""
        y, _ = check_signal(y, allow_nan=False)
        est = self.transform(X)
        return -float(np.linalg.norm(est - y) / np.linalg.norm(y))
