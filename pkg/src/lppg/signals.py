"""Synthetic spectrally sparse signals, sampling masks, noise and metrics."""
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SpectralComponents",
    "SampleMask",
    "ObservedData",
    "DAMPING_RANGES",
    "trial_rng",
    "as_rng",
    "synthesize",
    "generate_signal",
    "sample_uniform",
    "observe",
    "add_noise",
    "nmse",
]

# ranges of 1/tau per dimension for damped test signals
DAMPING_RANGES = ((8.0, 16.0), (16.0, 32.0), (64.0, 128.0))


@dataclass(frozen=True)
class SpectralComponents:
    """Ground truth of a superposition of ``r`` (damped) complex exponentials.

    ``freqs`` and ``damping`` have shape ``(r, d)``.
    """

    amplitudes: np.ndarray
    freqs: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.amplitudes, dtype=complex))
        f = np.asarray(self.freqs, dtype=float).reshape(len(b), -1)
        tau = np.asarray(self.damping, dtype=float).reshape(f.shape)
        if len(b) < 1:
            raise ValueError("model order must be at least 1")
        if np.any(f < 0) or np.any(f >= 1):
            raise ValueError("frequencies must lie in [0, 1)")
        if np.any(tau < 0):
            raise ValueError("damping factors must be non-negative")
        object.__setattr__(self, "amplitudes", b)
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "damping", tau)

    @property
    def r(self):
        return len(self.amplitudes)

    @property
    def ndim(self):
        return self.freqs.shape[1]


@dataclass(frozen=True)
class SampleMask:
    """Sorted observed linear indices of a length-``N`` signal."""

    indices: np.ndarray
    N: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if len(idx) != len(np.asarray(self.indices).ravel()):
            raise ValueError("mask indices must be unique")
        if len(idx) == 0 or idx[0] < 0 or idx[-1] >= self.N:
            raise ValueError(f"mask indices must be a non-empty subset of [0, {self.N})")
        object.__setattr__(self, "indices", idx)

    @property
    def m(self):
        return len(self.indices)

    @property
    def Sp(self):
        return self.m / self.N

    @property
    def indicator(self):
        out = np.zeros(self.N)
        out[self.indices] = 1.0
        return out

    @classmethod
    def full(cls, N):
        return cls(np.arange(N), N)


@dataclass(frozen=True)
class ObservedData:
    """Zero-filled observation vector together with its mask."""

    s: np.ndarray
    mask: SampleMask
    noise_level: float = 0.0
    noise: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        s = np.asarray(self.s, dtype=complex).ravel()
        if len(s) != self.mask.N:
            raise ValueError(f"s has length {len(s)}, mask expects {self.mask.N}")
        off = np.ones(self.mask.N, dtype=bool)
        off[self.mask.indices] = False
        if np.any(s[off] != 0):
            raise ValueError("s must vanish off the observed index set")
        object.__setattr__(self, "s", s)


def trial_rng(base_seed, trial, *keys):
    """Independent generator for one trial.

    Each trial gets its own child of ``SeedSequence(base_seed)``, keyed by
    the trial index and optional non-negative integer ``keys`` (e.g. grid
    cell coordinates), so results do not depend on how many trials run or in
    which order.
    """
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(trial), *(int(k) for k in keys)))
    return np.random.Generator(np.random.PCG64(ss))


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def synthesize(components, dims):
    """Evaluate the signal model on a grid; returns the flat column-major vector."""
    dims = tuple(np.atleast_1d(dims))
    if components.ndim != len(dims):
        raise ValueError(f"components are {components.ndim}-D, dims are {len(dims)}-D")
    x = np.zeros(dims, dtype=complex)
    for b, f, tau in zip(components.amplitudes, components.freqs, components.damping):
        term = np.array(b, dtype=complex)
        for fl, tl, n in zip(f, tau, dims):
            t = np.arange(n)
            y = np.exp((2j * np.pi * fl - tl) * t)
            term = np.multiply.outer(term, y)
        x += term
    return x.ravel(order="F")


def generate_signal(dims, r, damped=False, rng=None):
    """Draw a random order-``r`` spectrally sparse signal.

    Frequencies are uniform on ``[0, 1)^d``, amplitude phases uniform on
    ``[0, 2 pi)`` and magnitudes ``1 + 10 ** (0.5 c)`` with ``c ~ U[0, 1]``.
    With ``damped=True`` the inverse damping of dimension ``l`` is drawn from
    ``DAMPING_RANGES[l]``.

    Returns
    -------
    x : ndarray, shape (N,)
    components : SpectralComponents
    """
    if int(r) < 1:
        raise ValueError(f"model order must be >= 1, got {r}")
    dims = tuple(int(n) for n in np.atleast_1d(dims))
    d = len(dims)
    if damped and d > len(DAMPING_RANGES):
        raise ValueError(f"no damping range defined beyond {len(DAMPING_RANGES)} dimensions")
    rng = as_rng(rng)
    freqs = rng.uniform(0.0, 1.0, size=(r, d))
    phase = rng.uniform(0.0, 2 * np.pi, size=r)
    c = rng.uniform(0.0, 1.0, size=r)
    amps = (1 + 10 ** (0.5 * c)) * np.exp(1j * phase)
    if damped:
        lo = np.array([DAMPING_RANGES[l][0] for l in range(d)])
        hi = np.array([DAMPING_RANGES[l][1] for l in range(d)])
        damping = 1.0 / rng.uniform(lo, hi, size=(r, d))
    else:
        damping = np.zeros((r, d))
    comp = SpectralComponents(amps, freqs, damping)
    return synthesize(comp, dims), comp


def sample_uniform(N, Sp, rng=None):
    """Draw ``round(Sp * N)`` distinct indices uniformly (half rounds up)."""
    if not 0 < Sp <= 1:
        raise ValueError(f"sampling ratio must lie in (0, 1], got {Sp}")
    m = max(1, int(np.floor(Sp * N + 0.5)))
    rng = as_rng(rng)
    idx = rng.choice(N, size=m, replace=False)
    return SampleMask(np.sort(idx), N)


def observe(x, mask):
    """Zero-filled noiseless observation of ``x`` on ``mask``."""
    x = np.asarray(x, dtype=complex).ravel()
    s = np.zeros_like(x)
    s[mask.indices] = x[mask.indices]
    return ObservedData(s, mask)


def add_noise(data, eta, rng=None):
    """Add ``e = eta * ||P s|| * w / ||w||`` with complex Gaussian ``w`` on the mask.

    The resulting SNR is ``-20 log10(eta)`` dB.
    """
    if eta < 0:
        raise ValueError(f"noise level must be non-negative, got {eta}")
    if eta == 0:
        return data
    rng = as_rng(rng)
    m = data.mask.m
    w = (rng.standard_normal(m) + 1j * rng.standard_normal(m)) / np.sqrt(2)
    e = np.zeros(data.mask.N, dtype=complex)
    e[data.mask.indices] = eta * np.linalg.norm(data.s) * w / np.linalg.norm(w)
    return replace(data, s=data.s + e, noise_level=float(eta), noise=e)


def nmse(x_est, x_true):
    """Relative l2 error ``||x_est - x_true|| / ||x_true||``."""
    x_est = np.asarray(x_est)
    x_true = np.asarray(x_true)
    if x_est.shape != x_true.shape:
        raise ValueError(f"shape mismatch {x_est.shape} vs {x_true.shape}")
    denom = np.linalg.norm(x_true)
    if denom == 0:
        raise ValueError("nmse is undefined for a zero reference signal")
    return float(np.linalg.norm(x_est - x_true) / denom)
