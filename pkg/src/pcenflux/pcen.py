"""Per-channel energy normalization and its log-flux limit.

The gain-control matrix is a causal exponential moving average over past
frames, ``M[t] = s * E[t-1] + (1 - s) * M[t-1]`` with ``M[0] = E[0]``.
PCEN divides each bin by ``(eps + M)**alpha`` and applies a root
compression scaled by ``1/r``, which keeps a finite limit as ``r -> 0``.
All arithmetic runs in float64.
"""

from dataclasses import dataclass

import numpy as np
import scipy.signal

from .errors import NumericError


@dataclass(frozen=True)
class PcenParams:
    s: float
    epsilon: float = 0.0
    alpha: float = 1.0
    delta: float = 1.0
    r: float = 0.0

    def __post_init__(self):
        _check_s(self.s)
        for name in ("epsilon", "alpha", "delta", "r"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.r == 0 and self.delta == 0:
            raise ValueError("r = 0 requires delta > 0 (the limit log(delta) is undefined)")


def _check_s(s):
    if not 0 < s <= 1:
        raise ValueError(f"smoothing coefficient s must lie in (0, 1], got {s}")


def _values(E) -> np.ndarray:
    values = np.asarray(getattr(E, "values", E), dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a (frames, bands) matrix, got shape {values.shape}")
    return values


def s_from_time(T: float, frame_rate: float) -> float:
    """Approximate smoothing coefficient for an averaging time of ``T`` seconds.

    Uses ``1 - exp(-1 / (T * frame_rate))``. This is a convenience only; the
    coefficient, not the time constant, is what the smoother consumes.
    """
    if T <= 0 or frame_rate <= 0:
        raise ValueError("T and frame_rate must be positive")
    return 1.0 - np.exp(-1.0 / (T * frame_rate))


class Smoother:
    """Streaming form of :func:`smooth` that carries state across blocks.

    Feeding a spectrogram block by block gives the same output as one call
    to :func:`smooth` on the whole matrix.
    """

    def __init__(self, s: float):
        _check_s(s)
        self.s = s
        self._next = None

    def __call__(self, block: np.ndarray) -> np.ndarray:
        block = np.asarray(block, dtype=np.float64)
        if len(block) == 0:
            return block.copy()
        first = block[0] if self._next is None else self._next
        # y[n] = s * E[n] + (1 - s) * y[n-1] with y[-1] = M[0] gives y[n] = M[n+1].
        shifted, _ = scipy.signal.lfilter(
            [self.s], [1.0, -(1.0 - self.s)], block, axis=0, zi=((1.0 - self.s) * first)[None, :]
        )
        self._next = shifted[-1]
        return np.concatenate([first[None, :], shifted[:-1]], axis=0)


def smooth(E, s: float) -> np.ndarray:
    """Exponential moving average of past frames, one row per frame of ``E``."""
    return Smoother(s)(_values(E))


def _gain_normalized(values, M, epsilon, alpha):
    if alpha == 0:
        return values.copy()
    divisor = epsilon + M
    if epsilon == 0:
        bad = np.argwhere(divisor <= 0)
        if len(bad):
            t, f = (int(i) for i in bad[0])
            raise NumericError(
                f"zero smoothed energy at frame {t}, band {f} with epsilon = 0", frame=t, band=f
            )
    return values / divisor**alpha


def pcen(E, params: PcenParams) -> np.ndarray:
    """Per-channel energy normalization of a magnitude spectrogram.

    For ``r > 0`` computes ``((E / (eps + M)**alpha + delta)**r - delta**r) / r``;
    for ``r = 0`` returns its limit ``log(delta + E / (eps + M)**alpha) - log(delta)``.
    Both are evaluated through ``log1p``/``expm1`` so small ``r`` does not lose
    precision to cancellation.

    Raises:
        NumericError: if ``epsilon = 0`` and the smoother is zero somewhere.
    """
    values = _values(E)
    M = smooth(values, params.s)
    ratio = _gain_normalized(values, M, params.epsilon, params.alpha)
    delta, r = params.delta, params.r
    if delta == 0:
        return ratio**r / r
    log_term = np.log1p(ratio / delta)
    if r == 0:
        return log_term
    return delta**r * np.expm1(r * log_term) / r


def softplus_flux(E) -> np.ndarray:
    """``log(E[t] + E[t-1]) - log(E[t-1])`` per bin; the first row is zero.

    This is the value PCEN reaches when ``(s, eps, alpha, r) -> (1, 0, 1, 0)``,
    a smooth counterpart of the rectified log difference.

    Raises:
        NumericError: if a predecessor magnitude ``E[t-1]`` is zero.
    """
    values = _values(E)
    out = np.zeros_like(values)
    previous = values[:-1]
    bad = np.argwhere(previous <= 0)
    if len(bad):
        t, f = int(bad[0][0]) + 1, int(bad[0][1])
        raise NumericError(f"zero predecessor magnitude at frame {t}, band {f}", frame=t, band=f)
    out[1:] = np.log1p(values[1:] / previous)
    return out
