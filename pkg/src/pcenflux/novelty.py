"""Frame-level detection functions.

Three detectors map a magnitude spectrogram to one value per frame:

* ``sf_avg``: rectified log-magnitude increase, averaged over bands.
* ``sf_max``: log-magnitude increase of the single band that rose most
  (not rectified, so it can be negative).
* ``pcen_max``: ``log(1 + max_f E[t, f] / M[t, f])`` with ``M`` the
  exponential moving average of past frames.

Every detector emits 0 at frame 0, which has no predecessor.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError
from .frontend import Spectrogram, SpectrogramConfig, Waveform, iter_spectrogram
from .pcen import Smoother, _check_s

SF_AVG = "sf_avg"
SF_MAX = "sf_max"
PCEN_MAX = "pcen_max"
DETECTORS = (SF_AVG, SF_MAX, PCEN_MAX)

# Relative log floor: zero magnitudes are raised to this fraction of the clip maximum.
LOG_FLOOR = 1e-10


@dataclass
class NoveltyCurve:
    values: np.ndarray
    frame_rate: float
    detector: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError(f"novelty values must be 1-D, got shape {self.values.shape}")

    def __len__(self):
        return len(self.values)

    @property
    def duration(self) -> float:
        return len(self.values) / self.frame_rate

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.frame_rate


def _spectrogram_values(E):
    values = np.asarray(getattr(E, "values", E), dtype=np.float64)
    if values.ndim != 2:
        raise ValueError(f"expected a (frames, bands) matrix, got shape {values.shape}")
    if values.size and values.min() < 0:
        raise ValueError("spectrogram has negative entries")
    return values


def _frame_rate(E, frame_rate):
    if frame_rate is not None:
        return frame_rate
    if isinstance(E, Spectrogram):
        return E.frame_rate
    raise ValueError("frame_rate is required when passing a bare matrix")


class _FluxStream:
    """Log-flux detector over consecutive spectrogram blocks."""

    def __init__(self, pooling, floor):
        self.pooling = pooling
        self.floor = floor
        self._prev = None

    def __call__(self, block):
        if self.floor <= 0:
            # Silent clip: nothing ever changes.
            return np.zeros(len(block))
        logs = np.log(np.maximum(block, self.floor))
        if self._prev is None:
            stacked, lead = logs, [0.0]
        else:
            stacked, lead = np.concatenate([self._prev[None, :], logs]), []
        self._prev = logs[-1]
        diff = np.diff(stacked, axis=0)
        if self.pooling == "avg":
            pooled = np.maximum(diff, 0.0).mean(axis=1)
        else:
            pooled = diff.max(axis=1)
        return np.concatenate([lead, pooled])


class _PcenMaxStream:
    def __init__(self, s):
        self.smoother = Smoother(s)
        self.offset = 0

    def __call__(self, block):
        M = self.smoother(block)
        zero = M <= 0
        if np.any(zero & (block > 0)):
            t, f = (int(i) for i in np.argwhere(zero & (block > 0))[0])
            raise NumericError(
                f"pcen_max: zero smoothed energy under a nonzero magnitude at frame "
                f"{self.offset + t} (band {f})",
                frame=self.offset + t,
                band=f,
            )
        # Empty bins with an empty history carry no novelty.
        ratio = np.divide(block, M, out=np.zeros_like(block), where=~zero)
        out = np.log1p(ratio.max(axis=1))
        if self.offset == 0 and len(out):
            out[0] = 0.0
        self.offset += len(block)
        return out


def log_floor(E) -> float:
    values = _spectrogram_values(E)
    return LOG_FLOOR * values.max() if values.size else 0.0


def sf_avg(E, frame_rate=None) -> NoveltyCurve:
    """Averaged spectral flux: mean over bands of ``max(log E[t] - log E[t-1], 0)``."""
    values = _spectrogram_values(E)
    curve = _FluxStream("avg", log_floor(values))(values)
    return NoveltyCurve(curve, _frame_rate(E, frame_rate), SF_AVG)


def sf_max(E, frame_rate=None) -> NoveltyCurve:
    """Max-pooled spectral flux: ``max_f (log E[t, f] - log E[t-1, f])``.

    The result is not rectified; a frame where every band decays is negative.
    """
    values = _spectrogram_values(E)
    curve = _FluxStream("max", log_floor(values))(values)
    return NoveltyCurve(curve, _frame_rate(E, frame_rate), SF_MAX)


def pcen_max(E, s: float, frame_rate=None) -> NoveltyCurve:
    """Max-pooled PCEN at ``(eps, alpha, delta, r) = (0, 1, 1, 0)``.

    The geometric-series denominator ``s * sum_tau (1-s)**tau E[t-tau-1]`` is
    realized by the recursive smoother, initialized at ``M[0] = E[0]``.

    Raises:
        NumericError: if a band has energy while its smoothed history is zero.
    """
    _check_s(s)
    values = _spectrogram_values(E)
    curve = _PcenMaxStream(s)(values)
    return NoveltyCurve(curve, _frame_rate(E, frame_rate), PCEN_MAX)


def novelty(E, detector: str, s: float = None, frame_rate=None) -> NoveltyCurve:
    if detector == SF_AVG:
        return sf_avg(E, frame_rate)
    if detector == SF_MAX:
        return sf_max(E, frame_rate)
    if detector == PCEN_MAX:
        if s is None:
            raise ValueError("pcen_max needs a smoothing coefficient s")
        return pcen_max(E, s, frame_rate)
    raise ValueError(f"unknown detector {detector!r}; choose from {', '.join(DETECTORS)}")


def detect(
    w: Waveform, cfg: SpectrogramConfig, detector: str, s: float = None, chunk_frames: int = 8192
) -> NoveltyCurve:
    """Detection function of a waveform, computed block by block.

    Only ``chunk_frames`` spectrogram frames are held at once. The log-flux
    detectors need the clip maximum for their floor, so they make a first
    pass over the blocks to find it.
    """
    if detector == PCEN_MAX:
        if s is None:
            raise ValueError("pcen_max needs a smoothing coefficient s")
        stream = _PcenMaxStream(s)
    elif detector in (SF_AVG, SF_MAX):
        peak = max(block.values.max() for block in iter_spectrogram(w, cfg, chunk_frames))
        stream = _FluxStream("avg" if detector == SF_AVG else "max", LOG_FLOOR * peak)
    else:
        raise ValueError(f"unknown detector {detector!r}; choose from {', '.join(DETECTORS)}")
    parts = [stream(block.values) for block in iter_spectrogram(w, cfg, chunk_frames)]
    return NoveltyCurve(np.concatenate(parts), cfg.frame_rate, detector)


def scene_normalize(c: NoveltyCurve, scene_length: int) -> NoveltyCurve:
    """Subtract the minimum of each consecutive ``scene_length``-frame window.

    The last window may be shorter. Removes slow drifts in the background
    level between scenes of a long recording.
    """
    if scene_length < 1:
        raise ValueError(f"scene_length must be >= 1, got {scene_length}")
    if len(c) == 0:
        raise ValueError("cannot normalize an empty curve")
    values = c.values.copy()
    for start in range(0, len(values), scene_length):
        window = values[start : start + scene_length]
        window -= window.min()
    return replace(c, values=values)


def write_curve_csv(path, c: NoveltyCurve):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["frame", "time_sec", "value"])
        for frame, value in enumerate(c.values):
            writer.writerow([frame, f"{frame / c.frame_rate:.6f}", repr(float(value))])


def read_curve_csv(path, frame_rate: float, detector: str = "unknown") -> NoveltyCurve:
    """Read a curve written by :func:`write_curve_csv`.

    The CSV only stores times to the microsecond, so the frame rate is
    supplied by the caller instead of being inferred.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["frame", "time_sec", "value"]:
            raise ValueError(f"{path}: not a novelty curve CSV (header {header})")
        values = [float(row[2]) for row in reader]
    return NoveltyCurve(np.array(values), frame_rate, detector)
