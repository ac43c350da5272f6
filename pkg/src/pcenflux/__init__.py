"""Per-channel energy normalization and spectral-flux detection functions."""

from .errors import NumericError
from .evaluation import EvalReport, PositiveClip, evaluate
from .frontend import AVIAN, MARINE, Spectrogram, SpectrogramConfig, Waveform, spectrogram
from .novelty import NoveltyCurve, detect, pcen_max, sf_avg, sf_max
from .pcen import PcenParams, pcen, smooth, softplus_flux

__version__ = "0.1.0"
