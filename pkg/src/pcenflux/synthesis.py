"""Synthetic calls and noise scenes for desk-scale detector evaluation.

Calls are rendered at a reference distance, propagated to each sensor
distance by spherical spreading and frequency-dependent absorption, then
mixed into fresh background noise. Negative recordings are pure noise
scenes, some carrying square-wave amplitude-modulated "engine" noise.
"""

import csv
import math
import os
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .frontend import Waveform, write_wav

LINEAR_CHIRP = "linear_chirp"
TONE_BURST = "tone_burst"
WHITE = "white"
AM_ENGINE = "am_engine"
IMPULSE_TRAIN = "impulse_train"

RAMP_SECONDS = 0.005

# Two-point power law through 5 dB/km at 1 kHz and 100 dB/km at 10 kHz.
DEFAULT_ABSORPTION_EXPONENT = math.log10(100.0 / 5.0)

MANIFEST_HEADER = ["clip_id", "kind", "distance_m", "seed", "path"]


@dataclass(frozen=True)
class PropagationModel:
    reference_distance: float = 1.0
    absorption_at_1khz: float = 5.0
    absorption_exponent: float = DEFAULT_ABSORPTION_EXPONENT

    def __post_init__(self):
        if not self.reference_distance > 0:
            raise ValueError(f"reference_distance must be > 0, got {self.reference_distance}")
        if not self.absorption_at_1khz >= 0:
            raise ValueError(f"absorption_at_1khz must be >= 0, got {self.absorption_at_1khz}")

    def absorption(self, freq) -> np.ndarray:
        """Absorption coefficient in dB/km at ``freq`` Hz."""
        freq = np.abs(np.asarray(freq, dtype=np.float64))
        return self.absorption_at_1khz * (freq / 1000.0) ** self.absorption_exponent


@dataclass(frozen=True)
class CallTemplate:
    kind: str = LINEAR_CHIRP
    f_start: float = 3000.0
    f_end: float = 7000.0
    duration: float = 0.15
    amplitude: float = 1.0


@dataclass(frozen=True)
class NoiseScene:
    kind: str = WHITE
    duration: float = 10.0
    am_period: float = 0.2
    modulation_depth: float = 1.0
    amplitude: float = 1.0
    seed: int = 0
    # When set, the am_engine carrier repeats a frozen noise segment of this length.
    carrier_period: Optional[float] = None


def attenuate(w: Waveform, model: PropagationModel, distance: float) -> Waveform:
    """Propagate a waveform from the reference distance to ``distance`` meters.

    Applies the ``reference / distance`` spreading gain, then a zero-phase
    frequency-domain gain of ``-absorption(f) * (distance - reference) / 1000`` dB
    over the whole signal.
    """
    if distance < model.reference_distance:
        raise ValueError(
            f"distance {distance} m is closer than the reference distance "
            f"{model.reference_distance} m"
        )
    spreading = model.reference_distance / distance
    path_km = (distance - model.reference_distance) / 1000.0
    spectrum = np.fft.rfft(w.samples)
    freqs = np.fft.rfftfreq(len(w), 1.0 / w.sample_rate)
    gain = 10.0 ** (-model.absorption(freqs) * path_km / 20.0)
    samples = np.fft.irfft(spectrum * gain, n=len(w)) * spreading
    return Waveform(samples, w.sample_rate)


def _ramp(n, sample_rate):
    envelope = np.ones(n)
    ramp = min(int(round(RAMP_SECONDS * sample_rate)), n // 2)
    if ramp > 0:
        rise = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        envelope[:ramp] = rise
        envelope[n - ramp :] = rise[::-1]
    return envelope


def render_call(tpl: CallTemplate, sr: int) -> Waveform:
    """Linear chirp or tone with 5 ms raised-cosine ramps, peak ``tpl.amplitude``."""
    nyquist = sr / 2
    for name in ("f_start", "f_end"):
        f = getattr(tpl, name)
        if not 0 < f < nyquist:
            raise ValueError(f"{name}={f} Hz outside (0, {nyquist}) Hz")
    if not tpl.duration > 0:
        raise ValueError(f"call duration must be > 0, got {tpl.duration}")
    n = max(int(round(tpl.duration * sr)), 1)
    t = np.arange(n) / sr
    if tpl.kind == LINEAR_CHIRP:
        sweep = (tpl.f_end - tpl.f_start) / tpl.duration
        phase = 2 * np.pi * (tpl.f_start * t + 0.5 * sweep * t**2)
    elif tpl.kind == TONE_BURST:
        phase = 2 * np.pi * tpl.f_start * t
    else:
        raise ValueError(f"unknown call kind {tpl.kind!r}")
    samples = np.sin(phase) * _ramp(n, sr)
    peak = np.abs(samples).max()
    if peak > 0:
        samples *= tpl.amplitude / peak
    return Waveform(samples, sr)


def render_noise(scene: NoiseScene, sr: int) -> Waveform:
    """Seeded noise scene.

    ``am_engine`` multiplies broadband noise by a square wave alternating
    between full amplitude (first half period) and ``1 - depth``.
    ``impulse_train`` places an impulse of height ``amplitude`` every
    ``am_period`` seconds.
    """
    n = int(round(scene.duration * sr))
    if n < 1:
        raise ValueError(f"scene duration {scene.duration} s is shorter than one sample")
    rng = np.random.default_rng(scene.seed)
    if scene.kind == WHITE:
        return Waveform(scene.amplitude * rng.standard_normal(n), sr)

    if not scene.am_period > 0:
        raise ValueError(f"am_period must be > 0, got {scene.am_period}")
    period = scene.am_period * sr
    index = np.arange(n)
    if scene.kind == IMPULSE_TRAIN:
        samples = np.zeros(n)
        samples[:: max(int(round(period)), 1)] = scene.amplitude
        return Waveform(samples, sr)
    if scene.kind != AM_ENGINE:
        raise ValueError(f"unknown noise kind {scene.kind!r}")
    if not 0 <= scene.modulation_depth <= 1:
        raise ValueError(f"modulation_depth must lie in [0, 1], got {scene.modulation_depth}")

    if scene.carrier_period is None:
        carrier = rng.standard_normal(n)
    else:
        segment = rng.standard_normal(max(int(round(scene.carrier_period * sr)), 1))
        carrier = np.resize(segment, n)
    on = np.mod(index, period) < period / 2
    modulation = np.where(on, 1.0, 1.0 - scene.modulation_depth)
    return Waveform(scene.amplitude * carrier * modulation, sr)


@dataclass(frozen=True)
class CorpusConfig:
    """Everything needed to regenerate a synthetic corpus bit for bit.

    ``snr_db`` is the call-to-background RMS ratio at the reference
    distance, measured over the call's own support. AM engine noise is
    added to a ``am_fraction`` share of negative scenes at ``am_level_db``
    relative to the background, with a period drawn from ``am_period_range``.

    The avian defaults keep the stationary background far below even the
    most distant call, so that engine noise rather than the floor is what
    separates the detectors.
    """

    sample_rate: int = 22050
    n_calls: int = 30
    distances: Tuple[float, ...] = (30.0, 100.0, 200.0, 300.0, 500.0)
    clip_duration: float = 0.7
    call: CallTemplate = CallTemplate()
    model: PropagationModel = PropagationModel(reference_distance=30.0)
    snr_db: float = 100.0
    level_jitter_db: float = 6.0
    onset_margin: float = 0.1
    noise_amplitude: float = 1e-6
    negative_duration: float = 600.0
    scene_duration: float = 10.0
    am_fraction: float = 0.5
    am_level_db: float = 40.0
    am_depth: float = 0.999
    am_period_range: Tuple[float, float] = (0.05, 0.5)
    seed: int = 0

    def validate(self):
        nyquist = self.sample_rate / 2
        if self.n_calls < 0:
            raise ValueError(f"n_calls must be >= 0, got {self.n_calls}")
        if self.call.duration + 2 * self.onset_margin > self.clip_duration:
            raise ValueError(
                f"call duration {self.call.duration} s plus two {self.onset_margin} s margins "
                f"exceeds clip duration {self.clip_duration} s"
            )
        for f in (self.call.f_start, self.call.f_end):
            if not 0 < f < nyquist:
                raise ValueError(f"call frequency {f} Hz outside (0, {nyquist}) Hz")
        for d in self.distances:
            if d < self.model.reference_distance:
                raise ValueError(
                    f"distance {d} m is closer than the reference distance "
                    f"{self.model.reference_distance} m"
                )
        if self.negative_duration < 0 or self.scene_duration <= 0:
            raise ValueError("negative_duration must be >= 0 and scene_duration > 0")
        if self.negative_duration and self.scene_duration > self.negative_duration:
            raise ValueError(
                f"scene_duration {self.scene_duration} s exceeds negative_duration "
                f"{self.negative_duration} s"
            )
        if not 0 <= self.am_fraction <= 1:
            raise ValueError(f"am_fraction must lie in [0, 1], got {self.am_fraction}")
        lo, hi = self.am_period_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid am_period_range {self.am_period_range}")


AVIAN_CORPUS = CorpusConfig()
MARINE_CORPUS = CorpusConfig(
    sample_rate=2000,
    distances=(1000.0, 3000.0, 6000.0, 12000.0),
    clip_duration=2.0,
    call=CallTemplate(LINEAR_CHIRP, 60.0, 180.0, 1.0, 1.0),
    # Seawater absorption is far weaker than in air; roughly quadratic below 1 kHz.
    model=PropagationModel(reference_distance=1000.0, absorption_at_1khz=0.06, absorption_exponent=2.0),
    snr_db=80.0,
    noise_amplitude=1e-4,
    am_level_db=40.0,
    negative_duration=1800.0,
    scene_duration=60.0,
)
CORPUS_PRESETS = {"avian": AVIAN_CORPUS, "marine": MARINE_CORPUS}


@dataclass
class CorpusItem:
    clip_id: str
    kind: str
    waveform: Waveform
    distance: Optional[float]
    seed: int

    @property
    def filename(self) -> str:
        return f"{self.clip_id}.wav"


@dataclass
class Corpus:
    config: CorpusConfig
    positives: List[CorpusItem] = field(default_factory=list)
    negatives: List[CorpusItem] = field(default_factory=list)

    def manifest(self) -> List[dict]:
        rows = []
        for item in self.positives + self.negatives:
            rows.append(
                {
                    "clip_id": item.clip_id,
                    "kind": item.kind,
                    "distance_m": "" if item.distance is None else repr(float(item.distance)),
                    "seed": item.seed,
                    "path": os.path.join(item.kind + "s", item.filename),
                }
            )
        return rows


def _seed(base, *keys) -> int:
    return int(np.random.SeedSequence([base, *keys]).generate_state(1)[0])


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x)))) if len(x) else 0.0


def build_corpus(config: CorpusConfig) -> Corpus:
    """Render positives at every distance and call-free negative scenes.

    Call ``i`` gets one seeded level jitter and onset shared by all its
    distances (the same vocalization reaching several sensors); each clip
    then receives its own background noise.
    """
    config.validate()
    sr = config.sample_rate
    corpus = Corpus(config)
    clip_len = int(round(config.clip_duration * sr))

    for i in range(config.n_calls):
        call_seed = _seed(config.seed, 0, i)
        rng = np.random.default_rng(call_seed)
        jitter = rng.uniform(-0.5, 0.5) * config.level_jitter_db
        call = render_call(config.call, sr).samples
        margin = int(round(config.onset_margin * sr))
        onset = int(rng.integers(margin, clip_len - len(call) - margin + 1))
        target_rms = config.noise_amplitude * 10 ** ((config.snr_db + jitter) / 20)
        call = call * (target_rms / _rms(call))
        clean = np.zeros(clip_len)
        clean[onset : onset + len(call)] = call
        clean = Waveform(clean, sr)

        clip_seed = _seed(config.seed, 1, i)
        for distance in config.distances:
            received = attenuate(clean, config.model, distance)
            noise = render_noise(
                NoiseScene(WHITE, config.clip_duration, amplitude=config.noise_amplitude, seed=clip_seed),
                sr,
            )
            corpus.positives.append(
                CorpusItem(
                    clip_id=f"pos_{i:03d}_{int(round(distance))}m",
                    kind="positive",
                    waveform=Waveform(received.samples + noise.samples, sr),
                    distance=float(distance),
                    seed=clip_seed,
                )
            )

    n_scenes = int(round(config.negative_duration / config.scene_duration))
    for k in range(n_scenes):
        scene_seed = _seed(config.seed, 2, k)
        corpus.negatives.append(
            CorpusItem(
                clip_id=f"neg_{k:04d}",
                kind="negative",
                waveform=render_negative(config, scene_seed),
                distance=None,
                seed=scene_seed,
            )
        )
    return corpus


def render_negative(config: CorpusConfig, seed: int) -> Waveform:
    """One call-free scene: white background, plus AM engine noise with probability ``am_fraction``."""
    sr = config.sample_rate
    rng = np.random.default_rng(seed)
    background = render_noise(
        NoiseScene(WHITE, config.scene_duration, amplitude=config.noise_amplitude, seed=seed), sr
    )
    if rng.uniform() >= config.am_fraction:
        return background
    engine = NoiseScene(
        AM_ENGINE,
        config.scene_duration,
        am_period=float(rng.uniform(*config.am_period_range)),
        modulation_depth=config.am_depth,
        amplitude=config.noise_amplitude * 10 ** (config.am_level_db / 20),
        seed=int(rng.integers(2**31)),
    )
    return Waveform(background.samples + render_noise(engine, sr).samples, sr)


def write_corpus(corpus: Corpus, out_dir) -> str:
    """Write WAVs under ``positives/`` and ``negatives/`` plus ``manifest.csv``.

    Returns the manifest path. Audio is stored as 32-bit float.
    """
    for sub in ("positives", "negatives"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for item in corpus.positives + corpus.negatives:
        write_wav(os.path.join(out_dir, item.kind + "s", item.filename), item.waveform)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    with open(manifest_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(corpus.manifest())
    return manifest_path


def read_manifest(path) -> List[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValueError(f"{path}: unexpected manifest header {reader.fieldnames}")
        return list(reader)
