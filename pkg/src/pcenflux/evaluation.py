"""Mean time between false alarms at half recall (MTBFA@50).

Stage one calibrates, per distance bin, the threshold that half of the
positive clips reach. Stage two counts how often the detection function of
call-free recordings exceeds that threshold, and divides the recorded
duration by that count.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.signal

from .novelty import NoveltyCurve, scene_normalize

FRAMES = "frames"
PEAKS = "peaks"
COUNTING_MODES = (FRAMES, PEAKS)

REPORT_CSV_HEADER = [
    "bin_lo_m",
    "bin_hi_m",
    "threshold",
    "recall",
    "false_alarms",
    "neg_duration_s",
    "mtbfa_s",
]


@dataclass
class PositiveClip:
    curve: NoveltyCurve
    distance: float
    clip_id: str

    def __post_init__(self):
        if not self.distance >= 0:
            raise ValueError(f"clip {self.clip_id}: distance must be >= 0, got {self.distance}")
        if len(self.curve) == 0:
            raise ValueError(f"clip {self.clip_id}: empty novelty curve")


@dataclass
class DistanceBin:
    lo: float
    hi: float
    clips: List[PositiveClip] = field(default_factory=list)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"bin needs lo < hi, got [{self.lo}, {self.hi})")

    def contains(self, distance: float) -> bool:
        return self.lo <= distance < self.hi


@dataclass
class BinResult:
    lo: float
    hi: float
    threshold: float
    recall: float
    n_clips: int
    false_alarms: int
    negative_duration: float
    mtbfa: float


@dataclass
class EvalReport:
    detector: str
    bins: List[BinResult]
    config: Dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "detector": self.detector,
            "config": _jsonable(self.config),
            "bins": [
                {
                    "bin_lo_m": _jsonable(b.lo),
                    "bin_hi_m": _jsonable(b.hi),
                    "threshold": _jsonable(b.threshold),
                    "recall": b.recall,
                    "n_clips": b.n_clips,
                    "false_alarms": b.false_alarms,
                    "neg_duration_s": b.negative_duration,
                    "mtbfa_s": _jsonable(b.mtbfa),
                }
                for b in self.bins
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_CSV_HEADER)
        for b in self.bins:
            writer.writerow(
                [
                    _fmt(b.lo),
                    _fmt(b.hi),
                    _fmt(b.threshold),
                    _fmt(b.recall),
                    b.false_alarms,
                    _fmt(b.negative_duration),
                    _fmt(b.mtbfa),
                ]
            )
        return buf.getvalue()


def _fmt(x) -> str:
    return "inf" if x == math.inf else repr(float(x))


def _jsonable(x):
    # Infinity is not valid JSON; render it as the string "inf".
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def clip_score(c: PositiveClip) -> float:
    """Peak of the clip's detection function, ignoring the warm-up frame 0."""
    values = c.curve.values
    if len(values) < 2:
        return float(values[0])
    return float(values[1:].max())


def calibrate_threshold(clips: Sequence[PositiveClip]) -> float:
    """Threshold reached by half of the clips (upper median).

    Scores are ranked in decreasing order, ties broken by ``clip_id``, and the
    ``ceil(n/2)``-th score is returned. With distinct scores exactly
    ``ceil(n/2)`` clips score at or above it, so recall is the smallest value
    that is at least 0.5.
    """
    clips = list(getattr(clips, "clips", clips))
    if len(clips) < 2:
        raise ValueError(f"threshold calibration needs at least 2 clips, got {len(clips)}")
    ranked = sorted(clips, key=lambda c: (-clip_score(c), c.clip_id))
    return clip_score(ranked[math.ceil(len(ranked) / 2) - 1])


def recall(clips: Sequence[PositiveClip], threshold: float) -> float:
    clips = list(getattr(clips, "clips", clips))
    return sum(clip_score(c) >= threshold for c in clips) / len(clips)


def count_false_alarms(neg: NoveltyCurve, threshold: float, counting: str = FRAMES) -> int:
    """Number of frames (``t >= 1``) strictly above threshold.

    With ``counting="peaks"`` only local maxima above threshold are counted,
    a plateau counting once.
    """
    if math.isnan(threshold):
        raise ValueError("threshold must not be NaN")
    values = neg.values
    if counting == FRAMES:
        return int(np.count_nonzero(values[1:] > threshold))
    if counting == PEAKS:
        # Frame 0 still serves as the left neighbour of frame 1.
        peaks, _ = scipy.signal.find_peaks(values)
        peaks = peaks[peaks >= 1]
        return int(np.count_nonzero(values[peaks] > threshold))
    raise ValueError(f"unknown counting mode {counting!r}; choose from {COUNTING_MODES}")


def mtbfa(total_negative_duration: float, false_alarms: int) -> float:
    """Seconds of negative audio per false alarm; ``inf`` when there are none."""
    if not total_negative_duration > 0:
        raise ValueError(f"negative duration must be positive, got {total_negative_duration}")
    if false_alarms == 0:
        return math.inf
    return total_negative_duration / false_alarms


def make_bins(positives: Sequence[PositiveClip], bin_edges: Sequence[float]) -> List[DistanceBin]:
    """Assign clips to the half-open bins ``[edges[i], edges[i+1])``."""
    edges = [float(e) for e in bin_edges]
    if len(edges) < 2:
        raise ValueError("need at least two bin edges")
    if any(a >= b for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be strictly increasing, got {edges}")
    bins = [DistanceBin(lo, hi) for lo, hi in zip(edges, edges[1:])]
    for clip in positives:
        for b in bins:
            if b.contains(clip.distance):
                b.clips.append(clip)
                break
        else:
            raise ValueError(
                f"clip {clip.clip_id} at {clip.distance} m lies outside all bins {edges}"
            )
    return bins


@dataclass
class BinCalibration:
    """Stage-one output for one distance bin."""

    lo: float
    hi: float
    threshold: float
    recall: float
    n_clips: int


def calibrate_bins(
    positives: Sequence[PositiveClip], bin_edges: Sequence[float]
) -> List[BinCalibration]:
    """Calibrate every bin on its own positives, sorted by lower edge."""
    out = []
    for b in make_bins(positives, bin_edges):
        threshold = calibrate_threshold(b.clips)
        out.append(BinCalibration(b.lo, b.hi, threshold, recall(b.clips, threshold), len(b.clips)))
    return out


def count_against(
    calibrations: Sequence[BinCalibration],
    negatives: Sequence[NoveltyCurve],
    counting: str = FRAMES,
    scene_length: Optional[int] = None,
    detector: Optional[str] = None,
    config: Optional[Dict] = None,
) -> EvalReport:
    """Stage two: false alarms of every calibrated threshold on all negatives.

    When ``scene_length`` (frames) is given, each negative curve has its
    per-scene minimum removed before counting. Negative durations are
    ``frames / frame_rate``.
    """
    if not negatives:
        raise ValueError("need at least one negative recording")
    if counting not in COUNTING_MODES:
        raise ValueError(f"unknown counting mode {counting!r}; choose from {COUNTING_MODES}")
    if scene_length is not None:
        negatives = [scene_normalize(n, scene_length) for n in negatives]
    duration = sum(n.duration for n in negatives)

    results = []
    for cal in sorted(calibrations, key=lambda c: c.lo):
        alarms = sum(count_false_alarms(n, cal.threshold, counting) for n in negatives)
        results.append(
            BinResult(
                lo=cal.lo,
                hi=cal.hi,
                threshold=cal.threshold,
                recall=cal.recall,
                n_clips=cal.n_clips,
                false_alarms=alarms,
                negative_duration=duration,
                mtbfa=mtbfa(duration, alarms),
            )
        )
    if detector is None:
        tags = {n.detector for n in negatives}
        detector = tags.pop() if len(tags) == 1 else "mixed"
    snapshot = {"counting": counting, "scene_length_frames": scene_length}
    snapshot.update(config or {})
    return EvalReport(detector, results, snapshot)


def evaluate(
    positives: Sequence[PositiveClip],
    negatives: Sequence[NoveltyCurve],
    bin_edges: Sequence[float],
    counting: str = FRAMES,
    scene_length: Optional[int] = None,
    config: Optional[Dict] = None,
) -> EvalReport:
    """Run both stages for every distance bin.

    Every bin is calibrated on its own positives and tested against all
    negatives (see :func:`count_against`).
    """
    tags = {c.curve.detector for c in positives} | {n.detector for n in negatives}
    snapshot = {"bin_edges": [float(e) for e in bin_edges]}
    snapshot.update(config or {})
    return count_against(
        calibrate_bins(positives, bin_edges),
        negatives,
        counting,
        scene_length,
        detector=tags.pop() if len(tags) == 1 else "mixed",
        config=snapshot,
    )
