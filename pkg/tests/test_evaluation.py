import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcenflux import evaluation as ev
from pcenflux import frontend as fe
from pcenflux import novelty as nv
from pcenflux import synthesis as sy
from pcenflux.novelty import NoveltyCurve

FR = 10.0


def clip(values, distance=50.0, clip_id="c"):
    return ev.PositiveClip(NoveltyCurve(values, FR, "x"), distance, clip_id)


def scored(scores, distance=50.0, prefix="c"):
    return [clip([0.0, s], distance, f"{prefix}{i:04d}") for i, s in enumerate(scores)]


def neg(values):
    return NoveltyCurve(values, FR, "x")


@pytest.mark.parametrize(
    "values,expected", [([0, 1, 3, 2], 3), ([0, 0, 0], 0), ([9, 1, 2], 2)]
)
def test_clip_score_examples(values, expected):
    assert ev.clip_score(clip(values)) == expected


def test_threshold_odd_count():
    clips = scored([1, 2, 3])
    assert ev.calibrate_threshold(clips) == 2
    assert ev.recall(clips, 2) == pytest.approx(2 / 3)


def test_threshold_even_count_is_upper_median():
    clips = scored([1, 2, 3, 4])
    # The lower median (2) would admit three of four clips.
    assert ev.recall(clips, 2) == 0.75
    assert ev.calibrate_threshold(clips) == 3
    assert ev.recall(clips, 3) == 0.5


def test_threshold_all_equal():
    clips = scored([1.5] * 6)
    assert ev.calibrate_threshold(clips) == 1.5
    assert ev.recall(clips, 1.5) == 1.0


def test_threshold_needs_two_clips():
    with pytest.raises(ValueError, match="at least 2"):
        ev.calibrate_threshold(scored([1.0]))
    with pytest.raises(ValueError):
        ev.calibrate_threshold([])


def test_threshold_accepts_bin():
    b = ev.DistanceBin(0, 100, scored([4, 1, 3]))
    assert ev.calibrate_threshold(b) == 3


def test_recall_bracket_randomized():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 60))
        scores = rng.permutation(rng.standard_normal(n) * 10.0 ** rng.uniform(-3, 3))
        clips = scored(scores)
        rec = ev.recall(clips, ev.calibrate_threshold(clips))
        assert 0.5 <= rec <= 0.5 + 1 / n
        assert round(rec * n) == math.ceil(n / 2)


@settings(max_examples=100, deadline=None)
@given(
    ints=st.lists(st.integers(-8000, 8000), min_size=2, max_size=40, unique=True),
    shift=st.integers(-400, 400).map(lambda k: k / 4),
)
def test_threshold_shift(ints, shift):
    # Multiples of 1/8 keep the shifted scores exact and distinct.
    scores = [k / 8 for k in ints]
    base = scored(scores)
    moved = scored([s + shift for s in scores])
    t0, t1 = ev.calibrate_threshold(base), ev.calibrate_threshold(moved)
    assert t1 == pytest.approx(t0 + shift, abs=1e-9)
    assert ev.recall(moved, t1) == ev.recall(base, t0)


def test_false_alarm_examples():
    assert ev.count_false_alarms(neg([0, 1, 2, 1]), 5) == 0
    assert ev.count_false_alarms(neg([0, 5, 5, 1]), 4) == 2
    assert ev.count_false_alarms(neg([0, 5, 5, 1]), math.inf) == 0
    # Strictly above, and frame 0 never counts.
    assert ev.count_false_alarms(neg([9, 4, 4.0001]), 4) == 1


def test_peak_counting():
    curve = neg([0, 5, 5, 1, 6, 2, 7])
    assert ev.count_false_alarms(curve, 4, ev.FRAMES) == 4
    # Plateau [5, 5] counts once; the trailing 7 is not a local maximum.
    assert ev.count_false_alarms(curve, 4, ev.PEAKS) == 2
    with pytest.raises(ValueError, match="counting"):
        ev.count_false_alarms(curve, 4, "bursts")
    with pytest.raises(ValueError):
        ev.count_false_alarms(curve, math.nan)


@settings(max_examples=100, deadline=None)
@given(
    values=st.lists(st.floats(-10, 10), min_size=2, max_size=50),
    t1=st.floats(-10, 10),
    t2=st.floats(-10, 10),
)
def test_counting_antitone(values, t1, t2):
    lo, hi = sorted((t1, t2))
    for mode in ev.COUNTING_MODES:
        assert ev.count_false_alarms(neg(values), lo, mode) >= ev.count_false_alarms(
            neg(values), hi, mode
        )
    a, b = ev.count_false_alarms(neg(values), lo), ev.count_false_alarms(neg(values), hi)
    if a and b:
        assert ev.mtbfa(5.0, a) <= ev.mtbfa(5.0, b)


def test_mtbfa_examples():
    assert ev.mtbfa(97200, 972) == 100.0
    assert ev.mtbfa(1234.5, 0) == math.inf
    assert ev.mtbfa(11340, 113) == pytest.approx(100.35, abs=5e-3)
    with pytest.raises(ValueError):
        ev.mtbfa(0, 3)


def test_make_bins_half_open():
    bins = ev.make_bins(scored([1, 2], 30) + scored([3, 4], 100, "d"), [30, 100, 200])
    assert [len(b.clips) for b in bins] == [2, 2]
    with pytest.raises(ValueError, match="d0000"):
        ev.make_bins(scored([3], 200, "d"), [30, 100, 200])
    with pytest.raises(ValueError, match="increasing"):
        ev.make_bins([], [30, 30])


def test_evaluate_silent_negatives():
    report = ev.evaluate(scored([1, 2, 3]), [neg(np.zeros(100))], [0, 1000])
    (b,) = report.bins
    assert b.mtbfa == math.inf
    assert b.false_alarms == 0
    assert b.negative_duration == 10.0


def test_evaluate_far_bin_not_fewer_alarms():
    pos = scored([5, 6, 7], 30, "a") + scored([1, 2, 3], 300, "b")
    negs = [neg(np.random.default_rng(1).uniform(0, 8, 500))]
    report = ev.evaluate(pos, negs, [0, 100, 1000])
    near, far = report.bins
    assert far.threshold < near.threshold
    assert far.false_alarms >= near.false_alarms
    assert far.mtbfa <= near.mtbfa


def test_evaluate_scene_normalization():
    pos = scored([1, 2, 3])
    raw = neg(np.full(10, 10.0))
    plain = ev.evaluate(pos, [raw], [0, 1000]).bins[0]
    normalized = ev.evaluate(pos, [raw], [0, 1000], scene_length=5).bins[0]
    assert plain.false_alarms == 9
    assert normalized.false_alarms == 0


def test_evaluate_needs_negatives():
    with pytest.raises(ValueError):
        ev.evaluate(scored([1, 2]), [], [0, 100])


def test_report_formats_and_determinism():
    rng = np.random.default_rng(3)
    pos = scored(rng.uniform(0, 5, 8), 30, "a") + scored(rng.uniform(0, 5, 8), 150, "b")
    negs = [neg(rng.uniform(0, 3, 300)) for _ in range(3)]
    a = ev.evaluate(pos, negs, [0, 100, math.inf], config={"detector_s": 0.09})
    b = ev.evaluate(list(reversed(pos)), negs, [0, 100, math.inf], config={"detector_s": 0.09})
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()
    data = json.loads(a.to_json())
    assert data["bins"][1]["bin_hi_m"] == "inf"
    assert data["config"]["counting"] == "frames"
    lines = a.to_csv().splitlines()
    assert lines[0] == ",".join(ev.REPORT_CSV_HEADER)
    assert lines[2].split(",")[1] == "inf"


def test_ties_broken_by_clip_id():
    clips = [clip([0, 2], clip_id=c) for c in ("b", "a", "c", "d")]
    assert ev.calibrate_threshold(clips) == 2
    assert ev.calibrate_threshold(list(reversed(clips))) == 2


def test_synthetic_corpus_nearest_bin_ordering():
    corpus = sy.build_corpus(sy.AVIAN_CORPUS)
    scene = int(round(10.0 * fe.AVIAN.frame_rate))
    pos = [(it, fe.spectrogram(it.waveform, fe.AVIAN)) for it in corpus.positives]
    negs = [fe.spectrogram(it.waveform, fe.AVIAN) for it in corpus.negatives]
    near = {}
    for det in nv.DETECTORS:
        clips = [ev.PositiveClip(nv.novelty(E, det, 0.09), it.distance, it.clip_id) for it, E in pos]
        curves = [nv.novelty(E, det, 0.09) for E in negs]
        report = ev.evaluate(clips, curves, [30, 100, 200, 300, 500, math.inf], scene_length=scene)
        near[det] = report.bins[0].mtbfa
    assert near[nv.PCEN_MAX] > near[nv.SF_MAX] > near[nv.SF_AVG]
