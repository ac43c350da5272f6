import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcenflux import frontend as fe
from pcenflux import novelty as nv
from pcenflux.errors import NumericError
from pcenflux.pcen import PcenParams, pcen, softplus_flux
from pcenflux.synthesis import AM_ENGINE, NoiseScene, render_noise

FR = 100.0

# Non-overlapping frames, so a square wave with a two-hop period gives
# strictly alternating frames.
AM_CFG = fe.SpectrogramConfig(128, 128, 65, fe.LINEAR, 0.0, 1000.0, 2000)


def am_spectrogram(depth=1.0, amplitude=1.0, seconds=40.0):
    hop = AM_CFG.hop_length / AM_CFG.sample_rate
    scene = NoiseScene(
        AM_ENGINE, seconds, am_period=2 * hop, modulation_depth=depth,
        amplitude=amplitude, seed=3, carrier_period=hop,
    )
    return fe.spectrogram(render_noise(scene, AM_CFG.sample_rate), AM_CFG)


def test_constant_gives_zero_flux():
    E = np.full((20, 128), 3.0)
    for fn in (nv.sf_avg, nv.sf_max):
        assert np.all(fn(E, FR).values == 0)


def test_single_band_doubling():
    E = np.ones((2, 128))
    E[1, 5] = 2.0
    out = nv.sf_avg(E, FR).values
    assert out[0] == 0
    assert out[1] == pytest.approx(math.log(2) / 128, rel=1e-12)
    assert out[1] == pytest.approx(0.005415, abs=1e-6)


@pytest.mark.parametrize("n_bands", [1, 16, 128])
def test_single_band_tripling(n_bands):
    E = np.ones((2, n_bands))
    E[1, 0] = 3.0
    assert nv.sf_max(E, FR).values[1] == pytest.approx(math.log(3), rel=1e-12)


def test_sf_max_keeps_negative_values():
    E = np.ones((3, 8))
    E[1] = 4.0
    out = nv.sf_max(E, FR).values
    assert out[2] == pytest.approx(-math.log(4), rel=1e-12)


def test_chirp_versus_impulse():
    n = 128
    lo, hi = math.exp(-8.0), 1.0
    chirp = np.full((n + 1, n), lo)
    for t in range(1, n + 1):
        chirp[t, t - 1] = hi
    step = np.full((2, n), lo)
    step[1] = hi
    avg, mx = nv.sf_avg(chirp, FR).values[2:], nv.sf_max(chirp, FR).values[2:]
    assert np.all(mx / avg >= n / 2)
    np.testing.assert_allclose(mx / avg, n, rtol=1e-12)
    assert nv.sf_max(step, FR).values[1] == nv.sf_avg(step, FR).values[1]


def test_log_floor_bounds_silent_bins():
    E = np.zeros((3, 4))
    E[1, 0] = 5.0
    out = nv.sf_max(E, FR).values
    assert out[1] == pytest.approx(math.log(1e10), rel=1e-12)
    assert np.all(nv.sf_avg(np.zeros((4, 4)), FR).values == 0)


def test_pcen_max_constant_is_log_two():
    out = nv.pcen_max(np.full((30, 16), 0.7), 0.5, FR).values
    assert out[0] == 0
    np.testing.assert_allclose(out[1:], math.log(2), rtol=1e-12)


def test_pcen_max_s_one_is_max_softplus_flux():
    E = np.random.default_rng(0).uniform(0.1, 10, (50, 20))
    out = nv.pcen_max(E, 1.0, FR).values
    np.testing.assert_allclose(out[1:], softplus_flux(E)[1:].max(axis=1), rtol=1e-12)


def test_pcen_max_is_max_of_pcen():
    E = np.random.default_rng(1).uniform(0.1, 10, (50, 20))
    out = nv.pcen_max(E, 0.09, FR).values
    ref = pcen(E, PcenParams(0.09, 0, 1, 1, 0)).max(axis=1)
    np.testing.assert_allclose(out[1:], ref[1:], rtol=1e-12)


def test_am_steady_state_closed_form():
    s = 0.33
    E = am_spectrogram()
    assert np.all(E.values[1::2] == 0)
    out = nv.pcen_max(E, s).values
    on = out[100::2]
    expected = math.log(1 + (2 - s) / (1 - s))
    assert expected == pytest.approx(1.2506, abs=1e-4)
    np.testing.assert_allclose(on, expected, atol=1e-6)
    assert np.all(out[101::2] == 0)


def test_am_rejection_amplitude_independent():
    curves = [nv.pcen_max(am_spectrogram(amplitude=a), 0.33).values for a in (1e-2, 1.0, 1e2)]
    for c in curves[1:]:
        assert np.abs(c[100:] - curves[0][100:]).max() < 1e-6


def test_am_sf_max_grows_with_depth():
    peaks = []
    for depth in (0.5, 0.9, 0.99, 0.999):
        steady = nv.sf_max(am_spectrogram(depth=depth)).values[100:]
        assert steady.max() == pytest.approx(-math.log(1 - depth), rel=1e-6)
        peaks.append(steady.max())
    assert np.all(np.diff(peaks) > 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.sampled_from([1e-3, 0.37, 1.0, 1e3]))
def test_gain_invariance(seed, K):
    x = np.random.default_rng(seed).standard_normal(3000)
    x[:500] *= 0.01
    for det in nv.DETECTORS:
        a = nv.detect(fe.Waveform(x, 22050), fe.AVIAN, det, s=0.09).values
        b = nv.detect(fe.Waveform(K * x, 22050), fe.AVIAN, det, s=0.09).values
        assert np.abs(a - b).max() <= 1e-6


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_dominance_and_pooling_order(seed):
    E = np.random.default_rng(seed).uniform(0.01, 10, (30, 12))
    pmax = nv.pcen_max(E, 1.0, FR).values
    smax = nv.sf_max(E, FR).values
    savg = nv.sf_avg(E, FR).values
    ratio = E[1:] / E[:-1]
    same = np.argmax(ratio, axis=1) == np.argmax(np.log(E[1:]) - np.log(E[:-1]), axis=1)
    assert np.all(pmax[1:][same] >= smax[1:][same])
    nonneg = smax >= 0
    assert np.all(smax[nonneg] >= savg[nonneg] - 1e-12)


def test_pcen_max_zero_history_error():
    E = np.ones((5, 3))
    E[0, 2] = 0.0
    with pytest.raises(NumericError) as err:
        nv.pcen_max(E, 0.5, FR)
    assert err.value.frame == 1
    assert "frame 1" in str(err.value)


def test_pcen_max_silence_is_zero():
    assert np.all(nv.pcen_max(np.zeros((6, 3)), 0.5, FR).values == 0)


def test_detector_errors():
    E = np.ones((4, 2))
    with pytest.raises(ValueError, match="unknown detector"):
        nv.novelty(E, "sf_median", frame_rate=FR)
    with pytest.raises(ValueError, match="smoothing"):
        nv.novelty(E, nv.PCEN_MAX, frame_rate=FR)
    with pytest.raises(ValueError, match="negative"):
        nv.sf_avg(-E, FR)
    with pytest.raises(ValueError, match="frame_rate"):
        nv.sf_avg(E)


@pytest.mark.parametrize("det", nv.DETECTORS)
def test_streaming_detect_matches_batch(det):
    x = np.random.default_rng(5).standard_normal(22050)
    w = fe.Waveform(x, 22050)
    batch = nv.novelty(fe.spectrogram(w, fe.AVIAN), det, s=0.09).values
    streamed = nv.detect(w, fe.AVIAN, det, s=0.09, chunk_frames=37).values
    np.testing.assert_allclose(streamed, batch, rtol=1e-12, atol=1e-12)


def test_scene_normalize_examples():
    c = nv.NoveltyCurve([3, 5, 4, 10, 12], FR, "x")
    assert list(nv.scene_normalize(c, 3).values) == [0, 2, 1, 0, 2]
    assert np.all(nv.scene_normalize(nv.NoveltyCurve(np.full(7, 2.5), FR, "x"), 3).values == 0)
    with pytest.raises(ValueError):
        nv.scene_normalize(c, 0)


@settings(max_examples=50, deadline=None)
@given(
    values=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60),
    scene=st.integers(1, 10),
    offsets=st.lists(st.integers(-100, 100), min_size=60, max_size=60),
)
def test_scene_offsets_cancel(values, scene, offsets):
    c = nv.NoveltyCurve(values, FR, "x")
    shift = np.array([offsets[i // scene] for i in range(len(values))], dtype=float)
    a = nv.scene_normalize(c, scene).values
    b = nv.scene_normalize(nv.NoveltyCurve(c.values + shift, FR, "x"), scene).values
    np.testing.assert_allclose(a, b, atol=1e-9)
    for start in range(0, len(values), scene):
        assert a[start : start + scene].min() == 0


def test_curve_csv_roundtrip(tmp_path):
    c = nv.NoveltyCurve(np.random.default_rng(2).standard_normal(50), 689.0625, nv.SF_MAX)
    path = tmp_path / "c.csv"
    nv.write_curve_csv(path, c)
    lines = path.read_text().splitlines()
    assert lines[0] == "frame,time_sec,value"
    assert lines[2].startswith("1,0.001451,")
    back = nv.read_curve_csv(path, 689.0625, nv.SF_MAX)
    np.testing.assert_array_equal(back.values, c.values)
    assert back.duration == pytest.approx(50 / 689.0625)
