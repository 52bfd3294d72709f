import numpy as np
import pytest
from scipy import signal

import config
from engines.aml_engine import AmssDescription, Task, interpret
from engines.dsp_engine import (
    AudioTrack, MultiTrack, apply_gain, apply_pan, apply_plan, butterworth_filter,
    butterworth_magnitude, butterworth_sos, frame_count, istft, mel_filterbank, mfcc,
    mix, reverb, stft, transform_track,
)
from errors import CutoffOutOfRange, InvalidHop, LengthMismatch, PanOutOfRange, TooShort, UnknownTarget
from mocks import SAMPLE_RATE, get_mock_multitrack, get_mock_noise, get_mock_sine

SR = SAMPLE_RATE


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x ** 2)))


# --- MIX & GAIN ---

def test_mix_of_additive_inverses_is_silent(rng):
    x = AudioTrack(rng.normal(size=(2, 1000)))
    out = mix(MultiTrack({"vocals": x, "drums": AudioTrack(-x.samples)}))
    assert np.array_equal(out.samples, np.zeros((2, 1000)))


def test_mix_single_stem_and_impulses():
    x = get_mock_sine(440.0)
    assert mix(MultiTrack({"bass": x})).equals(x)

    stems = {}
    for name, offset in (("vocals", 10), ("drums", 200), ("bass", 3000)):
        samples = np.zeros((2, 4000))
        samples[:, offset] = 1.0
        stems[name] = AudioTrack(samples)
    out = mix(MultiTrack(stems)).samples
    assert np.count_nonzero(out[0]) == 3
    assert out[0, 10] == out[0, 200] == out[0, 3000] == 1.0


def test_multitrack_rejects_unequal_lengths():
    with pytest.raises(LengthMismatch):
        MultiTrack({"vocals": AudioTrack.zeros(100), "drums": AudioTrack.zeros(101)})


def test_gain_properties():
    x = get_mock_sine(440.0, amplitude=0.3)
    assert apply_gain(x, 1.0).equals(x)
    assert apply_gain(apply_gain(x, 2.0), 0.5).equals(x)
    assert abs(np.max(np.abs(apply_gain(x, 1.5).samples)) - 1.5 * np.max(np.abs(x.samples))) <= 1e-9
    assert _rms(apply_gain(x, 1.7).samples) == pytest.approx(1.7 * _rms(x.samples), rel=1e-12)


def test_gain_commutes_with_mix():
    mt = get_mock_multitrack()
    gained = MultiTrack({n: apply_gain(t, 0.8) for n, t in mt.stems.items()})
    assert np.allclose(apply_gain(mix(mt), 0.8).samples, mix(gained).samples, atol=1e-12)


# --- PAN ---

def test_pan_near_zero_is_identity():
    x = get_mock_sine(440.0)
    assert np.allclose(apply_pan(x, "left", 1e-9).samples, x.samples, atol=1e-6)


def test_pan_left_channel_ratio():
    x = get_mock_sine(440.0, right_gain=1.0)
    out = apply_pan(x, "left", 0.5).samples
    assert _rms(out[0]) / _rms(out[1]) == pytest.approx(3.0, abs=1e-9)


def test_pan_left_then_right_scales_both_channels():
    x = get_mock_sine(110.0)
    p = 0.4
    out = apply_pan(apply_pan(x, "left", p), "right", p)
    assert np.allclose(out.samples, x.samples * (1 + p) * (1 - p), atol=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
def test_pan_out_of_range(p):
    with pytest.raises(PanOutOfRange):
        apply_pan(get_mock_sine(440.0), "left", p)


# --- FILTERS ---

def test_lowpass_passes_low_sine():
    x = get_mock_sine(100.0, seconds=1.0, amplitude=0.5)
    y = butterworth_filter(x, "lowpass", 3000.0)
    steady = slice(SR // 2, SR)
    change_db = 20 * np.log10(_rms(y.samples[0, steady]) / _rms(x.samples[0, steady]))
    assert abs(change_db) <= 0.1


def test_lowpass_attenuates_high_sine():
    x = get_mock_sine(12000.0, seconds=1.0, amplitude=0.5)
    y = butterworth_filter(x, "lowpass", 3000.0)
    steady = slice(SR // 2, SR)
    change_db = 20 * np.log10(_rms(y.samples[0, steady]) / _rms(x.samples[0, steady]))
    assert change_db <= -48.0


def test_highpass_removes_dc():
    x = AudioTrack(np.full((2, SR), 0.5))
    y = butterworth_filter(x, "highpass", 500.0)
    assert np.max(np.abs(y.samples[:, -1000:])) < 1e-6


def test_filter_is_causal():
    samples = np.zeros((2, 2000))
    samples[:, 1000] = 1.0
    y = butterworth_filter(AudioTrack(samples), "lowpass", 3000.0)
    assert np.all(y.samples[:, :1000] == 0.0)


@pytest.mark.parametrize("kind", ["lowpass", "highpass"])
@pytest.mark.parametrize("level", ["light", "medium", "heavy"])
def test_filter_response_matches_analytic(kind, level):
    cutoff = config.get_config().level_table[kind][level]
    sos = butterworth_sos(kind, cutoff, SR)
    probes = np.geomspace(50.0, 20000.0, 10)
    _, h = signal.sosfreqz(sos, worN=probes, fs=SR)
    measured = 20 * np.log10(np.abs(h))
    analytic = 20 * np.log10(butterworth_magnitude(probes, kind, cutoff, SR))
    assert np.max(np.abs(measured - analytic)) <= 0.5

    _, at_cutoff = signal.sosfreqz(sos, worN=[cutoff], fs=SR)
    assert 20 * np.log10(np.abs(at_cutoff[0])) == pytest.approx(-3.01, abs=0.5)


def test_filter_is_two_biquads():
    assert butterworth_sos("lowpass", 3000.0, SR).shape == (2, 6)


@pytest.mark.parametrize("cutoff", [0.0, SR / 2, 30000.0])
def test_cutoff_out_of_range(cutoff):
    with pytest.raises(CutoffOutOfRange):
        butterworth_filter(get_mock_sine(440.0), "lowpass", cutoff)


# --- REVERB ---

def test_single_comb_decays_sixty_db_over_decay_time():
    decay_s = 0.5
    settings = config.ReverbSettings((29.7,), (), (), dry=0.0, wet=1.0)
    n = int(1.5 * SR)
    samples = np.zeros((2, n))
    samples[:, 0] = 1.0
    y = reverb(AudioTrack(samples), decay_s, settings=settings).samples[0]

    delay = int(round(29.7 * SR / 1000.0))
    assert y[delay] == pytest.approx(1.0)
    tail = np.abs(y[delay + int(np.ceil(decay_s * SR)):])
    assert np.max(tail) <= 1e-3 * (1 + 1e-9)


def test_reverb_of_silence_is_silent():
    assert np.array_equal(reverb(AudioTrack.zeros(5000), 0.6).samples, np.zeros((2, 5000)))


def test_reverb_with_vanishing_decay_keeps_energy():
    x = get_mock_noise(seconds=1.0, seed=3)
    y = reverb(x, 1e-3)
    ratio_db = 10 * np.log10(np.sum(y.samples ** 2) / np.sum(x.samples ** 2))
    assert abs(ratio_db) <= 1.0


def test_reverb_tail_length():
    x = get_mock_sine(440.0, seconds=0.2)
    assert reverb(x, 0.3).length == x.length
    assert reverb(x, 0.3, keep_tail=True).length == x.length + int(np.ceil(0.3 * SR))


# --- STFT ---

def test_stft_round_trip_interior():
    fft_size, hop = 2048, 1024
    for seed in range(10):
        x = get_mock_noise(seconds=2.0, seed=seed, scale=0.3)
        y = istft(stft(x, fft_size, hop), x.length)
        assert y.length == x.length
        interior = slice(fft_size, x.length - fft_size)
        err = np.linalg.norm(y.samples[:, interior] - x.samples[:, interior])
        assert err / np.linalg.norm(x.samples[:, interior]) <= 1e-6


def test_stft_shapes():
    x = get_mock_noise(seconds=0.5)
    spec = stft(x, 2048, 1024)
    assert spec.bins == 1025
    assert spec.frames == frame_count(x.length, 2048, 1024)
    assert spec.values.shape[0] == 2


def test_bin_aligned_sine_concentrates_in_main_lobe():
    fft_size, k = 2048, 100
    x = get_mock_sine(k * SR / fft_size, seconds=1.0)
    power = np.abs(stft(x, fft_size, 1024).values[0, 2:-2]) ** 2
    assert np.all(np.argmax(power, axis=1) == k)
    lobe = power[:, k - 1:k + 2].sum(axis=1) / power.sum(axis=1)
    assert np.all(lobe >= 0.99)


def test_stft_of_silence_is_zero():
    assert not np.any(stft(AudioTrack.zeros(8192), 2048, 1024).values)


def test_invalid_hop():
    with pytest.raises(InvalidHop):
        stft(AudioTrack.zeros(8192), 1024, 2048)


# --- MFCC ---

def test_mel_filterbank_shape_and_peak():
    fb = mel_filterbank(SR, 2048, 40)
    assert fb.shape == (40, 1025)
    assert np.all(fb >= 0.0)
    assert np.all(fb.max(axis=1) <= 1.0 + 1e-9)
    assert np.all(fb.sum(axis=1) > 0.0)


def test_mfcc_deterministic_and_shaped():
    x = get_mock_noise(seconds=0.5, seed=1)
    first, second = mfcc(x), mfcc(x)
    assert np.array_equal(first, second)
    assert first.shape == (2, frame_count(x.length, 2048, 1024), 20)


def test_mfcc_gain_shifts_only_coefficient_zero():
    x = get_mock_noise(seconds=0.5, seed=2)
    base, loud = mfcc(x), mfcc(apply_gain(x, 2.0))
    shift = loud - base
    assert np.max(np.abs(shift[..., 1:])) <= 1e-6
    assert np.allclose(shift[..., 0], np.log(4.0) * np.sqrt(40), atol=1e-6)


def test_mfcc_of_silence_is_closed_form():
    out = mfcc(AudioTrack.zeros(8192))
    assert np.allclose(out[..., 0], np.log(1e-10) * np.sqrt(40))
    assert np.allclose(out[..., 1:], 0.0, atol=1e-9)


def test_mfcc_too_short():
    with pytest.raises(TooShort):
        mfcc(AudioTrack.zeros(1000))


# --- ORACLE ---

def test_apply_plan_mask_and_mask_others():
    mt = get_mock_multitrack()
    muted = apply_plan(mt, interpret(AmssDescription.of(Task.MUTE, ["drums"])))
    assert muted.equals(mix(mt.restricted_to(["vocals", "bass"])))

    separated = apply_plan(mt, interpret(AmssDescription.of(Task.SEPARATE, ["vocals"])))
    assert separated.equals(mt.stems["vocals"])


def test_apply_plan_lowpass_drums():
    mt = get_mock_multitrack()
    out = apply_plan(mt, interpret(AmssDescription.of(Task.LOWPASS, ["drums"])))
    lpf = butterworth_filter(mt.stems["drums"], "lowpass", 3000.0).samples
    expected = np.zeros((2, mt.length)) + mt.stems["vocals"].samples + lpf + mt.stems["bass"].samples
    assert np.array_equal(out.samples, expected)


@pytest.mark.parametrize("task", [t for t in Task if t != Task.SEPARATE])
def test_apply_plan_preserves_non_targets(task):
    mt = get_mock_multitrack()
    plan = interpret(AmssDescription.of(task, ["drums", "bass"]))

    # Zeroed targets leave exactly the non-target mixture.
    silent_targets = mt.with_stems({n: AudioTrack.zeros(mt.length) for n in ("drums", "bass")})
    assert apply_plan(silent_targets, plan).equals(mix(silent_targets))

    # Zeroed non-targets leave exactly the transformed targets.
    only_targets = mt.with_stems({"vocals": AudioTrack.zeros(mt.length)})
    expected = np.zeros((2, mt.length)) + transform_track(mt.stems["drums"], plan).samples \
        + transform_track(mt.stems["bass"], plan).samples
    assert np.array_equal(apply_plan(only_targets, plan).samples, expected)

    residual = apply_plan(mt, plan).samples - mt.stems["vocals"].samples
    assert np.allclose(residual, expected, atol=1e-12)


def test_apply_plan_carries_other_stem_untouched():
    mt = get_mock_multitrack(("vocals", "drums", "bass", "other"))
    out = apply_plan(mt, interpret(AmssDescription.of(Task.MUTE, ["vocals", "drums", "bass"])))
    assert out.equals(mt.stems["other"])


def test_apply_plan_unknown_target():
    mt = get_mock_multitrack(("vocals", "drums"))
    with pytest.raises(UnknownTarget):
        apply_plan(mt, interpret(AmssDescription.of(Task.MUTE, ["bass"])))
