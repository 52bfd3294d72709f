"""
DSP Ground-Truth Engine.

Stereo stems, their mixture, the seven transform primitives behind the nine
AMSS tasks, STFT/iSTFT, the HTK mel/MFCC recipe and the oracle
A' = sum_{j not in tau} a_j + sum_{j in tau} f(a_j).
"""

import math
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
import librosa
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft
from scipy import signal

import config
from engines.aml_engine import Direction, ManipulationPlan, Transform
from errors import (
    CutoffOutOfRange, DspError, InvalidHop, LengthMismatch, PanOutOfRange,
    SampleRateError, TooShort, UnknownTarget,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 44100
FILTER_ORDER = 4
LOG_FLOOR = 1e-10


# --- DOMAIN TYPES ---

@dataclass(frozen=True, eq=False)
class AudioTrack:
    """Stereo audio: samples is a read-only (2, N) float64 array."""
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        data = np.array(self.samples, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] != 2:
            raise DspError(f"AudioTrack needs shape (2, N), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DspError("AudioTrack samples must be finite")
        if int(self.sample_rate) <= 0:
            raise SampleRateError(f"sample rate must be positive, got {self.sample_rate}")
        data.setflags(write=False)
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @classmethod
    def zeros(cls, length: int, sample_rate: int = DEFAULT_SAMPLE_RATE) -> "AudioTrack":
        return cls(np.zeros((2, length)), sample_rate)

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def equals(self, other: "AudioTrack") -> bool:
        """Sample-exact comparison."""
        return self.sample_rate == other.sample_rate and np.array_equal(self.samples, other.samples)

    def segment(self, start: int, length: int) -> "AudioTrack":
        return AudioTrack(self.samples[:, start:start + length], self.sample_rate)


@dataclass(frozen=True, eq=False)
class MultiTrack:
    """Named stems of equal length and sample rate, in insertion order."""
    stems: Dict[str, AudioTrack]

    def __post_init__(self) -> None:
        stems = dict(self.stems)
        lengths = {name: track.length for name, track in stems.items()}
        if len(set(lengths.values())) > 1:
            raise LengthMismatch(f"stems differ in length: {lengths}")
        rates = {track.sample_rate for track in stems.values()}
        if len(rates) > 1:
            raise SampleRateError(f"stems differ in sample rate: {sorted(rates)}")
        object.__setattr__(self, "stems", stems)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(self.stems)

    @property
    def sample_rate(self) -> int:
        return next(iter(self.stems.values())).sample_rate if self.stems else DEFAULT_SAMPLE_RATE

    @property
    def length(self) -> int:
        return next(iter(self.stems.values())).length if self.stems else 0

    def restricted_to(self, names: Iterable[str]) -> "MultiTrack":
        keep = set(names)
        return MultiTrack({n: t for n, t in self.stems.items() if n in keep})

    def with_stems(self, replacements: Mapping[str, AudioTrack]) -> "MultiTrack":
        """Copy with some stems replaced, order preserved."""
        return MultiTrack({n: replacements.get(n, t) for n, t in self.stems.items()})

    def segment(self, start: int, length: int) -> "MultiTrack":
        return MultiTrack({n: t.segment(start, length) for n, t in self.stems.items()})


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Complex STFT values of shape (2, frames, fft_size // 2 + 1)."""
    values: np.ndarray
    fft_size: int
    hop: int
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @property
    def frames(self) -> int:
        return self.values.shape[1]

    @property
    def bins(self) -> int:
        return self.values.shape[2]


# --- MIXING & GAIN STAGES ---

def _sum_tracks(tracks: Iterable[np.ndarray], length: int) -> np.ndarray:
    # Sequential left-to-right sum keeps results reproducible sample for sample.
    out = np.zeros((2, length))
    for samples in tracks:
        out = out + samples
    return out


def mix(mt: MultiTrack) -> AudioTrack:
    """Sample-wise sum of all stems."""
    if not mt.stems:
        raise DspError("cannot mix an empty multitrack")
    return AudioTrack(_sum_tracks((t.samples for t in mt.stems.values()), mt.length), mt.sample_rate)


def apply_gain(a: AudioTrack, g: float) -> AudioTrack:
    if not g > 0:
        raise DspError(f"gain factor must be positive, got {g}")
    return AudioTrack(a.samples * g, a.sample_rate)


def apply_pan(a: AudioTrack, side: str, p: float) -> AudioTrack:
    """
    Amplitude re-scaling toward one side.

    Left multiplies the left channel by (1+p) and the right by (1-p); Right mirrors.
    The two channel gains always average to 1.

    Raises:
        PanOutOfRange: If p is not in (0, 1)
    """
    if not 0.0 < p < 1.0:
        raise PanOutOfRange(f"pan amount must lie in (0, 1), got {p}")
    side = str(side).lower()
    if side == "left":
        gains = np.array([[1.0 + p], [1.0 - p]])
    elif side == "right":
        gains = np.array([[1.0 - p], [1.0 + p]])
    else:
        raise DspError(f"pan side must be 'left' or 'right', got {side!r}")
    return AudioTrack(a.samples * gains, a.sample_rate)


# --- FILTERS ---

def butterworth_sos(kind: str, cutoff: float, sample_rate: int, order: int = FILTER_ORDER) -> np.ndarray:
    nyquist = sample_rate / 2.0
    if not 0.0 < cutoff < nyquist:
        raise CutoffOutOfRange(f"cutoff {cutoff} Hz outside (0, {nyquist}) Hz")
    if kind not in ("lowpass", "highpass"):
        raise DspError(f"filter kind must be 'lowpass' or 'highpass', got {kind!r}")
    # Bilinear transform with prewarping at the cutoff (scipy designs digital filters this way).
    return signal.butter(order, cutoff, btype=kind, fs=sample_rate, output="sos")


def butterworth_filter(a: AudioTrack, kind: str, cutoff: float) -> AudioTrack:
    """4th-order Butterworth (two cascaded biquads), applied causally per channel."""
    sos = butterworth_sos(kind, cutoff, a.sample_rate)
    return AudioTrack(signal.sosfilt(sos, a.samples, axis=-1), a.sample_rate)


def butterworth_magnitude(freqs: np.ndarray, kind: str, cutoff: float, sample_rate: int, order: int = FILTER_ORDER) -> np.ndarray:
    """Analytic |H| of the prewarped digital Butterworth at the given frequencies (Hz)."""
    warped = np.tan(np.pi * np.asarray(freqs, dtype=np.float64) / sample_rate)
    warped_c = math.tan(math.pi * cutoff / sample_rate)
    ratio = warped / warped_c if kind == "lowpass" else warped_c / warped
    return 1.0 / np.sqrt(1.0 + ratio ** (2 * order))


# --- REVERB ---

def _comb(x: np.ndarray, delay: int, gain: float) -> np.ndarray:
    # y[n] = x[n-D] + g*y[n-D]
    b = np.zeros(delay + 1)
    b[delay] = 1.0
    a = np.zeros(delay + 1)
    a[0], a[delay] = 1.0, -gain
    return signal.lfilter(b, a, x, axis=-1)


def _allpass(x: np.ndarray, delay: int, gain: float) -> np.ndarray:
    # y[n] = -g*x[n] + x[n-D] + g*y[n-D]
    b = np.zeros(delay + 1)
    b[0], b[delay] = -gain, 1.0
    a = np.zeros(delay + 1)
    a[0], a[delay] = 1.0, -gain
    return signal.lfilter(b, a, x, axis=-1)


def reverb(
    a: AudioTrack,
    decay_s: float,
    keep_tail: bool = False,
    settings: Optional[config.ReverbSettings] = None,
) -> AudioTrack:
    """
    Schroeder reverberator: parallel feedback combs into series allpasses.

    Each comb's feedback is chosen so it decays by 60 dB over decay_s.

    Args:
        a: Input track
        decay_s: 60 dB decay time in seconds
        keep_tail: Return input length + ceil(decay_s * sr) samples instead of truncating
        settings: Delay/gain/mix constants; defaults to the tool configuration

    Returns:
        dry * a + wet * allpass(allpass(sum of combs))
    """
    if not decay_s > 0:
        raise DspError(f"reverb decay must be positive, got {decay_s}")
    settings = settings or config.get_config().reverb
    sr = a.sample_rate

    x = a.samples
    if keep_tail:
        x = np.pad(x, ((0, 0), (0, int(math.ceil(decay_s * sr)))))

    wet = np.zeros_like(x)
    for delay_ms in settings.comb_delays_ms:
        delay = max(1, int(round(delay_ms * sr / 1000.0)))
        gain = 10.0 ** (-3.0 * delay / (decay_s * sr))
        wet = wet + _comb(x, delay, gain)
    for delay_ms, gain in zip(settings.allpass_delays_ms, settings.allpass_gains):
        wet = _allpass(wet, max(1, int(round(delay_ms * sr / 1000.0))), gain)

    return AudioTrack(settings.dry * x + settings.wet * wet, sr)


# --- SPECTRAL ANALYSIS ---

@lru_cache(maxsize=16)
def hann_window(fft_size: int) -> np.ndarray:
    window = signal.get_window("hann", fft_size, fftbins=True)
    window.setflags(write=False)
    return window


def _check_hop(fft_size: int, hop: int) -> None:
    if fft_size <= 0 or hop <= 0 or hop > fft_size:
        raise InvalidHop(f"need 0 < hop <= fft_size, got hop={hop} fft_size={fft_size}")


def frame_count(length: int, fft_size: int, hop: int) -> int:
    """Frames produced by stft for a signal of `length` samples."""
    return 1 + (length + 2 * (fft_size // 2) - fft_size) // hop


def stft(a: AudioTrack, fft_size: int, hop: int) -> Spectrogram:
    """
    Centered STFT: reflect-pad fft_size/2 on both ends, periodic Hann, rfft.

    Raises:
        InvalidHop: If hop is not in (0, fft_size]
    """
    _check_hop(fft_size, hop)
    pad = fft_size // 2
    padded = np.pad(a.samples, ((0, 0), (pad, pad)), mode="reflect")
    frames = sliding_window_view(padded, fft_size, axis=-1)[:, ::hop, :]
    values = np.fft.rfft(frames * hann_window(fft_size), axis=-1)
    return Spectrogram(values, fft_size, hop, a.sample_rate)


def istft(spec: Spectrogram, length: int) -> AudioTrack:
    """Overlap-add with window-square normalization, trimmed to `length` samples."""
    _check_hop(spec.fft_size, spec.hop)
    fft_size, hop = spec.fft_size, spec.hop
    window = hann_window(fft_size)
    frames = np.fft.irfft(spec.values, n=fft_size, axis=-1) * window

    n_frames = frames.shape[1]
    total = fft_size + (n_frames - 1) * hop
    out = np.zeros((2, total))
    norm = np.zeros(total)
    for t in range(n_frames):
        out[:, t * hop:t * hop + fft_size] += frames[:, t]
        norm[t * hop:t * hop + fft_size] += window ** 2

    nonzero = norm > 1e-10
    out[:, nonzero] /= norm[nonzero]

    pad = fft_size // 2
    trimmed = out[:, pad:pad + length]
    if trimmed.shape[1] < length:
        trimmed = np.pad(trimmed, ((0, 0), (0, length - trimmed.shape[1])))
    return AudioTrack(trimmed, spec.sample_rate)


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int) -> np.ndarray:
    """(n_mels, fft_size/2+1) triangular HTK-scale filters spanning 0..sr/2, unit peak."""
    fb = librosa.filters.mel(
        sr=sample_rate, n_fft=fft_size, n_mels=n_mels,
        fmin=0.0, fmax=sample_rate / 2.0, htk=True, norm=None,
    )
    if np.any(fb.sum(axis=1) == 0):
        logger.warning(f"Empty mel filters at sr={sample_rate} fft={fft_size} n_mels={n_mels}")
    fb = fb.astype(np.float64)
    fb.setflags(write=False)
    return fb


def mfcc(a: AudioTrack, settings: Optional[config.MfccSettings] = None) -> np.ndarray:
    """
    MFCC matrix of shape (2, frames, n_mfcc).

    power spectrogram -> mel filterbank -> log(x + 1e-10) -> orthonormal DCT-II -> first n_mfcc.

    Raises:
        TooShort: If the track is shorter than the analysis window
    """
    settings = settings or config.get_config().mfcc
    if a.length < settings.fft_size:
        raise TooShort(f"MFCC needs at least {settings.fft_size} samples, got {a.length}")
    power = np.abs(stft(a, settings.fft_size, settings.hop).values) ** 2
    mel = power @ mel_filterbank(a.sample_rate, settings.fft_size, settings.n_mels).T
    cepstrum = sp_fft.dct(np.log(mel + LOG_FLOOR), type=2, norm="ortho", axis=-1)
    return cepstrum[..., :settings.n_mfcc]


# --- AMSS ORACLE ---

def transform_track(a: AudioTrack, plan: ManipulationPlan,
                    reverb_settings: Optional[config.ReverbSettings] = None) -> AudioTrack:
    """Applies the plan's forward effect f to one target stem."""
    transform = plan.transform
    if transform == Transform.MASK:
        return AudioTrack.zeros(a.length, a.sample_rate)
    if transform == Transform.MASK_OTHERS:
        return a
    if transform == Transform.GAIN:
        return apply_gain(a, plan.params["factor"])
    if transform == Transform.PAN:
        return apply_pan(a, plan.side, plan.params["amount"])
    if transform in (Transform.LOWPASS, Transform.HIGHPASS):
        return butterworth_filter(a, transform.value, plan.params["cutoff_hz"])
    if transform == Transform.REVERB:
        return reverb(a, plan.params["decay_s"], settings=reverb_settings)
    raise DspError(f"unsupported transform {transform}")


def apply_plan(mt: MultiTrack, plan: ManipulationPlan,
               reverb_settings: Optional[config.ReverbSettings] = None) -> AudioTrack:
    """
    Ground-truth AMSS output for a plan.

    Non-target stems (including an 'other' stem) pass through untouched; targets get f.
    MaskOthers zeroes the complement instead of the targets. A Remove plan is rendered
    in its forward direction; swapping input and target is the caller's job.

    Raises:
        UnknownTarget: If a target is not a stem of mt
    """
    for name in plan.targets:
        if name not in mt.stems:
            raise UnknownTarget(name)
    if plan.direction == Direction.REMOVE:
        logger.debug("Rendering forward effect for a removal plan")

    targets = set(plan.targets)
    contributions = []
    for name, track in mt.stems.items():
        if plan.transform == Transform.MASK_OTHERS:
            if name in targets:
                contributions.append(track.samples)
        elif name in targets:
            contributions.append(transform_track(track, plan, reverb_settings).samples)
        else:
            contributions.append(track.samples)
    return AudioTrack(_sum_tracks(contributions, mt.length), mt.sample_rate)
