import numpy as np
from typing import Dict, Sequence

from engines.dsp_engine import AudioTrack, MultiTrack
from engines.triple_engine import AmssTriple

SAMPLE_RATE = 44100
MICRO_RATE = 8000

# One register per source.
SOURCE_TONES: Dict[str, float] = {"vocals": 440.0, "drums": 1760.0, "bass": 110.0, "other": 880.0}


def get_mock_sine(freq: float, seconds: float = 0.5, sample_rate: int = SAMPLE_RATE,
                  amplitude: float = 0.3, right_gain: float = 1.0) -> AudioTrack:
    """Stereo sine; the right channel is scaled by right_gain so channel swaps are observable."""
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    left = amplitude * np.sin(2 * np.pi * freq * t)
    return AudioTrack(np.stack([left, right_gain * left]), sample_rate)


def get_mock_noise_bursts(seconds: float = 0.5, sample_rate: int = SAMPLE_RATE, seed: int = 0,
                          bursts: int = 4, amplitude: float = 0.2) -> AudioTrack:
    """Short decaying white-noise hits at regular intervals, independent per channel."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    out = np.zeros((2, n))
    hit = max(1, n // (4 * bursts))
    envelope = np.exp(-np.linspace(0.0, 6.0, hit))
    for k in range(bursts):
        start = k * n // bursts
        out[:, start:start + hit] += amplitude * rng.normal(size=(2, hit)) * envelope
    return AudioTrack(out, sample_rate)


def get_mock_stem(name: str, seconds: float = 0.5, sample_rate: int = SAMPLE_RATE, seed: int = 0) -> AudioTrack:
    tone = get_mock_sine(SOURCE_TONES[name], seconds, sample_rate, 0.25, right_gain=0.8)
    if name != "drums":
        return tone
    bursts = get_mock_noise_bursts(seconds, sample_rate, seed)
    return AudioTrack(0.3 * tone.samples + bursts.samples, sample_rate)


def get_mock_multitrack(sources: Sequence[str] = ("vocals", "drums", "bass"), seconds: float = 0.5,
                        sample_rate: int = SAMPLE_RATE, seed: int = 0) -> MultiTrack:
    """Synthetic multitrack: 440 Hz vocals, noise-burst drums over 1760 Hz, 110 Hz bass."""
    return MultiTrack({name: get_mock_stem(name, seconds, sample_rate, seed) for name in sources})


def get_mock_two_stem(seconds: float = 1.0, sample_rate: int = MICRO_RATE, seed: int = 0) -> MultiTrack:
    return get_mock_multitrack(("vocals", "drums"), seconds, sample_rate, seed)


def get_mock_noise(seconds: float = 1.0, sample_rate: int = SAMPLE_RATE, seed: int = 0,
                   scale: float = 0.1) -> AudioTrack:
    rng = np.random.default_rng(seed)
    return AudioTrack(scale * rng.normal(size=(2, int(round(seconds * sample_rate)))), sample_rate)


def get_mock_triple(description: str = "decrease the volume of drums moderately", task: str = "decrease_volume",
                    seconds: float = 1.0, sample_rate: int = MICRO_RATE, seed: int = 0) -> AmssTriple:
    """A hand-built triple: target is the input with the drums at 2/3 gain."""
    mt = get_mock_two_stem(seconds, sample_rate, seed)
    vocals, drums = mt.stems["vocals"].samples, mt.stems["drums"].samples
    return AmssTriple(
        AudioTrack(vocals + drums, sample_rate),
        AudioTrack(vocals + drums * (2.0 / 3.0), sample_rate),
        description, task, seed,
    )
