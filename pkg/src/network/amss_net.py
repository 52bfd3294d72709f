"""
AMSS network.

Description encoder, 3x3 stem convolution, three TFC-TDF encoding blocks with two
strided down-samplings, two conditioned decoding blocks fed by transposed-conv
up-samplings and skip connections, and the aggregate PoCM that emits the complex
stereo spectrogram (Lre, Lim, Rre, Rim).

Layout: enc1 -> down1 -> enc2 -> down2 -> enc3 -> up1 -> dec1 -> up2 -> dec2 -> agg.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
import storage
from config import ModelDims
from engines.aml_engine import tokenize
from engines.dsp_engine import AudioTrack, Spectrogram, frame_count, istft, stft
from engines.triple_engine import AmssTriple
from errors import AudioTooShort, CheckpointError, ShapeMismatch
from network.blocks import (
    SMPOCM_ROWS, aggregate_pocm_backward, aggregate_pocm_forward, decode_block_backward,
    decode_block_forward, init_decode_block, init_tfc_tdf, init_weight_generator,
    tfc_tdf_backward, tfc_tdf_forward,
)
from network.description_encoder import (
    build_vocabulary, encode_description_backward, encode_description_forward,
    init_encoder, token_ids,
)
from network.layers import (
    Cache, conv2d_backward, conv2d_forward, conv_output_size, conv_transpose2d_backward,
    conv_transpose2d_forward, he_normal, relu_backward, relu_forward,
)

logger = logging.getLogger(__name__)

MIN_FRAMES = 4
LEVELS = 3
AGG_GAIN = 0.1


@dataclass
class ModelParams:
    """All network tensors in declared traversal order plus the vocabulary they were built for."""
    dims: ModelDims
    tensors: "OrderedDict[str, np.ndarray]"
    vocab: List[str]
    seed: int = 0
    config_hash: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors.values()))

    def with_tensors(self, tensors: "OrderedDict[str, np.ndarray]") -> "ModelParams":
        return replace(self, tensors=OrderedDict(tensors))

    def copy(self) -> "ModelParams":
        return self.with_tensors(OrderedDict((k, v.copy()) for k, v in self.tensors.items()))

    def save(self, path: str) -> None:
        header = {
            "format": "amss-params",
            "model": self.dims.to_dict(),
            "vocab": list(self.vocab),
            "config_hash": self.config_hash or config.get_config().config_hash,
            "seed": int(self.seed),
            "extra": self.extra,
        }
        storage.save_checkpoint(path, self.tensors, header)

    @classmethod
    def load(cls, path: str) -> "ModelParams":
        """
        Raises:
            CheckpointError: If the file is malformed or its tensors do not fit the declared model
        """
        header, tensors = storage.load_checkpoint(path)
        try:
            dims = ModelDims(**header["model"])
            vocab = list(header["vocab"])
        except (KeyError, TypeError) as e:
            raise CheckpointError(f"{path}: header lacks model settings ({e})") from e

        expected = init_params(dims, 0, vocab).tensors
        if list(expected) != list(tensors):
            raise CheckpointError(f"{path}: tensor names do not match a '{dims.decoder}' model")
        for name, value in tensors.items():
            if value.shape != expected[name].shape:
                raise CheckpointError(f"{path}: {name} has shape {value.shape}, expected {expected[name].shape}")
        return cls(dims, tensors, vocab, int(header.get("seed", 0)), header.get("config_hash"),
                   dict(header.get("extra", {})))


# --- SHAPES ---

def level_bins(fft_size: int) -> List[int]:
    """Frequency bins at each encoder level: F0 = fft/2 + 1, then halved by stride-2 convolutions."""
    bins = [fft_size // 2 + 1]
    for _ in range(LEVELS - 1):
        bins.append(conv_output_size(bins[-1], 3, 2, 1))
    return bins


def conditioning_param_count(dims: ModelDims) -> int:
    """PoCM parameters generated per decoding block: 3(M^2 + M), or M^2 + M without SMPoCM."""
    per_pocm = dims.latent * dims.latent + dims.latent
    return per_pocm if dims.decoder == "no_smpocm" else len(SMPOCM_ROWS) * per_pocm


def init_params(dims: ModelDims, seed: int, vocab: Optional[Sequence[str]] = None,
                config_hash: Optional[str] = None) -> ModelParams:
    """Random initial parameters; identical for identical (dims, seed, vocab)."""
    rng = np.random.default_rng(seed)
    vocab = list(vocab) if vocab is not None else build_vocabulary()
    C = dims.channels
    f0, f1, f2 = level_bins(dims.fft_size)

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    tensors.update(init_encoder(rng, len(vocab), dims.emb_dim, dims.word_dim))
    tensors["stem.W"] = he_normal(rng, (C, 4, 3, 3), 4 * 9)
    tensors["stem.b"] = np.zeros(C)
    tensors.update(init_tfc_tdf(rng, "enc1", C, C, dims.growth, f0, dims.bottleneck))
    tensors["down1.W"] = he_normal(rng, (C, C, 3, 3), C * 9)
    tensors["down1.b"] = np.zeros(C)
    tensors.update(init_tfc_tdf(rng, "enc2", C, C, dims.growth, f1, dims.bottleneck))
    tensors["down2.W"] = he_normal(rng, (C, C, 3, 3), C * 9)
    tensors["down2.b"] = np.zeros(C)
    tensors.update(init_tfc_tdf(rng, "enc3", C, C, dims.growth, f2, dims.bottleneck))
    tensors["up1.W"] = he_normal(rng, (C, C, 3, 3), C * 9 // 4)
    tensors["up1.b"] = np.zeros(C)
    tensors.update(init_decode_block(rng, "dec1", dims, f1))
    tensors["up2.W"] = he_normal(rng, (C, C, 3, 3), C * 9 // 4)
    tensors["up2.b"] = np.zeros(C)
    tensors.update(init_decode_block(rng, "dec2", dims, f0))
    tensors.update(init_weight_generator(rng, "agg.wg", ("a",), dims.word_dim, dims.key_dim, (4, C), AGG_GAIN))

    params = ModelParams(dims, tensors, vocab, int(seed), config_hash)
    logger.debug(f"Initialized {dims.decoder} model: {params.n_parameters} parameters, seed={seed}")
    return params


# --- SPECTROGRAM FEATURES ---

def spectrogram_features(spec: Spectrogram) -> np.ndarray:
    """(2, T, F) complex -> (4, T, F) real as (Lre, Lim, Rre, Rim)."""
    v = spec.values
    return np.stack([v[0].real, v[0].imag, v[1].real, v[1].imag])


def features_to_spectrogram(Y: np.ndarray, like: Spectrogram) -> Spectrogram:
    values = np.stack([Y[0] + 1j * Y[1], Y[2] + 1j * Y[3]])
    return Spectrogram(values, like.fft_size, like.hop, like.sample_rate)


def _analyse(a: AudioTrack, dims: ModelDims) -> Spectrogram:
    frames = frame_count(a.length, dims.fft_size, dims.hop)
    if a.length <= dims.fft_size // 2 or frames < MIN_FRAMES:
        raise AudioTooShort(f"{a.length} samples give {max(frames, 0)} STFT frames; at least {MIN_FRAMES} are needed")
    return stft(a, dims.fft_size, dims.hop)


# --- FORWARD / BACKWARD ---

def forward_spectrogram(X0: np.ndarray, ids: np.ndarray, params: ModelParams,
                        keep_latent: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, Cache]:
    """
    Args:
        X0: (4, T, F) input spectrogram features
        ids: (L,) description token ids
        keep_latent: (head, channel) of the last decoding block to keep audible

    Returns:
        ((4, T, F) estimated features, cache for backward_spectrogram)
    """
    p, dims = params.tensors, params.dims
    if X0.shape[0] != 4 or X0.shape[2] != dims.fft_size // 2 + 1:
        raise ShapeMismatch(f"expected (4, T, {dims.fft_size // 2 + 1}) features, got {X0.shape}")
    if X0.shape[1] < MIN_FRAMES:
        raise AudioTooShort(f"{X0.shape[1]} frames; at least {MIN_FRAMES} are needed")
    c: Cache = {}

    w, c["enc"] = encode_description_forward(ids, p)
    h0, c["stem"] = conv2d_forward(X0, p["stem.W"], p["stem.b"])
    e1, c["enc1"] = tfc_tdf_forward(h0, p, "enc1")
    a1, c["down1"] = conv2d_forward(e1, p["down1.W"], p["down1.b"], stride=2)
    s1, c["down1.relu"] = relu_forward(a1)
    e2, c["enc2"] = tfc_tdf_forward(s1, p, "enc2")
    a2, c["down2"] = conv2d_forward(e2, p["down2.W"], p["down2.b"], stride=2)
    s2, c["down2.relu"] = relu_forward(a2)
    e3, c["enc3"] = tfc_tdf_forward(s2, p, "enc3")

    b1, c["up1"] = conv_transpose2d_forward(e3, p["up1.W"], p["up1.b"], e2.shape[1:])
    u1, c["up1.relu"] = relu_forward(b1)
    y1, c["dec1"] = decode_block_forward(u1, e2, w, p, "dec1", dims)
    b2, c["up2"] = conv_transpose2d_forward(y1, p["up2.W"], p["up2.b"], e1.shape[1:])
    u2, c["up2.relu"] = relu_forward(b2)
    y2, c["dec2"] = decode_block_forward(u2, e1, w, p, "dec2", dims, keep_latent)

    Y, c["agg"] = aggregate_pocm_forward(y2, w, p, "agg")
    return Y, c


def backward_spectrogram(dY: np.ndarray, cache: Cache,
                         params: ModelParams) -> Tuple[np.ndarray, "OrderedDict[str, np.ndarray]"]:
    """Returns (dX0, gradients in the traversal order of params.tensors)."""
    grads: Dict[str, np.ndarray] = {}

    dy2, dw, g = aggregate_pocm_backward(dY, cache["agg"])
    grads.update(g)

    du2, de1, dw2, g = decode_block_backward(dy2, cache["dec2"])
    grads.update(g)
    dy1, grads["up2.W"], grads["up2.b"] = conv_transpose2d_backward(relu_backward(du2, cache["up2.relu"]), cache["up2"])

    du1, de2, dw1, g = decode_block_backward(dy1, cache["dec1"])
    grads.update(g)
    de3, grads["up1.W"], grads["up1.b"] = conv_transpose2d_backward(relu_backward(du1, cache["up1.relu"]), cache["up1"])

    ds2, g = tfc_tdf_backward(de3, cache["enc3"])
    grads.update(g)
    de2_down, grads["down2.W"], grads["down2.b"] = conv2d_backward(relu_backward(ds2, cache["down2.relu"]), cache["down2"])
    ds1, g = tfc_tdf_backward(de2 + de2_down, cache["enc2"])
    grads.update(g)
    de1_down, grads["down1.W"], grads["down1.b"] = conv2d_backward(relu_backward(ds1, cache["down1.relu"]), cache["down1"])
    dh0, g = tfc_tdf_backward(de1 + de1_down, cache["enc1"])
    grads.update(g)
    dX0, grads["stem.W"], grads["stem.b"] = conv2d_backward(dh0, cache["stem"])

    _, g = encode_description_backward(dw + dw1 + dw2, cache["enc"])
    grads.update(g)

    ordered: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, value in params.tensors.items():
        ordered[name] = grads.get(name, np.zeros_like(value))
    return dX0, ordered


def query_ids(query: str, params: ModelParams) -> np.ndarray:
    return token_ids(tokenize(query), params.vocab)


def forward(a: AudioTrack, query: str, params: ModelParams,
            keep_latent: Optional[Tuple[int, int]] = None) -> AudioTrack:
    """
    Manipulates `a` according to `query`; output has the input's length.

    Raises:
        AudioTooShort: If the input yields fewer than four STFT frames
        EmptyQuery: If the query has no tokens
    """
    spec = _analyse(a, params.dims)
    Y, _ = forward_spectrogram(spectrogram_features(spec), query_ids(query, params), params, keep_latent)
    return istft(features_to_spectrogram(Y, spec), a.length)


def progressive(a: AudioTrack, query: str, params: ModelParams, times: int) -> List[AudioTrack]:
    """Applies the same query `times` times, feeding each output back in; returns every intermediate."""
    outputs = []
    current = a
    for step in range(times):
        current = forward(current, query, params)
        outputs.append(current)
        logger.debug(f"Progressive step {step + 1}/{times}: peak {np.max(np.abs(current.samples)):.4f}")
    return outputs


# --- LOSS ---

def spectrogram_loss(Y: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean squared error over (4, T, F) features and its gradient."""
    diff = Y - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def triple_features(triple: AmssTriple, params: ModelParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(input features, target features, description ids)."""
    spec_in = _analyse(triple.input, params.dims)
    spec_out = stft(triple.target, params.dims.fft_size, params.dims.hop)
    return spectrogram_features(spec_in), spectrogram_features(spec_out), query_ids(triple.description, params)


def loss_and_grads(triple: AmssTriple, params: ModelParams) -> Tuple[float, "OrderedDict[str, np.ndarray]"]:
    X0, target, ids = triple_features(triple, params)
    Y, cache = forward_spectrogram(X0, ids, params)
    loss, dY = spectrogram_loss(Y, target)
    _, grads = backward_spectrogram(dY, cache, params)
    return loss, grads


def triple_loss(triple: AmssTriple, params: ModelParams) -> float:
    X0, target, ids = triple_features(triple, params)
    Y, _ = forward_spectrogram(X0, ids, params)
    return spectrogram_loss(Y, target)[0]
