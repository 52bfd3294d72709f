"""
Finite-difference verification of the hand-written backward passes.

For an op with output Y and a fixed random cotangent R, the scalar loss is
L = sum(Y * R). Each input tensor x is probed along a random direction D:
the analytic value sum(dL/dx * D) is compared with the central difference
(L(x + hD) - L(x - hD)) / 2h. ReLU activation patterns are held at the base
point while probing, so the comparison stays inside one linear region.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np

import config
from config import ModelDims
from engines.dsp_engine import AudioTrack, stft
from engines.triple_engine import AmssTriple
from network.amss_net import (
    ModelParams, backward_spectrogram, forward_spectrogram, init_params, loss_and_grads,
    query_ids, spectrogram_features, triple_loss,
)
from network.blocks import (
    SMPOCM_ROWS, aggregate_pocm_backward, aggregate_pocm_forward, csa_backward, csa_forward,
    generate_condition_weights_backward, generate_condition_weights_forward, init_tfc_tdf,
    init_weight_generator, smpocm_backward, smpocm_forward, tfc_tdf_backward, tfc_tdf_forward,
)
from network.description_encoder import encode_description_backward, encode_description_forward, init_encoder
from network.layers import Cache, pointwise_backward, pointwise_forward, record_relu_masks, replay_relu_masks

logger = logging.getLogger(__name__)

GRAD_STEP = 1e-5
REL_FLOOR = 1e-8
MICRO_SAMPLE_RATE = 8000
MICRO_QUERY = "decrease the volume of drums moderately"

Inputs = Dict[str, np.ndarray]


@dataclass
class GradCase:
    inputs: Inputs
    forward: Callable[[Mapping[str, np.ndarray]], Tuple[np.ndarray, Cache]]
    backward: Callable[[np.ndarray, Cache], Dict[str, np.ndarray]]


def _jitter(rng: np.random.Generator, params: Mapping[str, np.ndarray], scale: float = 0.1) -> Inputs:
    # Zero-initialized biases would leave their gradient paths untested at special values.
    return {k: v + scale * rng.normal(size=v.shape) for k, v in params.items()}


# --- CASES ---

def _case_pocm(rng: np.random.Generator) -> GradCase:
    inputs = {"X": rng.normal(size=(4, 5, 6)), "W": rng.normal(size=(4, 4)), "b": rng.normal(size=4)}

    def backward(dY: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        dX, dW, db = pointwise_backward(dY, cache)
        return {"X": dX, "W": dW, "b": db}

    return GradCase(inputs, lambda x: pointwise_forward(x["X"], x["W"], x["b"]), backward)


def _case_smpocm(rng: np.random.Generator) -> GradCase:
    m = 4
    inputs: Inputs = {"X": rng.normal(size=(m, 5, 6))}
    for row in SMPOCM_ROWS:
        inputs[f"{row}.W"] = rng.normal(0.0, 0.5, size=(m, m))
        inputs[f"{row}.b"] = rng.normal(0.0, 0.5, size=m)

    def forward(x: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, Cache]:
        return smpocm_forward(x["X"], {row: (x[f"{row}.W"], x[f"{row}.b"]) for row in SMPOCM_ROWS})

    def backward(dY: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        dX, dtheta = smpocm_backward(dY, cache)
        grads = {"X": dX}
        for row, (dW, db) in dtheta.items():
            grads[f"{row}.W"], grads[f"{row}.b"] = dW, db
        return grads

    return GradCase(inputs, forward, backward)


def _case_weight_generator(rng: np.random.Generator) -> GradCase:
    m, word_dim = 4, 8
    params = _jitter(rng, init_weight_generator(rng, "wg", SMPOCM_ROWS, word_dim, 8, (m, m)))
    inputs: Inputs = {"w": rng.normal(size=(3, word_dim)), **params}

    def forward(x: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, Cache]:
        theta, cache = generate_condition_weights_forward(x["w"], x, "wg", SMPOCM_ROWS, (m, m))
        flat = np.concatenate([np.concatenate([theta[r][0].ravel(), theta[r][1]]) for r in SMPOCM_ROWS])
        return flat, cache

    def backward(dflat: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        size = m * m + m
        dtheta = {}
        for k, row in enumerate(SMPOCM_ROWS):
            chunk = dflat[k * size:(k + 1) * size]
            dtheta[row] = (chunk[:m * m].reshape(m, m), chunk[m * m:])
        dw, grads = generate_condition_weights_backward(dtheta, cache)
        return {"w": dw, **grads}

    return GradCase(inputs, forward, backward)


def _case_tfc_tdf(rng: np.random.Generator) -> GradCase:
    params = _jitter(rng, init_tfc_tdf(rng, "tfc", 4, 4, 3, 16, 4))
    inputs: Inputs = {"X": rng.normal(size=(4, 6, 16)), **params}

    def backward(dY: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        dX, grads = tfc_tdf_backward(dY, cache)
        return {"X": dX, **grads}

    return GradCase(inputs, lambda x: tfc_tdf_forward(x["X"], x, "tfc"), backward)


def _case_csa(rng: np.random.Generator) -> GradCase:
    inputs = {
        "Q": rng.normal(size=(4, 5, 6)),
        "K": rng.normal(size=(2, 3, 5, 6)),
        "Vp": rng.normal(size=(2, 3, 5, 6)),
    }

    def backward(dY: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        dQ, dK, dVp = csa_backward(dY, cache)
        return {"Q": dQ, "K": dK, "Vp": dVp}

    return GradCase(inputs, lambda x: csa_forward(x["Q"], x["K"], x["Vp"]), backward)


def _case_aggregate(rng: np.random.Generator) -> GradCase:
    params = _jitter(rng, init_weight_generator(rng, "agg.wg", ("a",), 8, 8, (4, 6)))
    inputs: Inputs = {"X": rng.normal(size=(6, 5, 6)), "w": rng.normal(size=(3, 8)), **params}

    def backward(dY: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        dX, dw, grads = aggregate_pocm_backward(dY, cache)
        return {"X": dX, "w": dw, **grads}

    return GradCase(inputs, lambda x: aggregate_pocm_forward(x["X"], x["w"], x, "agg"), backward)


def _case_encoder(rng: np.random.Generator) -> GradCase:
    params = init_encoder(rng, 10, 6, 8)
    params["enc.embedding"] = rng.normal(0.0, 0.5, size=params["enc.embedding"].shape)
    inputs = _jitter(rng, params)
    ids = np.array([3, 1, 4, 1, 5])

    def backward(dw: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        return encode_description_backward(dw, cache)[1]

    return GradCase(inputs, lambda x: encode_description_forward(ids, x), backward)


def micro_audio(rng: np.random.Generator, seconds: float = 1.0, sample_rate: int = MICRO_SAMPLE_RATE) -> AudioTrack:
    return AudioTrack(0.1 * rng.normal(size=(2, int(seconds * sample_rate))), sample_rate)


def micro_params(seed: int = 0, dims: Optional[ModelDims] = None) -> ModelParams:
    return init_params(dims or config.get_config().micro_model, seed)


def _case_forward_micro(rng: np.random.Generator) -> GradCase:
    params = micro_params(int(rng.integers(2 ** 31)))
    audio = micro_audio(rng)
    X0 = spectrogram_features(stft(audio, params.dims.fft_size, params.dims.hop))
    ids = query_ids(MICRO_QUERY, params)
    inputs: Inputs = {"X0": X0, **params.tensors}
    names = list(params.tensors)

    def forward(x: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, Cache]:
        current = params.with_tensors({k: x[k] for k in names})
        Y, cache = forward_spectrogram(x["X0"], ids, current)
        cache["params"] = current
        return Y, cache

    def backward(dY: np.ndarray, cache: Cache) -> Dict[str, np.ndarray]:
        dX0, grads = backward_spectrogram(dY, cache, cache["params"])
        return {"X0": dX0, **grads}

    return GradCase(inputs, forward, backward)


CASES: Dict[str, Callable[[np.random.Generator], GradCase]] = {
    "pocm": _case_pocm,
    "smpocm": _case_smpocm,
    "generate_condition_weights": _case_weight_generator,
    "tfc_tdf": _case_tfc_tdf,
    "csa": _case_csa,
    "aggregate_pocm": _case_aggregate,
    "encode_description": _case_encoder,
    "forward-micro": _case_forward_micro,
}
OPS = tuple(CASES)


# --- CHECK ---

def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def grad_check_report(
    op_id: str,
    point: Optional[Mapping[str, np.ndarray]] = None,
    direction: Optional[Mapping[str, np.ndarray]] = None,
    seed: int = 0,
    step: float = GRAD_STEP,
) -> Dict[str, float]:
    """
    Relative error per input tensor.

    Args:
        op_id: One of OPS
        point: Input tensors overriding the op's seeded random point
        direction: Probe directions per tensor (random normal where absent)
    """
    if op_id not in CASES:
        raise ValueError(f"unknown op '{op_id}', expected one of {OPS}")
    rng = np.random.default_rng(seed)
    case = CASES[op_id](rng)
    inputs = dict(case.inputs)
    inputs.update(point or {})

    with record_relu_masks() as masks:
        out, cache = case.forward(inputs)
    cotangent = rng.normal(size=out.shape)
    grads = case.backward(cotangent, cache)

    errors: Dict[str, float] = {}
    for name, x in inputs.items():
        d = direction[name] if direction and name in direction else rng.normal(size=x.shape)
        analytic = float(np.sum(grads[name] * d))
        with replay_relu_masks(masks):
            plus, _ = case.forward({**inputs, name: x + step * d})
        with replay_relu_masks(masks):
            minus, _ = case.forward({**inputs, name: x - step * d})
        numeric = float(np.sum((plus - minus) * cotangent)) / (2.0 * step)
        errors[name] = _relative_error(analytic, numeric)
        logger.debug(f"gradcheck {op_id}:{name} analytic={analytic:.6e} numeric={numeric:.6e} rel={errors[name]:.2e}")
    return errors


def grad_check(
    op_id: str,
    point: Optional[Mapping[str, np.ndarray]] = None,
    direction: Optional[Mapping[str, np.ndarray]] = None,
    seed: int = 0,
    step: float = GRAD_STEP,
) -> float:
    """Max relative error between analytic and central-difference directional derivatives."""
    errors = grad_check_report(op_id, point, direction, seed, step)
    worst = max(errors.values())
    logger.info(f"gradcheck {op_id}: max relative error {worst:.3e} over {len(errors)} tensors")
    return worst


def check_loss_gradient(triple: AmssTriple, params: ModelParams, seed: int = 0,
                        step: float = GRAD_STEP) -> float:
    """Same directional comparison for the training loss of one triple over every parameter tensor."""
    rng = np.random.default_rng(seed)
    with record_relu_masks() as masks:
        _, grads = loss_and_grads(triple, params)
    worst = 0.0
    for name, value in params.tensors.items():
        d = rng.normal(size=value.shape)
        analytic = float(np.sum(grads[name] * d))
        shifted = []
        for sign in (1.0, -1.0):
            tensors = dict(params.tensors)
            tensors[name] = value + sign * step * d
            with replay_relu_masks(masks):
                shifted.append(triple_loss(triple, params.with_tensors(tensors)))
        numeric = (shifted[0] - shifted[1]) / (2.0 * step)
        worst = max(worst, _relative_error(analytic, numeric))
    return worst
