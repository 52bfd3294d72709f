"""
AMSS network blocks with hand-written backward passes.

PoCM / SMPoCM conditioning, the condition weight generator, the TFC-TDF
encoding block, the latent source channel (LSC) extractor, channel-wise skip
attention (CSA), the decoding block and the aggregate PoCM.

Parameters live in flat name -> array mappings; every block reads its own
`prefix.*` entries and returns gradients under the same names.
"""

from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import ModelDims
from errors import HeadsDontDivide, ShapeMismatch
from network.layers import (
    Cache, conv2d_backward, conv2d_forward, he_normal, lecun_normal,
    linear_backward, linear_forward, pointwise_backward, pointwise_forward,
    relu_backward, relu_forward, sigmoid, softmax, softmax_backward,
)

Params = Mapping[str, np.ndarray]
Grads = Dict[str, np.ndarray]
PocmParams = Dict[str, Tuple[np.ndarray, np.ndarray]]

SMPOCM_ROWS = ("s", "m", "i")


# --- POCM ---

def pocm(X: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Y[c,t,f] = sum_c' weight[c,c'] X[c',t,f] + bias[c]."""
    return pointwise_forward(X, weight, bias)[0]


def smpocm_forward(X: np.ndarray, theta: PocmParams) -> Tuple[np.ndarray, Cache]:
    """Y = i * tanh(PoCM(s * X, theta_m)) + (1 - s) * X, s = sigmoid(PoCM(X, theta_s)), i = sigmoid(PoCM(X, theta_i))."""
    s_pre, c_s = pointwise_forward(X, *theta["s"])
    i_pre, c_i = pointwise_forward(X, *theta["i"])
    s = sigmoid(s_pre)
    i = sigmoid(i_pre)
    u, c_m = pointwise_forward(s * X, *theta["m"])
    tu = np.tanh(u)
    Y = i * tu + (1.0 - s) * X
    return Y, {"X": X, "s": s, "i": i, "tu": tu, "c_s": c_s, "c_i": c_i, "c_m": c_m}


def smpocm_backward(dY: np.ndarray, cache: Cache) -> Tuple[np.ndarray, PocmParams]:
    X, s, i, tu = cache["X"], cache["s"], cache["i"], cache["tu"]
    dX = dY * (1.0 - s)
    ds = -dY * X
    di = dY * tu
    du = dY * i * (1.0 - tu ** 2)

    dsX, dWm, dbm = pointwise_backward(du, cache["c_m"])
    ds += dsX * X
    dX += dsX * s

    dX_i, dWi, dbi = pointwise_backward(di * i * (1.0 - i), cache["c_i"])
    dX_s, dWs, dbs = pointwise_backward(ds * s * (1.0 - s), cache["c_s"])
    dX += dX_i + dX_s
    return dX, {"s": (dWs, dbs), "m": (dWm, dbm), "i": (dWi, dbi)}


def smpocm(X: np.ndarray, theta: PocmParams) -> np.ndarray:
    return smpocm_forward(X, theta)[0]


def pocm_param_count(theta: PocmParams) -> int:
    return int(sum(w.size + b.size for w, b in theta.values()))


# --- CONDITION WEIGHT GENERATOR ---

def generate_condition_weights_forward(
    w: np.ndarray,
    params: Params,
    prefix: str,
    rows: Sequence[str] = SMPOCM_ROWS,
    out_shape: Optional[Tuple[int, int]] = None,
) -> Tuple[PocmParams, Cache]:
    """
    alpha = softmax(Theta w_key^T / sqrt(d_k)) w_value; row r of alpha feeds head r.

    Args:
        w: (L, E) word features
        rows: Head names, one per row of Theta
        out_shape: (M_out, M_in) of each generated PoCM; square from the head size when None

    Returns:
        ({row: (weight (M_out, M_in), bias (M_out,))}, cache)
    """
    Theta = params[f"{prefix}.Theta"]
    if Theta.shape[0] != len(rows):
        raise ShapeMismatch(f"{prefix}: Theta has {Theta.shape[0]} rows for {len(rows)} heads")
    d_k = Theta.shape[1]
    w_key, c_k = linear_forward(w, params[f"{prefix}.Wk"], params[f"{prefix}.bk"])
    w_value, c_v = linear_forward(w, params[f"{prefix}.Wv"], params[f"{prefix}.bv"])
    attn = softmax(Theta @ w_key.T / np.sqrt(d_k), axis=1)
    alpha = attn @ w_value

    if out_shape is None:
        size = params[f"{prefix}.head_{rows[0]}.b"].shape[0]
        m = int(round((-1 + np.sqrt(1 + 4 * size)) / 2))
        out_shape = (m, m)
    m_out, m_in = out_shape

    theta: PocmParams = {}
    for r, row in enumerate(rows):
        flat = alpha[r] @ params[f"{prefix}.head_{row}.W"] + params[f"{prefix}.head_{row}.b"]
        if flat.size != m_out * m_in + m_out:
            raise ShapeMismatch(f"{prefix}.head_{row} emits {flat.size} values, expected {m_out * m_in + m_out}")
        theta[row] = (flat[:m_out * m_in].reshape(m_out, m_in), flat[m_out * m_in:])
    cache = {"w": w, "w_key": w_key, "w_value": w_value, "attn": attn, "alpha": alpha,
             "c_k": c_k, "c_v": c_v, "prefix": prefix, "rows": tuple(rows), "params": params}
    return theta, cache


def generate_condition_weights_backward(dtheta: PocmParams, cache: Cache) -> Tuple[np.ndarray, Grads]:
    prefix, rows, params = cache["prefix"], cache["rows"], cache["params"]
    attn, alpha, w_key, w_value = cache["attn"], cache["alpha"], cache["w_key"], cache["w_value"]
    Theta = params[f"{prefix}.Theta"]
    d_k = Theta.shape[1]
    grads: Grads = {}

    dalpha = np.zeros_like(alpha)
    for r, row in enumerate(rows):
        dW, db = dtheta[row]
        dflat = np.concatenate([dW.ravel(), db])
        grads[f"{prefix}.head_{row}.W"] = np.outer(alpha[r], dflat)
        grads[f"{prefix}.head_{row}.b"] = dflat
        dalpha[r] = params[f"{prefix}.head_{row}.W"] @ dflat

    d_attn = dalpha @ w_value.T
    d_value = attn.T @ dalpha
    d_logits = softmax_backward(d_attn, attn, axis=1) / np.sqrt(d_k)
    grads[f"{prefix}.Theta"] = d_logits @ w_key
    d_key = d_logits.T @ Theta

    dw_k, grads[f"{prefix}.Wk"], grads[f"{prefix}.bk"] = linear_backward(d_key, cache["c_k"])
    dw_v, grads[f"{prefix}.Wv"], grads[f"{prefix}.bv"] = linear_backward(d_value, cache["c_v"])
    return dw_k + dw_v, grads


def generate_condition_weights(w: np.ndarray, params: Params, prefix: str = "wg") -> PocmParams:
    return generate_condition_weights_forward(w, params, prefix)[0]


# --- TFC-TDF ---

def tfc_tdf_forward(X: np.ndarray, params: Params, prefix: str) -> Tuple[np.ndarray, Cache]:
    """
    Two densely connected 3x3 convolutions (growth g), a 1x1 projection to C_out,
    then a frequency-axis bottleneck F -> F/bf -> F added back onto the dense output.
    """
    cin = X.shape[0]
    if params[f"{prefix}.conv1.W"].shape[1] != cin:
        raise ShapeMismatch(f"{prefix} expects {params[f'{prefix}.conv1.W'].shape[1]} channels, got {cin}")
    if params[f"{prefix}.fc1.W"].shape[0] != X.shape[2]:
        raise ShapeMismatch(f"{prefix} expects {params[f'{prefix}.fc1.W'].shape[0]} bins, got {X.shape[2]}")

    a1, c1 = conv2d_forward(X, params[f"{prefix}.conv1.W"], params[f"{prefix}.conv1.b"])
    h1, r1 = relu_forward(a1)
    a2, c2 = conv2d_forward(np.concatenate([X, h1]), params[f"{prefix}.conv2.W"], params[f"{prefix}.conv2.b"])
    h2, r2 = relu_forward(a2)
    a3, c3 = pointwise_forward(np.concatenate([X, h1, h2]), params[f"{prefix}.proj.W"], params[f"{prefix}.proj.b"])
    d, r3 = relu_forward(a3)

    f1, l1 = linear_forward(d, params[f"{prefix}.fc1.W"], params[f"{prefix}.fc1.b"])
    t1, r4 = relu_forward(f1)
    f2, l2 = linear_forward(t1, params[f"{prefix}.fc2.W"], params[f"{prefix}.fc2.b"])
    t, r5 = relu_forward(f2)

    cache = {"cin": cin, "growth": h1.shape[0], "prefix": prefix,
             "c1": c1, "r1": r1, "c2": c2, "r2": r2, "c3": c3, "r3": r3,
             "l1": l1, "r4": r4, "l2": l2, "r5": r5}
    return d + t, cache


def tfc_tdf_backward(dY: np.ndarray, cache: Cache) -> Tuple[np.ndarray, Grads]:
    prefix, cin, g = cache["prefix"], cache["cin"], cache["growth"]
    grads: Grads = {}

    df2 = relu_backward(dY, cache["r5"])
    dt1, grads[f"{prefix}.fc2.W"], grads[f"{prefix}.fc2.b"] = linear_backward(df2, cache["l2"])
    df1 = relu_backward(dt1, cache["r4"])
    dd_fc, grads[f"{prefix}.fc1.W"], grads[f"{prefix}.fc1.b"] = linear_backward(df1, cache["l1"])
    dd = dY + dd_fc

    da3 = relu_backward(dd, cache["r3"])
    dx3, grads[f"{prefix}.proj.W"], grads[f"{prefix}.proj.b"] = pointwise_backward(da3, cache["c3"])
    dX = dx3[:cin].copy()
    dh1 = dx3[cin:cin + g].copy()
    dh2 = dx3[cin + g:]

    da2 = relu_backward(dh2, cache["r2"])
    dx2, grads[f"{prefix}.conv2.W"], grads[f"{prefix}.conv2.b"] = conv2d_backward(da2, cache["c2"])
    dX += dx2[:cin]
    dh1 += dx2[cin:]

    da1 = relu_backward(dh1, cache["r1"])
    dx1, grads[f"{prefix}.conv1.W"], grads[f"{prefix}.conv1.b"] = conv2d_backward(da1, cache["c1"])
    dX += dx1
    return dX, grads


def tfc_tdf(X: np.ndarray, params: Params, prefix: str) -> np.ndarray:
    return tfc_tdf_forward(X, params, prefix)[0]


# --- LATENT SOURCE CHANNEL EXTRACTOR ---

def lsc_extract_forward(X_E: np.ndarray, X_D: np.ndarray, params: Params, prefix: str,
                        heads: int, latent: int) -> Tuple[np.ndarray, np.ndarray, Cache]:
    """[X_E; X_D] -> TFC-TDF -> X (C channels) -> 1x1 conv_V / conv_K, each viewed as (H, M, T, F)."""
    if X_E.shape != X_D.shape:
        raise ShapeMismatch(f"skip {X_E.shape} and decoder {X_D.shape} features differ")
    X, c_tfc = tfc_tdf_forward(np.concatenate([X_E, X_D]), params, f"{prefix}.tfc")
    _, t, f = X.shape
    V, c_v = pointwise_forward(X, params[f"{prefix}.Wv"], params[f"{prefix}.bv"])
    K, c_k = pointwise_forward(X, params[f"{prefix}.Wk"], params[f"{prefix}.bk"])
    if V.shape[0] != heads * latent:
        raise ShapeMismatch(f"{prefix}: conv_V emits {V.shape[0]} channels, expected {heads * latent}")
    cache = {"c_tfc": c_tfc, "c_v": c_v, "c_k": c_k, "channels": X_E.shape[0], "prefix": prefix}
    return V.reshape(heads, latent, t, f), K.reshape(heads, latent, t, f), cache


def lsc_extract_backward(dV: np.ndarray, dK: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, Grads]:
    prefix = cache["prefix"]
    h, m, t, f = dV.shape
    dX_v, dWv, dbv = pointwise_backward(dV.reshape(h * m, t, f), cache["c_v"])
    dX_k, dWk, dbk = pointwise_backward(dK.reshape(h * m, t, f), cache["c_k"])
    dXc, grads = tfc_tdf_backward(dX_v + dX_k, cache["c_tfc"])
    grads.update({f"{prefix}.Wv": dWv, f"{prefix}.bv": dbv, f"{prefix}.Wk": dWk, f"{prefix}.bk": dbk})
    c = cache["channels"]
    return dXc[:c], dXc[c:], grads


def lsc_extract(X_E: np.ndarray, X_D: np.ndarray, params: Params, prefix: str,
                heads: int, latent: int) -> Tuple[np.ndarray, np.ndarray]:
    V, K, _ = lsc_extract_forward(X_E, X_D, params, prefix, heads, latent)
    return V, K


# --- CHANNEL-WISE SKIP ATTENTION ---

def csa_forward(Q: np.ndarray, K: np.ndarray, Vp: np.ndarray) -> Tuple[np.ndarray, Cache]:
    """
    Per head h and frame t: softmax over M of Q_h[:,t,:] K_h[:,t,:]^T / sqrt(F), times Vp_h[:,t,:].

    Args:
        Q: (C, T, F) queries from the skip connection
        K, Vp: (H, M, T, F) keys and manipulated latent values
    """
    c, t, f = Q.shape
    heads = K.shape[0]
    if c % heads != 0:
        raise HeadsDontDivide(c, heads)
    if K.shape != Vp.shape or K.shape[2:] != (t, f):
        raise ShapeMismatch(f"CSA shapes disagree: Q {Q.shape}, K {K.shape}, V {Vp.shape}")
    Qh = Q.reshape(heads, c // heads, t, f)
    attn = softmax(np.einsum("hctf,hmtf->hctm", Qh, K) / np.sqrt(f), axis=-1)
    out = np.einsum("hctm,hmtf->hctf", attn, Vp)
    return out.reshape(c, t, f), {"Qh": Qh, "K": K, "Vp": Vp, "attn": attn}


def csa_backward(dY: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    Qh, K, Vp, attn = cache["Qh"], cache["K"], cache["Vp"], cache["attn"]
    heads, cq, t, f = Qh.shape
    dOut = dY.reshape(heads, cq, t, f)
    d_attn = np.einsum("hctf,hmtf->hctm", dOut, Vp)
    dVp = np.einsum("hctm,hctf->hmtf", attn, dOut)
    d_logits = softmax_backward(d_attn, attn, axis=-1) / np.sqrt(f)
    dQh = np.einsum("hctm,hmtf->hctf", d_logits, K)
    dK = np.einsum("hctm,hctf->hmtf", d_logits, Qh)
    return dQh.reshape(heads * cq, t, f), dK, dVp


def csa(Q: np.ndarray, K: np.ndarray, Vp: np.ndarray) -> np.ndarray:
    return csa_forward(Q, K, Vp)[0]


# --- DECODING BLOCK ---

def decode_block_forward(
    X_D: np.ndarray,
    X_E: np.ndarray,
    w: np.ndarray,
    params: Params,
    prefix: str,
    dims: ModelDims,
    keep_latent: Optional[Tuple[int, int]] = None,
) -> Tuple[np.ndarray, Cache]:
    """
    LSC extraction, query-conditioned latent manipulation (one theta shared by all heads),
    then CSA from the skip features. keep_latent=(head, channel) silences every other
    manipulated latent channel.
    """
    H, M = dims.heads, dims.latent
    V, K, c_lsc = lsc_extract_forward(X_E, X_D, params, f"{prefix}.lsc", H, M)

    if dims.decoder == "no_smpocm":
        theta, c_wg = generate_condition_weights_forward(w, params, f"{prefix}.wg", ("m",), (M, M))
        head_caches = []
        Vp = np.empty_like(V)
        for h in range(H):
            u, c_u = pointwise_forward(V[h], *theta["m"])
            Vp[h] = np.tanh(u)
            head_caches.append(c_u)
    else:
        theta, c_wg = generate_condition_weights_forward(w, params, f"{prefix}.wg", SMPOCM_ROWS, (M, M))
        head_caches = []
        Vp = np.empty_like(V)
        for h in range(H):
            Vp[h], c_h = smpocm_forward(V[h], theta)
            head_caches.append(c_h)

    mask = None
    if keep_latent is not None:
        head, channel = keep_latent
        if not (0 <= head < H and 0 <= channel < M):
            raise ShapeMismatch(f"latent channel {keep_latent} outside {H} heads x {M} channels")
        mask = np.zeros((H, M, 1, 1))
        mask[head, channel] = 1.0
        Vp = Vp * mask

    cache: Cache = {"c_lsc": c_lsc, "c_wg": c_wg, "heads": head_caches, "Vp": Vp,
                    "mask": None if mask is None else mask.astype(bool), "decoder": dims.decoder,
                    "prefix": prefix, "theta": theta}
    _, t, f = X_E.shape
    if dims.decoder == "no_csa":
        out, cache["c_out"] = pointwise_forward(Vp.reshape(H * M, t, f), params[f"{prefix}.out.W"], params[f"{prefix}.out.b"])
    else:
        Q, cache["c_q"] = pointwise_forward(X_E, params[f"{prefix}.q.W"], params[f"{prefix}.q.b"])
        out, cache["c_csa"] = csa_forward(Q, K, Vp)
    return out, cache


def decode_block_backward(dY: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, np.ndarray, Grads]:
    """Returns (dX_D, dX_E, dw, parameter gradients)."""
    prefix, Vp = cache["prefix"], cache["Vp"]
    H, M, t, f = Vp.shape
    grads: Grads = {}

    if cache["decoder"] == "no_csa":
        dflat, grads[f"{prefix}.out.W"], grads[f"{prefix}.out.b"] = pointwise_backward(dY, cache["c_out"])
        dVp = dflat.reshape(H, M, t, f)
        dK = np.zeros_like(Vp)
        dXE_q = 0.0
    else:
        dQ, dK, dVp = csa_backward(dY, cache["c_csa"])
        dXE_q, grads[f"{prefix}.q.W"], grads[f"{prefix}.q.b"] = pointwise_backward(dQ, cache["c_q"])

    if cache["mask"] is not None:
        dVp = dVp * cache["mask"]

    dV = np.empty_like(dVp)
    rows = ("m",) if cache["decoder"] == "no_smpocm" else SMPOCM_ROWS
    dtheta = {row: (np.zeros_like(cache["theta"][row][0]), np.zeros_like(cache["theta"][row][1])) for row in rows}
    for h in range(H):
        if cache["decoder"] == "no_smpocm":
            du = dVp[h] * (1.0 - np.tanh(pointwise_forward(cache["heads"][h]["x"], *cache["theta"]["m"])[0]) ** 2)
            dV[h], dWm, dbm = pointwise_backward(du, cache["heads"][h])
            head_grads = {"m": (dWm, dbm)}
        else:
            dV[h], head_grads = smpocm_backward(dVp[h], cache["heads"][h])
        for row in rows:
            dtheta[row] = (dtheta[row][0] + head_grads[row][0], dtheta[row][1] + head_grads[row][1])

    dw, g_wg = generate_condition_weights_backward(dtheta, cache["c_wg"])
    dXE, dXD, g_lsc = lsc_extract_backward(dV, dK, cache["c_lsc"])
    grads.update(g_wg)
    grads.update(g_lsc)
    return dXD, dXE + dXE_q, dw, grads


def decode_block(X_D: np.ndarray, X_E: np.ndarray, w: np.ndarray, params: Params,
                 prefix: str, dims: ModelDims) -> np.ndarray:
    return decode_block_forward(X_D, X_E, w, params, prefix, dims)[0]


# --- AGGREGATE POCM ---

def aggregate_pocm_forward(X: np.ndarray, w: np.ndarray, params: Params, prefix: str = "agg") -> Tuple[np.ndarray, Cache]:
    """One conditioned C -> 4 pointwise convolution, no activation; channels (Lre, Lim, Rre, Rim)."""
    theta, c_wg = generate_condition_weights_forward(w, params, f"{prefix}.wg", ("a",), (4, X.shape[0]))
    Y, c_p = pointwise_forward(X, *theta["a"])
    return Y, {"c_wg": c_wg, "c_p": c_p}


def aggregate_pocm_backward(dY: np.ndarray, cache: Cache) -> Tuple[np.ndarray, np.ndarray, Grads]:
    dX, dW, db = pointwise_backward(dY, cache["c_p"])
    dw, grads = generate_condition_weights_backward({"a": (dW, db)}, cache["c_wg"])
    return dX, dw, grads


def aggregate_pocm(X: np.ndarray, w: np.ndarray, params: Params, prefix: str = "agg") -> np.ndarray:
    return aggregate_pocm_forward(X, w, params, prefix)[0]


# --- INITIALIZATION ---

def init_weight_generator(rng: np.random.Generator, prefix: str, rows: Sequence[str], word_dim: int,
                          key_dim: int, out_shape: Tuple[int, int], gain: float = 1.0) -> Dict[str, np.ndarray]:
    m_out, m_in = out_shape
    size = m_out * m_in + m_out
    params = {
        f"{prefix}.Theta": rng.normal(0.0, 1.0, size=(len(rows), key_dim)),
        f"{prefix}.Wk": lecun_normal(rng, (word_dim, key_dim), word_dim),
        f"{prefix}.bk": np.zeros(key_dim),
        f"{prefix}.Wv": lecun_normal(rng, (word_dim, key_dim), word_dim),
        f"{prefix}.bv": np.zeros(key_dim),
    }
    for row in rows:
        params[f"{prefix}.head_{row}.W"] = lecun_normal(rng, (key_dim, size), key_dim, gain / np.sqrt(m_in))
        params[f"{prefix}.head_{row}.b"] = np.zeros(size)
    return params


def init_tfc_tdf(rng: np.random.Generator, prefix: str, cin: int, cout: int, growth: int,
                 bins: int, bottleneck: int) -> Dict[str, np.ndarray]:
    hidden = max(1, bins // bottleneck)
    return {
        f"{prefix}.conv1.W": he_normal(rng, (growth, cin, 3, 3), cin * 9),
        f"{prefix}.conv1.b": np.zeros(growth),
        f"{prefix}.conv2.W": he_normal(rng, (growth, cin + growth, 3, 3), (cin + growth) * 9),
        f"{prefix}.conv2.b": np.zeros(growth),
        f"{prefix}.proj.W": he_normal(rng, (cout, cin + 2 * growth), cin + 2 * growth),
        f"{prefix}.proj.b": np.zeros(cout),
        f"{prefix}.fc1.W": he_normal(rng, (bins, hidden), bins),
        f"{prefix}.fc1.b": np.zeros(hidden),
        f"{prefix}.fc2.W": lecun_normal(rng, (hidden, bins), hidden, 0.5),
        f"{prefix}.fc2.b": np.zeros(bins),
    }


def init_decode_block(rng: np.random.Generator, prefix: str, dims: ModelDims, bins: int) -> Dict[str, np.ndarray]:
    C, H, M = dims.channels, dims.heads, dims.latent
    params = init_tfc_tdf(rng, f"{prefix}.lsc.tfc", 2 * C, C, dims.growth, bins, dims.bottleneck)
    params.update({
        f"{prefix}.lsc.Wv": lecun_normal(rng, (H * M, C), C),
        f"{prefix}.lsc.bv": np.zeros(H * M),
        f"{prefix}.lsc.Wk": lecun_normal(rng, (H * M, C), C),
        f"{prefix}.lsc.bk": np.zeros(H * M),
    })
    rows = ("m",) if dims.decoder == "no_smpocm" else SMPOCM_ROWS
    params.update(init_weight_generator(rng, f"{prefix}.wg", rows, dims.word_dim, dims.key_dim, (M, M)))
    if dims.decoder == "no_csa":
        params[f"{prefix}.out.W"] = lecun_normal(rng, (C, H * M), H * M)
        params[f"{prefix}.out.b"] = np.zeros(C)
    else:
        params[f"{prefix}.q.W"] = lecun_normal(rng, (C, C), C)
        params[f"{prefix}.q.b"] = np.zeros(C)
    return params
