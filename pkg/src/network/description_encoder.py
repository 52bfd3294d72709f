"""
Description Encoder.

Word embedding followed by a bidirectional gated recurrent encoder. Row l of
the output concatenates the forward and backward hidden states at position l.
"""

import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from engines.aml_engine import Grammar, default_grammar, tokenize
from errors import EmptyQuery, ShapeMismatch
from network.layers import Cache, sigmoid

logger = logging.getLogger(__name__)

UNK = "<unk>"
GATES = ("z", "r", "n")


def build_vocabulary(grammar: Optional[Grammar] = None) -> List[str]:
    """<unk> followed by the grammar's terminal words in sorted order."""
    grammar = grammar or default_grammar()
    return [UNK] + sorted(grammar.terminals)


def token_ids(tokens: Sequence[str], vocab: Sequence[str]) -> np.ndarray:
    index = {word: i for i, word in enumerate(vocab)}
    return np.array([index.get(tok, index[UNK]) for tok in tokens], dtype=np.int64)


def load_word_vectors(path: str, vocab: Sequence[str], table: np.ndarray) -> int:
    """
    Fills embedding rows from a whitespace-separated "token v1 v2 ..." text file.

    Returns:
        Number of vocabulary rows that were filled
    """
    index = {word: i for i, word in enumerate(vocab)}
    filled = 0
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            parts = line.rstrip().split()
            if len(parts) != table.shape[1] + 1 or parts[0] not in index:
                continue
            table[index[parts[0]]] = np.asarray(parts[1:], dtype=np.float64)
            filled += 1
    logger.info(f"Loaded {filled}/{len(vocab)} word vectors from {path}")
    return filled


# --- GATED RECURRENCE ---

def gru_step(x: np.ndarray, h: np.ndarray, p: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, Cache]:
    """
    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br)
    n = tanh(x Wn + bn + r * (h Un)), h' = (1 - z) * n + z * h
    """
    z = sigmoid(x @ p["Wz"] + h @ p["Uz"] + p["bz"])
    r = sigmoid(x @ p["Wr"] + h @ p["Ur"] + p["br"])
    hu = h @ p["Un"]
    n = np.tanh(x @ p["Wn"] + p["bn"] + r * hu)
    h_new = (1.0 - z) * n + z * h
    return h_new, {"x": x, "h": h, "z": z, "r": r, "n": n, "hu": hu}


def gru_step_backward(dh_new: np.ndarray, cache: Cache, p: Mapping[str, np.ndarray],
                      grads: Dict[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Accumulates parameter gradients into `grads`; returns (dx, dh)."""
    x, h, z, r, n, hu = (cache[k] for k in ("x", "h", "z", "r", "n", "hu"))

    dn = dh_new * (1.0 - z)
    dz = dh_new * (h - n)
    dh = dh_new * z

    dn_pre = dn * (1.0 - n ** 2)
    grads["Wn"] += np.outer(x, dn_pre)
    grads["bn"] += dn_pre
    dx = dn_pre @ p["Wn"].T
    dhu = dn_pre * r
    grads["Un"] += np.outer(h, dhu)
    dh += dhu @ p["Un"].T

    dr_pre = dn_pre * hu * r * (1.0 - r)
    grads["Wr"] += np.outer(x, dr_pre)
    grads["Ur"] += np.outer(h, dr_pre)
    grads["br"] += dr_pre
    dx += dr_pre @ p["Wr"].T
    dh += dr_pre @ p["Ur"].T

    dz_pre = dz * z * (1.0 - z)
    grads["Wz"] += np.outer(x, dz_pre)
    grads["Uz"] += np.outer(h, dz_pre)
    grads["bz"] += dz_pre
    dx += dz_pre @ p["Wz"].T
    dh += dz_pre @ p["Uz"].T
    return dx, dh


def _direction(params: Mapping[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {name: params[f"{prefix}.{name}"] for name in ("Wz", "Wr", "Wn", "Uz", "Ur", "Un", "bz", "br", "bn")}


def _run(xs: np.ndarray, p: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, List[Cache]]:
    hidden = p["Uz"].shape[0]
    h = np.zeros(hidden)
    states, caches = [], []
    for x in xs:
        h, cache = gru_step(x, h, p)
        states.append(h)
        caches.append(cache)
    return np.stack(states), caches


def _run_backward(dstates: np.ndarray, caches: List[Cache], p: Mapping[str, np.ndarray]) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dxs = np.zeros((len(caches), p["Wz"].shape[0]))
    dh = np.zeros(p["Uz"].shape[0])
    for step in reversed(range(len(caches))):
        dx, dh = gru_step_backward(dstates[step] + dh, caches[step], p, grads)
        dxs[step] = dx
    return dxs, grads


# --- ENCODER ---

def encode_description_forward(ids: np.ndarray, params: Mapping[str, np.ndarray],
                               prefix: str = "enc") -> Tuple[np.ndarray, Cache]:
    """
    Args:
        ids: (L,) vocabulary indices
        params: Holds {prefix}.embedding and {prefix}.fwd.* / {prefix}.bwd.* recurrence weights

    Returns:
        (L, E) word features, E = 2 * hidden

    Raises:
        EmptyQuery: If ids is empty
    """
    if len(ids) == 0:
        raise EmptyQuery("cannot encode an empty description")
    table = params[f"{prefix}.embedding"]
    xs = table[ids]
    fwd = _direction(params, f"{prefix}.fwd")
    bwd = _direction(params, f"{prefix}.bwd")
    if xs.shape[1] != fwd["Wz"].shape[0]:
        raise ShapeMismatch(f"embedding size {xs.shape[1]} does not match recurrence input {fwd['Wz'].shape[0]}")

    f_states, f_caches = _run(xs, fwd)
    b_states, b_caches = _run(xs[::-1], bwd)
    w = np.concatenate([f_states, b_states[::-1]], axis=1)
    return w, {"ids": ids, "f": f_caches, "b": b_caches, "fwd": fwd, "bwd": bwd,
               "hidden": f_states.shape[1], "prefix": prefix, "vocab_size": table.shape[0]}


def encode_description_backward(dw: np.ndarray, cache: Cache) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Returns (d embedded inputs (L, emb), parameter gradients keyed by full name)."""
    hidden, prefix = cache["hidden"], cache["prefix"]
    dxs_f, g_f = _run_backward(dw[:, :hidden], cache["f"], cache["fwd"])
    dxs_b, g_b = _run_backward(dw[::-1, hidden:], cache["b"], cache["bwd"])
    dxs = dxs_f + dxs_b[::-1]

    grads: Dict[str, np.ndarray] = {}
    d_table = np.zeros((cache["vocab_size"], dxs.shape[1]))
    np.add.at(d_table, cache["ids"], dxs)
    grads[f"{prefix}.embedding"] = d_table
    for name, value in g_f.items():
        grads[f"{prefix}.fwd.{name}"] = value
    for name, value in g_b.items():
        grads[f"{prefix}.bwd.{name}"] = value
    return dxs, grads


def encode_description(tokens: Sequence[str], params: Mapping[str, np.ndarray], vocab: Sequence[str]) -> np.ndarray:
    """Word features (L, E) for a token list."""
    return encode_description_forward(token_ids(tokens, vocab), params)[0]


def encode_query(query: str, params: Mapping[str, np.ndarray], vocab: Sequence[str]) -> np.ndarray:
    return encode_description(tokenize(query), params, vocab)


def init_encoder(rng: np.random.Generator, vocab_size: int, emb_dim: int, word_dim: int,
                 prefix: str = "enc") -> Dict[str, np.ndarray]:
    hidden = word_dim // 2
    params = {f"{prefix}.embedding": rng.uniform(-0.1, 0.1, size=(vocab_size, emb_dim))}
    for direction in ("fwd", "bwd"):
        for gate in GATES:
            params[f"{prefix}.{direction}.W{gate}"] = rng.normal(0.0, 1.0 / np.sqrt(emb_dim), size=(emb_dim, hidden))
            params[f"{prefix}.{direction}.U{gate}"] = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, hidden))
            params[f"{prefix}.{direction}.b{gate}"] = np.zeros(hidden)
    return params
