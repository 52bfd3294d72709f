"""
Storage Module for amsskit.

WAV I/O through soundfile, stem folders, triple datasets (manifest + WAV pairs)
and the binary checkpoint container. Every artifact written here carries the
config hash and seed of the run that produced it.
"""

import os
import re
import json
import struct
import logging
from collections import OrderedDict
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import soundfile as sf

import config
from engines.aml_engine import default_grammar, parse
from engines.dsp_engine import AudioTrack, MultiTrack
from engines.triple_engine import AmssTriple
from errors import CheckpointError, DspError, ManifestMismatch, SampleRateError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
DATASET_SUBTYPE = "DOUBLE"
CHECKPOINT_MAGIC = b"AMSSCKPT"
CHECKPOINT_VERSION = 1

_PAIR_PATTERN = re.compile(r"^(\d{4})_(input|target)\.wav$")

# --- WAV I/O ---

def read_wav(path: str, sample_rate: Optional[int] = None, allow_any_rate: Optional[bool] = None) -> AudioTrack:
    """
    Reads a PCM16 / float WAV as a stereo AudioTrack.

    Mono input is duplicated to both channels. Resampling is never performed.

    Raises:
        SampleRateError: If the file rate differs from the expected rate and any rate is not allowed
    """
    expected = sample_rate if sample_rate is not None else config.get_config().sample_rate
    allow = config.ALLOW_ANY_RATE if allow_any_rate is None else allow_any_rate
    try:
        data, sr = sf.read(path, dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise DspError(f"cannot read WAV {path}: {e}") from e

    if sr != expected and not allow:
        raise SampleRateError(f"{path} is sampled at {sr} Hz, expected {expected} Hz (use --allow-any-rate)")
    if data.shape[1] == 1:
        logger.warning(f"{os.path.basename(path)} is mono; duplicating to stereo")
        data = np.repeat(data, 2, axis=1)
    elif data.shape[1] != 2:
        raise DspError(f"{path} has {data.shape[1]} channels; only mono and stereo are supported")
    return AudioTrack(data.T, sr)


def write_wav(path: str, track: AudioTrack, subtype: str = "FLOAT") -> None:
    directory = os.path.dirname(path)
    try:
        if directory:
            os.makedirs(directory, exist_ok=True)
        sf.write(path, track.samples.T, track.sample_rate, subtype=subtype)
    except (RuntimeError, OSError) as e:
        raise DspError(f"cannot write WAV {path}: {e}") from e
    logger.debug(f"Wrote {path} ({track.length} samples, {subtype})")


def write_sidecar(wav_path: str, config_hash: str, seed: int, extra: Optional[Mapping[str, Any]] = None) -> str:
    """Writes <wav>.json next to an output WAV recording how it was produced."""
    sidecar = f"{wav_path}.json"
    payload = {"config_hash": config_hash, "seed": int(seed)}
    payload.update(extra or {})
    with open(sidecar, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    return sidecar


# --- STEM FOLDERS ---

def _ordered_stem_names(names: Sequence[str], sources: Sequence[str]) -> List[str]:
    ordered = [s for s in sources if s in names]
    if "other" in names:
        ordered.append("other")
    return ordered


def read_stems(directory: str, sources: Optional[Sequence[str]] = None,
               allow_any_rate: Optional[bool] = None, sample_rate: Optional[int] = None) -> MultiTrack:
    """
    Loads <directory>/<source>.wav for every configured source plus an optional other.wav.

    Files naming an unknown source are skipped with a warning.
    """
    cfg = config.get_config()
    sources = sources if sources is not None else cfg.sources
    sample_rate = sample_rate if sample_rate is not None else cfg.sample_rate
    if not os.path.isdir(directory):
        raise DspError(f"stem folder not found: {directory}")
    found = {
        os.path.splitext(name)[0]: os.path.join(directory, name)
        for name in sorted(os.listdir(directory))
        if name.lower().endswith(".wav")
    }
    for name in found:
        if name not in sources and name != "other":
            logger.warning(f"Skipping stem '{name}' in {directory}: not in the source vocabulary")
    names = _ordered_stem_names(list(found), sources)
    if not names:
        raise DspError(f"no stems found in {directory}")
    return MultiTrack({
        name: read_wav(found[name], sample_rate, allow_any_rate) for name in names
    })


def read_stem_tracks(directory: str, sources: Optional[Sequence[str]] = None,
                     allow_any_rate: Optional[bool] = None, sample_rate: Optional[int] = None) -> List[MultiTrack]:
    """One track (stems directly in `directory`) or many (one sub-folder per track)."""
    if not os.path.isdir(directory):
        raise DspError(f"stem folder not found: {directory}")
    if any(name.lower().endswith(".wav") for name in os.listdir(directory)):
        return [read_stems(directory, sources, allow_any_rate, sample_rate)]
    tracks = [
        read_stems(os.path.join(directory, sub), sources, allow_any_rate, sample_rate)
        for sub in sorted(os.listdir(directory))
        if os.path.isdir(os.path.join(directory, sub))
    ]
    if not tracks:
        raise DspError(f"no stem folders found in {directory}")
    logger.info(f"Loaded {len(tracks)} multitracks from {directory}")
    return tracks


def write_stems(directory: str, mt: MultiTrack, subtype: str = "FLOAT") -> None:
    for name, track in mt.stems.items():
        write_wav(os.path.join(directory, f"{name}.wav"), track, subtype)


# --- DATASETS ---

def write_dataset(
    triples: Sequence[AmssTriple],
    directory: str,
    config_hash: Optional[str] = None,
    seed: Optional[int] = None,
    extra: Optional[Mapping[str, Any]] = None,
) -> str:
    """
    Writes NNNN_input.wav / NNNN_target.wav pairs and manifest.json.

    extra is merged into the manifest (generation options such as augmentation).

    WAVs are stored as 64-bit float so read_dataset returns the exact samples.

    Returns:
        Path of the manifest
    """
    cfg = config.get_config()
    os.makedirs(directory, exist_ok=True)
    entries = []
    for index, triple in enumerate(triples):
        write_wav(os.path.join(directory, f"{index:04d}_input.wav"), triple.input, DATASET_SUBTYPE)
        write_wav(os.path.join(directory, f"{index:04d}_target.wav"), triple.target, DATASET_SUBTYPE)
        entries.append({
            "index": index,
            "description": triple.description,
            "task": triple.task,
            "seed": triple.seed,
        })

    manifest = {
        "config_hash": config_hash or cfg.config_hash,
        "seed": seed,
        "sample_rate": triples[0].input.sample_rate if triples else cfg.sample_rate,
        "entries": entries,
    }
    manifest.update(extra or {})
    path = os.path.join(directory, MANIFEST_NAME)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
    logger.info(f"Dataset written: {len(entries)} triples -> {directory}")
    return path


def read_manifest(directory: str) -> Dict[str, Any]:
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestMismatch(-1, f"cannot read {path}: {e}") from e


def read_dataset(directory: str, sources: Optional[Sequence[str]] = None) -> Tuple[List[AmssTriple], Dict[str, Any]]:
    """
    Inverse of write_dataset; descriptions are parsed over the given source vocabulary.

    Returns:
        (triples in index order, manifest dict)

    Raises:
        ManifestMismatch: If a listed WAV is missing or a WAV pair is not listed
    """
    manifest = read_manifest(directory)
    entries = sorted(manifest.get("entries", []), key=lambda e: e["index"])
    listed = {int(e["index"]) for e in entries}

    for name in os.listdir(directory):
        match = _PAIR_PATTERN.match(name)
        if match and int(match.group(1)) not in listed:
            raise ManifestMismatch(int(match.group(1)), f"{name} is not listed in the manifest")

    cfg = config.get_config()
    grammar = default_grammar(sources if sources is not None else cfg.sources)
    sample_rate = int(manifest.get("sample_rate", cfg.sample_rate))
    triples = []
    for entry in entries:
        index = int(entry["index"])
        paths = [os.path.join(directory, f"{index:04d}_{part}.wav") for part in ("input", "target")]
        for p in paths:
            if not os.path.exists(p):
                raise ManifestMismatch(index, f"missing {os.path.basename(p)}")
        a = read_wav(paths[0], sample_rate, allow_any_rate=False)
        a_prime = read_wav(paths[1], sample_rate, allow_any_rate=False)
        triples.append(AmssTriple(
            a, a_prime, entry["description"], entry["task"], entry.get("seed"),
            parse(entry["description"], grammar),
        ))
    logger.debug(f"Read {len(triples)} triples from {directory}")
    return triples, manifest


# --- CHECKPOINTS ---

def save_checkpoint(path: str, tensors: "OrderedDict[str, np.ndarray]", header: Mapping[str, Any]) -> None:
    """
    Binary container: magic, uint32 version, uint32 header length, JSON header,
    then every tensor as little-endian float64 in declared order.
    """
    meta = dict(header)
    meta["tensors"] = [[name, list(np.shape(value))] for name, value in tensors.items()]
    header_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for value in tensors.values():
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    logger.info(f"Checkpoint saved: {path} ({len(tensors)} tensors)")


def load_checkpoint(path: str) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    """
    Raises:
        CheckpointError: On bad magic, unknown version or truncated payload
    """
    try:
        with open(path, 'rb') as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not an AMSS checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    try:
        version, header_len = struct.unpack_from("<II", blob, offset)
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated header") from e
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset += 8
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header") from e
    offset += header_len

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: payload truncated at tensor {name}")
        tensors[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return header, tensors
