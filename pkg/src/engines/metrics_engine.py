"""
Metrics Engine.

SDR for separate/mute buckets, RMSE over MFCCs for the other seven tasks,
the reference loss (score of a system that returns its input) and the
benchmark report with its pandas table.
"""

import json
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import config
from engines.aml_engine import Direction, Grammar, default_grammar, interpret, parse
from engines.dsp_engine import AudioTrack, MultiTrack, apply_plan, mfcc, mix
from engines.triple_engine import AmssTriple
from errors import EmptyTaskBucket, LengthMismatch, MetricsError, ZeroReference

logger = logging.getLogger(__name__)

SDR_CAP_DB = 300.0
SDR_TASKS = ("separate", "mute")
METRICS = ("auto", "sdr", "rmse-mfcc")

BucketKey = Tuple[str, str]


# --- METRICS ---

def _check_lengths(ref: AudioTrack, est: AudioTrack) -> None:
    if ref.length != est.length:
        raise LengthMismatch(f"reference has {ref.length} samples, estimate {est.length}")


def sdr(ref: AudioTrack, est: AudioTrack) -> float:
    """
    Energy-ratio SDR over both channels jointly, in dB.

    Returns SDR_CAP_DB when the estimate is exact; values above the cap are clipped.

    Raises:
        ZeroReference: If the reference is all zeros
    """
    _check_lengths(ref, est)
    signal_energy = float(np.sum(ref.samples ** 2))
    if signal_energy == 0.0:
        raise ZeroReference("SDR is undefined for an all-zero reference")
    error_energy = float(np.sum((ref.samples - est.samples) ** 2))
    if error_energy == 0.0:
        return SDR_CAP_DB
    return min(10.0 * np.log10(signal_energy / error_energy), SDR_CAP_DB)


def rmse_mfcc(ref: AudioTrack, est: AudioTrack, settings: Optional[config.MfccSettings] = None) -> float:
    """Root mean square of the MFCC difference over channels, frames and coefficients."""
    _check_lengths(ref, est)
    diff = mfcc(ref, settings) - mfcc(est, settings)
    return float(np.sqrt(np.mean(diff ** 2)))


def metric_for_task(task: str, metric: str = "auto") -> str:
    if metric not in METRICS:
        raise MetricsError(f"unknown metric '{metric}', expected one of {METRICS}")
    if metric != "auto":
        return metric
    return "sdr" if task in SDR_TASKS else "rmse-mfcc"


def score(metric: str, ref: AudioTrack, est: AudioTrack, mfcc_settings: Optional[config.MfccSettings] = None) -> float:
    return sdr(ref, est) if metric == "sdr" else rmse_mfcc(ref, est, mfcc_settings)


def is_silent(audio: AudioTrack) -> bool:
    return not np.any(audio.samples)


# --- SYSTEMS ---

def input_digest(audio: AudioTrack) -> str:
    return hashlib.sha256(np.ascontiguousarray(audio.samples).tobytes()).hexdigest()


class IdentitySystem:
    """Returns the input unchanged; its score is the reference loss."""
    name = "identity"

    def __call__(self, audio: AudioTrack, query: str) -> AudioTrack:
        return audio


class SilenceSystem:
    name = "silence"

    def __call__(self, audio: AudioTrack, query: str) -> AudioTrack:
        return AudioTrack.zeros(audio.length, audio.sample_rate)


class OracleSystem:
    """
    Perfect system.

    With stems it re-renders the ground truth through apply_plan (returning the clean
    mixture for removal queries); otherwise it looks up the stored target by
    (query, input digest). Stems only describe inputs mixed from those very stems,
    so any other input is rejected.
    """
    name = "oracle"

    def __init__(self, triples: Sequence[AmssTriple] = (), stems: Optional[MultiTrack] = None,
                 cfg: Optional[config.ToolConfig] = None) -> None:
        self.stems = stems
        self.cfg = cfg or config.get_config()
        self.grammar = default_grammar(self.cfg.sources)
        self.targets = {(t.description, input_digest(t.input)): t.target for t in triples}

    def _from_stems(self, audio: AudioTrack, query: str) -> AudioTrack:
        plan = interpret(parse(query, self.grammar), self.cfg.level_table)
        clean = mix(self.stems)
        rendered = apply_plan(self.stems, plan, self.cfg.reverb)
        expected_input, target = (rendered, clean) if plan.direction == Direction.REMOVE else (clean, rendered)
        if not expected_input.equals(audio):
            raise MetricsError(
                f"oracle stems do not produce the input of {query!r}; "
                "stems only apply to datasets generated from them without augmentation"
            )
        return target

    def __call__(self, audio: AudioTrack, query: str) -> AudioTrack:
        if self.stems is not None:
            return self._from_stems(audio, query)
        try:
            return self.targets[(query, input_digest(audio))]
        except KeyError:
            raise MetricsError(f"oracle has no stored target for query {query!r}") from None


class ModelSystem:
    """Runs the network forward pass with fixed parameters."""
    name = "model"

    def __init__(self, params: Any) -> None:
        from network.amss_net import forward
        self._forward = forward
        self.params = params

    def __call__(self, audio: AudioTrack, query: str) -> AudioTrack:
        return self._forward(audio, query, self.params)


System = Callable[[AudioTrack, str], AudioTrack]


# --- REPORT ---

def _finite_or_none(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


@dataclass
class BenchmarkRow:
    task: str
    source: str
    metric: str
    mean: float
    std: float
    reference_loss: float
    n_items: int
    run_scores: List[float] = field(default_factory=list)
    n_skipped: int = 0


@dataclass
class BenchmarkReport:
    rows: Dict[BucketKey, BenchmarkRow]
    metadata: Dict[str, Any]

    def to_frame(self) -> pd.DataFrame:
        records = [
            {
                "task": r.task, "source": r.source, "metric": r.metric,
                "mean": r.mean, "std": r.std, "reference_loss": r.reference_loss,
                "n_items": r.n_items,
            }
            for r in self.rows.values()
        ]
        return pd.DataFrame.from_records(
            records, columns=["task", "source", "metric", "mean", "std", "reference_loss", "n_items"]
        )

    def to_dict(self) -> Dict[str, Any]:
        # JSON has no NaN: buckets without scorable items report null.
        return {
            "metadata": self.metadata,
            "rows": [
                {
                    "task": r.task, "source": r.source, "metric": r.metric,
                    "mean": _finite_or_none(r.mean), "std": _finite_or_none(r.std),
                    "reference_loss": _finite_or_none(r.reference_loss),
                    "n_items": r.n_items, "n_skipped": r.n_skipped,
                    "run_scores": [_finite_or_none(s) for s in r.run_scores],
                }
                for r in self.rows.values()
            ],
        }

    def to_json(self, path: Optional[str] = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path:
            try:
                with open(path, 'w', encoding='utf-8') as f:
                    f.write(text)
            except OSError as e:
                raise MetricsError(f"cannot write report {path}: {e}") from e
            logger.info(f"Report written to {path}")
        return text

    def to_table(self) -> pd.DataFrame:
        """
        Tasks x sources grid: per task, a system row of 'mean ± std' cells and a
        'reference loss' row; buckets absent from the report are left blank.
        """
        system = self.metadata.get("system", "system")
        tasks = [t for t in config.TASK_IDS if any(r.task == t for r in self.rows.values())]
        sources: List[str] = []
        for r in self.rows.values():
            if r.source not in sources:
                sources.append(r.source)

        def cell(value: float, spread: Optional[float] = None) -> str:
            if not np.isfinite(value):
                return "n/a"
            return f"{value:.3f}" if spread is None else f"{value:.3f} ± {spread:.3f}"

        index, cells = [], []
        for task in tasks:
            row_system, row_reference = [], []
            for source in sources:
                r = self.rows.get((task, source))
                row_system.append(cell(r.mean, r.std) if r else "")
                row_reference.append(cell(r.reference_loss) if r else "")
            index.extend([(task, system), (task, "reference loss")])
            cells.extend([row_system, row_reference])
        return pd.DataFrame(
            cells, index=pd.MultiIndex.from_tuples(index, names=["task", "row"]), columns=sources,
        )

    def format_table(self) -> str:
        return self.to_table().to_string()


# --- BENCHMARK ---

def bucket_of(triple: AmssTriple, grammar: Optional[Grammar] = None) -> BucketKey:
    desc = triple.description_ast or parse(triple.description, grammar)
    return triple.task, ",".join(desc.targets)


def _aggregate(metric: str, values: Sequence[float]) -> float:
    if not len(values):
        return float("nan")
    # SDR: median over tracks; RMSE-MFCC: mean over tracks.
    return float(np.median(values)) if metric == "sdr" else float(np.mean(values))


def evaluate_benchmark(
    system: System,
    items: Sequence[AmssTriple],
    pairs: Optional[Sequence[BucketKey]] = None,
    metric: str = "auto",
    seeds: Sequence[int] = (0,),
    jobs: int = 1,
    config_hash: Optional[str] = None,
    cfg: Optional[config.ToolConfig] = None,
) -> BenchmarkReport:
    """
    Scores a system over (task, source) buckets.

    SDR is undefined against a silent target (e.g. every source muted), so such
    items are left out of SDR buckets and counted in n_skipped instead.

    Args:
        system: Callable (input audio, query) -> estimate
        items: Evaluation triples
        pairs: Buckets to report; inferred from items when None
        metric: auto | sdr | rmse-mfcc
        seeds: One run per seed (passed to system.reseed when the system has one)
        jobs: Worker threads for per-triple evaluation
        config_hash: Stamped into the metadata; defaults to the hash of cfg
        cfg: MFCC settings and source vocabulary; defaults to the tool configuration

    Returns:
        BenchmarkReport with mean/std over runs and the reference loss per bucket

    Raises:
        EmptyTaskBucket: If a requested bucket holds no triples
    """
    cfg = cfg or config.get_config()
    grammar = default_grammar(cfg.sources)
    buckets: Dict[BucketKey, List[AmssTriple]] = {}
    for triple in items:
        buckets.setdefault(bucket_of(triple, grammar), []).append(triple)

    keys = list(pairs) if pairs is not None else sorted(buckets)
    for task, source in keys:
        if not buckets.get((task, source)):
            raise EmptyTaskBucket(task, source)

    metrics_by_key = {key: metric_for_task(key[0], metric) for key in keys}
    skipped: Dict[BucketKey, int] = {key: 0 for key in keys}
    work: List[Tuple[BucketKey, AmssTriple]] = []
    for key in keys:
        for triple in buckets[key]:
            if metrics_by_key[key] == "sdr" and is_silent(triple.target):
                skipped[key] += 1
                continue
            work.append((key, triple))
    if any(skipped.values()):
        logger.warning(f"Skipped {sum(skipped.values())} triples with a silent SDR reference")

    def reference(job: Tuple[BucketKey, AmssTriple]) -> float:
        key, triple = job
        return score(metrics_by_key[key], triple.target, triple.input, cfg.mfcc)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        reference_scores = list(pool.map(reference, work))

        run_scores: Dict[BucketKey, List[float]] = {key: [] for key in keys}
        for seed in seeds:
            if hasattr(system, "reseed"):
                system.reseed(seed)

            def evaluate(job: Tuple[BucketKey, AmssTriple]) -> float:
                key, triple = job
                estimate = system(triple.input, triple.description)
                return score(metrics_by_key[key], triple.target, estimate, cfg.mfcc)

            scores = list(pool.map(evaluate, work))
            for key in keys:
                values = [s for (k, _), s in zip(work, scores) if k == key]
                run_scores[key].append(_aggregate(metrics_by_key[key], values))
            logger.debug(f"Benchmark run seed={seed} finished over {len(work)} triples")

    rows: Dict[BucketKey, BenchmarkRow] = {}
    for key in keys:
        refs = [r for (k, _), r in zip(work, reference_scores) if k == key]
        runs = np.asarray(run_scores[key])
        rows[key] = BenchmarkRow(
            task=key[0], source=key[1], metric=metrics_by_key[key],
            mean=float(np.mean(runs)), std=float(np.std(runs)),
            reference_loss=_aggregate(metrics_by_key[key], refs),
            n_items=len(refs), run_scores=[float(x) for x in runs],
            n_skipped=skipped[key],
        )

    metadata = {
        "metric": metric,
        "n_runs": len(seeds),
        "seeds": [int(s) for s in seeds],
        "config_hash": config_hash or cfg.config_hash,
        "system": getattr(system, "name", type(system).__name__),
        "skipped_silent_references": sum(skipped.values()),
    }
    logger.info(f"Benchmark finished: {len(rows)} buckets, {len(seeds)} runs")
    return BenchmarkReport(rows, metadata)
