"""
Triple Generation Engine.

Samples a generator, draws a query from its subgrammar and renders the
(input, target, description) triple with the DSP oracle. Removal tasks swap
input and target so the model learns to undo the effect.
"""

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

import config
from engines.aml_engine import AmssDescription, Grammar, Task, build_grammar, generate_random, interpret
from engines.dsp_engine import AudioTrack, MultiTrack, apply_plan, mix
from errors import LengthMismatch, SampleRateError, SegmentTooLong, TripleError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TripleGenerator:
    """A task-specific subgrammar; removal marks the reversed (swapped) generation."""
    grammar: Grammar
    task: Task
    removal: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "task", Task(self.task))
        if self.removal != (self.task == Task.DEREVERB):
            raise TripleError(f"removal must be set exactly for dereverb, got task={self.task.value} removal={self.removal}")

    @classmethod
    def for_task(cls, task: Task, sources: Sequence[str]) -> "TripleGenerator":
        task = Task(task)
        return cls(build_grammar(sources, [task]), task, task == Task.DEREVERB)


def build_generators(tasks: Optional[Iterable[str]] = None, sources: Optional[Sequence[str]] = None) -> List[TripleGenerator]:
    """One generator per task id (all nine by default) over the configured sources."""
    sources = sources if sources is not None else config.get_config().sources
    task_ids = list(tasks) if tasks is not None else list(config.TASK_IDS)
    return [TripleGenerator.for_task(Task(t), sources) for t in task_ids]


@dataclass(frozen=True, eq=False)
class AmssTriple:
    input: AudioTrack
    target: AudioTrack
    description: str
    task: str
    seed: Optional[int] = None
    description_ast: Optional[AmssDescription] = None

    def __post_init__(self) -> None:
        if self.input.length != self.target.length:
            raise LengthMismatch(f"input has {self.input.length} samples, target {self.target.length}")
        if self.input.sample_rate != self.target.sample_rate:
            raise SampleRateError("input and target sample rates differ")

    def equals(self, other: "AmssTriple") -> bool:
        return (
            self.description == other.description
            and self.task == other.task
            and self.input.equals(other.input)
            and self.target.equals(other.target)
        )


def generate_triple(
    mt: MultiTrack,
    gens: Sequence[TripleGenerator],
    rng: np.random.Generator,
    cfg: Optional[config.ToolConfig] = None,
    seed: Optional[int] = None,
) -> AmssTriple:
    """
    Generates one AMSS triple (A, A', S).

    Args:
        mt: Multitrack whose stems cover every source the generators can name
        gens: Candidate generators, sampled uniformly
        rng: Seeded random stream (consumed for generator choice and query)
        cfg: Level table and reverb settings; defaults to the tool configuration
        seed: Recorded on the triple for reproduction

    Returns:
        AmssTriple; for removal generators input and target are swapped
    """
    if not gens:
        raise TripleError("at least one triple generator is required")
    cfg = cfg or config.get_config()
    g = gens[int(rng.integers(len(gens)))]
    description, desc = generate_random(g.grammar, rng)
    plan = interpret(desc, cfg.level_table)

    a = mix(mt)
    a_prime = apply_plan(mt, plan, cfg.reverb)
    if g.removal:
        a, a_prime = a_prime, a
    return AmssTriple(a, a_prime, description, g.task.value, seed, desc)


def augment_multitrack(
    dataset: Sequence[MultiTrack],
    rng: np.random.Generator,
    segment_s: Optional[float] = None,
    settings: Optional[config.AugmentSettings] = None,
) -> MultiTrack:
    """
    Builds a random multitrack: per source, a random track, offset, gain and channel swap.

    Raises:
        SegmentTooLong: If no track holding a source is long enough for the segment
    """
    if not dataset:
        raise TripleError("augmentation needs at least one multitrack")
    settings = settings or config.get_config().augment
    segment_s = settings.segment_s if segment_s is None else segment_s
    sample_rate = dataset[0].sample_rate
    n = int(round(segment_s * sample_rate))

    names: List[str] = []
    for mt in dataset:
        names.extend(name for name in mt.names if name not in names)

    stems = {}
    for name in names:
        candidates = [mt for mt in dataset if name in mt.stems and mt.length >= n]
        if not candidates:
            raise SegmentTooLong(f"no track holds {segment_s}s of '{name}'")
        track = candidates[int(rng.integers(len(candidates)))].stems[name]
        offset = int(rng.integers(track.length - n + 1))
        gain = float(rng.uniform(settings.gain_low, settings.gain_high))
        swap = bool(rng.random() < settings.swap_prob)

        samples = track.samples[:, offset:offset + n] * gain
        if swap:
            samples = samples[::-1]
        stems[name] = AudioTrack(samples, sample_rate)
    return MultiTrack(stems)


def derive_seed(seed: int, index: int) -> int:
    """Per-triple seed, independent of how the batch is scheduled."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _one_triple(
    tracks: Sequence[MultiTrack],
    gens: Sequence[TripleGenerator],
    seed: int,
    augment: bool,
    segment_s: Optional[float],
    cfg: config.ToolConfig,
) -> AmssTriple:
    rng = np.random.default_rng(seed)
    if augment:
        mt = augment_multitrack(tracks, rng, segment_s, cfg.augment)
    else:
        mt = tracks[int(rng.integers(len(tracks)))]
    return generate_triple(mt, gens, rng, cfg, seed)


async def generate_triples_async(
    tracks: Sequence[MultiTrack],
    gens: Sequence[TripleGenerator],
    count: int,
    seed: int,
    jobs: int = 1,
    segment_s: Optional[float] = None,
    augment: bool = True,
    cfg: Optional[config.ToolConfig] = None,
) -> List[AmssTriple]:
    """Runs triple generation on a thread pool; results keep index order."""
    cfg = cfg or config.get_config()
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [
            loop.run_in_executor(
                pool, _one_triple, tracks, gens, derive_seed(seed, i), augment, segment_s, cfg
            )
            for i in range(count)
        ]
        triples = await asyncio.gather(*futures)
    logger.info(f"Generated {count} triples (seed={seed}, jobs={jobs})")
    return list(triples)


def generate_triples(
    tracks: Sequence[MultiTrack],
    gens: Sequence[TripleGenerator],
    count: int,
    seed: int,
    jobs: int = 1,
    segment_s: Optional[float] = None,
    augment: bool = True,
    cfg: Optional[config.ToolConfig] = None,
) -> List[AmssTriple]:
    """
    Batch of `count` triples; triple i is drawn from its own seed derive_seed(seed, i),
    so the output does not depend on `jobs`.
    """
    if count < 0:
        raise TripleError("count must be non-negative")
    if not tracks:
        raise TripleError("no multitracks to generate from")
    return asyncio.run(
        generate_triples_async(tracks, gens, count, seed, jobs, segment_s, augment, cfg)
    )
