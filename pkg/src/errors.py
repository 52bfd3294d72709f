"""
Exception hierarchy for amsskit.

Every domain failure derives from AmssError so the CLI can map it to exit code 1.
Fields named in the messages are kept as attributes for tests and callers.
"""

from typing import Iterable, Optional


class AmssError(Exception):
    """Base class for all domain errors."""


class ConfigError(AmssError):
    pass


# --- AUDIO MANIPULATION LANGUAGE ---

class AmlError(AmssError):
    pass


class AmlSyntaxError(AmlError):
    """Raised when a query cannot be derived from the grammar."""

    def __init__(self, expected: Iterable[str], got: Optional[str], position: int) -> None:
        self.expected = sorted(set(expected))
        self.got = got
        self.position = position
        shown = "end of query" if got is None else repr(got)
        super().__init__(
            f"syntax error at token {position}: expected one of {self.expected}, got {shown}"
        )


class UnknownWord(AmlSyntaxError):
    """A token that is not a terminal of the grammar at all."""

    def __init__(self, token: str, position: int, expected: Iterable[str] = ()) -> None:
        self.token = token
        super().__init__(expected, token, position)
        self.args = (f"unknown word {token!r} at token {position}",)


class InvalidDescription(AmlError, ValueError):
    """An AST or plan whose fields contradict each other."""


class UnknownSource(AmlError):
    def __init__(self, name: str, position: Optional[int] = None) -> None:
        self.name = name
        self.position = position
        where = f" at token {position}" if position is not None else ""
        super().__init__(f"unknown source {name!r}{where}")


class GrammarError(AmlError):
    pass


class GrammarNotFinite(GrammarError):
    def __init__(self, cycle: Iterable[str]) -> None:
        self.cycle = list(cycle)
        super().__init__(f"grammar is recursive: {' -> '.join(self.cycle)}")


class AmbiguousParse(AmlError):
    def __init__(self, text: str, count: int) -> None:
        self.text = text
        self.count = count
        super().__init__(f"query {text!r} has {count} derivations")


class MissingLevelEntry(AmlError):
    def __init__(self, task: str, level: str) -> None:
        self.task = task
        self.level = level
        super().__init__(f"level table has no entry for task={task} level={level}")


# --- SIGNAL PROCESSING ---

class DspError(AmssError):
    pass


class LengthMismatch(DspError):
    pass


class PanOutOfRange(DspError):
    pass


class CutoffOutOfRange(DspError):
    pass


class InvalidHop(DspError):
    pass


class TooShort(DspError):
    pass


class UnknownTarget(DspError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"target source {name!r} is not a stem of the multitrack")


class SampleRateError(DspError):
    pass


# --- TRIPLE GENERATION / DATASETS ---

class TripleError(AmssError, ValueError):
    pass


class SegmentTooLong(TripleError):
    pass


class ManifestMismatch(AmssError):
    def __init__(self, index: int, reason: str) -> None:
        self.index = index
        super().__init__(f"dataset entry {index:04d}: {reason}")


# --- MODEL ---

class ModelError(AmssError):
    pass


class ShapeMismatch(ModelError):
    pass


class HeadsDontDivide(ModelError):
    def __init__(self, channels: int, heads: int) -> None:
        self.channels = channels
        self.heads = heads
        super().__init__(f"{channels} channels cannot be split into {heads} heads")


class EmptyQuery(ModelError):
    pass


class AudioTooShort(ModelError):
    pass


class NonFiniteLoss(ModelError):
    def __init__(self, step: int, value: float) -> None:
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value} at step {step}")


class CheckpointError(ModelError):
    pass


class TrainingError(ModelError, ValueError):
    pass


# --- METRICS ---

class MetricsError(AmssError):
    pass


class ZeroReference(MetricsError):
    pass


class EmptyTaskBucket(MetricsError):
    def __init__(self, task: str, source: str) -> None:
        self.task = task
        self.source = source
        super().__init__(f"no evaluation items for task={task} source={source}")
