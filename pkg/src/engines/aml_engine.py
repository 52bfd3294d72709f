"""
Audio Manipulation Language (AML) Engine.

A finite probabilistic context-free grammar for AMSS queries such as
"apply medium lowpass to vocals, drums". Provides the grammar itself, a
grammar-driven parser, the canonical renderer, seeded random generation,
exhaustive enumeration and interpretation into an executable ManipulationPlan.
"""

import json
import logging
import itertools
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

import config
from errors import (
    AmbiguousParse, AmlSyntaxError, GrammarError, GrammarNotFinite,
    InvalidDescription, MissingLevelEntry, UnknownSource, UnknownWord,
)

logger = logging.getLogger(__name__)

START_SYMBOL = "<desc>"
SOURCES_SYMBOL = "<srcs>"

Production = Tuple[str, ...]


class TaskClass(str, Enum):
    VOLUME_CONTROL = "volume_control"
    VOLUME_CONTROL_MULTI = "volume_control_multi"
    FILTER = "filter"
    DELAY = "delay"


class Task(str, Enum):
    SEPARATE = "separate"
    MUTE = "mute"
    INCREASE_VOLUME = "increase_volume"
    DECREASE_VOLUME = "decrease_volume"
    PAN_LEFT = "pan_left"
    PAN_RIGHT = "pan_right"
    LOWPASS = "lowpass"
    HIGHPASS = "highpass"
    DEREVERB = "dereverb"

    @property
    def task_class(self) -> TaskClass:
        return TASK_CLASSES[self]

    @property
    def leveled(self) -> bool:
        return self not in (Task.SEPARATE, Task.MUTE)


class Level(str, Enum):
    LIGHT = "light"
    MEDIUM = "medium"
    HEAVY = "heavy"


class Transform(str, Enum):
    MASK = "mask"
    MASK_OTHERS = "mask_others"
    GAIN = "gain"
    PAN = "pan"
    LOWPASS = "lowpass"
    HIGHPASS = "highpass"
    REVERB = "reverb"


class Direction(str, Enum):
    APPLY = "apply"
    REMOVE = "remove"


TASK_CLASSES: Dict[Task, TaskClass] = {
    Task.SEPARATE: TaskClass.VOLUME_CONTROL,
    Task.MUTE: TaskClass.VOLUME_CONTROL,
    Task.INCREASE_VOLUME: TaskClass.VOLUME_CONTROL,
    Task.DECREASE_VOLUME: TaskClass.VOLUME_CONTROL,
    Task.PAN_LEFT: TaskClass.VOLUME_CONTROL_MULTI,
    Task.PAN_RIGHT: TaskClass.VOLUME_CONTROL_MULTI,
    Task.LOWPASS: TaskClass.FILTER,
    Task.HIGHPASS: TaskClass.FILTER,
    Task.DEREVERB: TaskClass.DELAY,
}

TASK_TRANSFORMS: Dict[Task, Transform] = {
    Task.SEPARATE: Transform.MASK_OTHERS,
    Task.MUTE: Transform.MASK,
    Task.INCREASE_VOLUME: Transform.GAIN,
    Task.DECREASE_VOLUME: Transform.GAIN,
    Task.PAN_LEFT: Transform.PAN,
    Task.PAN_RIGHT: Transform.PAN,
    Task.LOWPASS: Transform.LOWPASS,
    Task.HIGHPASS: Transform.HIGHPASS,
    Task.DEREVERB: Transform.REVERB,
}

# Terminal that identifies the task inside a derivation (outside <srcs>).
TASK_KEYWORDS: Dict[str, Task] = {
    "separate": Task.SEPARATE,
    "mute": Task.MUTE,
    "increase": Task.INCREASE_VOLUME,
    "decrease": Task.DECREASE_VOLUME,
    "left": Task.PAN_LEFT,
    "right": Task.PAN_RIGHT,
    "lowpass": Task.LOWPASS,
    "highpass": Task.HIGHPASS,
    "reverb": Task.DEREVERB,
}

LEVEL_WORDS: Dict[str, Level] = {
    "light": Level.LIGHT, "medium": Level.MEDIUM, "heavy": Level.HEAVY,
    "lightly": Level.LIGHT, "moderately": Level.MEDIUM, "heavily": Level.HEAVY,
}

ADVERBS: Dict[Level, str] = {Level.LIGHT: "lightly", Level.MEDIUM: "moderately", Level.HEAVY: "heavily"}


def is_nonterminal(symbol: str) -> bool:
    return symbol.startswith("<") and symbol.endswith(">") and len(symbol) > 2


# --- DOMAIN TYPES ---

@dataclass(frozen=True)
class Grammar:
    """
    A finite probabilistic CFG.

    rules maps each non-terminal to its alternatives; rule_weights optionally
    maps a non-terminal to one positive weight per alternative (uniform otherwise).
    """
    rules: Dict[str, Tuple[Production, ...]]
    start_symbol: str = START_SYMBOL
    rule_weights: Optional[Dict[str, Tuple[float, ...]]] = None

    def __post_init__(self) -> None:
        if self.start_symbol not in self.rules:
            raise GrammarError(f"start symbol {self.start_symbol} has no production")
        for lhs, alternatives in self.rules.items():
            if not is_nonterminal(lhs):
                raise GrammarError(f"rule head {lhs!r} is not a non-terminal")
            if not alternatives:
                raise GrammarError(f"{lhs} has no alternatives")
            for production in alternatives:
                if not production:
                    raise GrammarError(f"{lhs} has an empty production")
                for symbol in production:
                    if is_nonterminal(symbol) and symbol not in self.rules:
                        raise GrammarError(f"{symbol} (used by {lhs}) has no production")
        for lhs, weights in (self.rule_weights or {}).items():
            if lhs not in self.rules:
                raise GrammarError(f"weights given for unknown non-terminal {lhs}")
            if len(weights) != len(self.rules[lhs]):
                raise GrammarError(f"{lhs} has {len(self.rules[lhs])} alternatives but {len(weights)} weights")
            if any(w <= 0 for w in weights):
                raise GrammarError(f"weights of {lhs} must be positive")

    @property
    def terminals(self) -> frozenset:
        return frozenset(
            symbol
            for alternatives in self.rules.values()
            for production in alternatives
            for symbol in production
            if not is_nonterminal(symbol)
        )

    @property
    def sources(self) -> Tuple[str, ...]:
        """Source names reachable through <srcs>, in first-appearance order."""
        if SOURCES_SYMBOL not in self.rules:
            return ()
        seen: List[str] = []
        for production in self.rules[SOURCES_SYMBOL]:
            for symbol in production:
                if symbol != "," and symbol not in seen:
                    seen.append(symbol)
        return tuple(seen)

    def probabilities(self, symbol: str) -> np.ndarray:
        n = len(self.rules[symbol])
        weights = (self.rule_weights or {}).get(symbol)
        if weights is None:
            return np.full(n, 1.0 / n)
        w = np.asarray(weights, dtype=np.float64)
        return w / w.sum()

    def restricted_to(self, symbol: str) -> "Grammar":
        """Returns the grammar rooted at `symbol`, keeping only reachable rules."""
        if symbol not in self.rules:
            raise GrammarError(f"{symbol} has no production")
        reachable: List[str] = []
        stack = [symbol]
        while stack:
            current = stack.pop()
            if current in reachable:
                continue
            reachable.append(current)
            for production in self.rules[current]:
                stack.extend(s for s in production if is_nonterminal(s))
        weights = {k: v for k, v in (self.rule_weights or {}).items() if k in reachable}
        return Grammar(
            rules={k: self.rules[k] for k in self.rules if k in reachable},
            start_symbol=symbol,
            rule_weights=weights or None,
        )

    def check_finite(self) -> None:
        """Raises GrammarNotFinite if any non-terminal can derive itself."""
        WHITE, GREY, BLACK = 0, 1, 2
        color = {nt: WHITE for nt in self.rules}
        path: List[str] = []

        def visit(nt: str) -> None:
            color[nt] = GREY
            path.append(nt)
            for production in self.rules[nt]:
                for symbol in production:
                    if not is_nonterminal(symbol):
                        continue
                    if color[symbol] == GREY:
                        cycle = path[path.index(symbol):] + [symbol]
                        raise GrammarNotFinite(cycle)
                    if color[symbol] == WHITE:
                        visit(symbol)
            path.pop()
            color[nt] = BLACK

        for nt in self.rules:
            if color[nt] == WHITE:
                visit(nt)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "start_symbol": self.start_symbol,
            "rules": {lhs: [list(p) for p in alts] for lhs, alts in self.rules.items()},
        }
        if self.rule_weights:
            data["rule_weights"] = {k: list(v) for k, v in self.rule_weights.items()}
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Grammar":
        try:
            rules = {lhs: tuple(tuple(p) for p in alts) for lhs, alts in data["rules"].items()}
        except (KeyError, TypeError, AttributeError) as e:
            raise GrammarError(f"malformed grammar definition: {e}") from e
        weights = data.get("rule_weights")
        return cls(
            rules=rules,
            start_symbol=data.get("start_symbol", START_SYMBOL),
            rule_weights={k: tuple(float(x) for x in v) for k, v in weights.items()} if weights else None,
        )


@dataclass(frozen=True)
class AmssDescription:
    """Parsed query: task class, task, option level and ordered target sources."""
    task_class: TaskClass
    task: Task
    level: Level
    targets: Tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.targets:
            raise InvalidDescription("an AMSS description needs at least one target source")
        if len(set(self.targets)) != len(self.targets):
            raise InvalidDescription(f"duplicate target sources in {self.targets}")
        if TASK_CLASSES[self.task] != self.task_class:
            raise InvalidDescription(f"task {self.task.value} does not belong to class {self.task_class.value}")
        if not self.task.leveled and self.level != Level.MEDIUM:
            raise InvalidDescription(f"task {self.task.value} takes no level option")

    @classmethod
    def of(cls, task: Task, targets: Sequence[str], level: Level = Level.MEDIUM) -> "AmssDescription":
        task = Task(task)
        return cls(TASK_CLASSES[task], task, Level(level), tuple(targets))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_class": self.task_class.value,
            "task": self.task.value,
            "level": self.level.value,
            "targets": list(self.targets),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AmssDescription":
        task = Task(data["task"])
        task_class = TaskClass(data.get("task_class", TASK_CLASSES[task].value))
        return cls(task_class, task, Level(data.get("level", Level.MEDIUM.value)), tuple(data["targets"]))


@dataclass(frozen=True)
class ManipulationPlan:
    """Executable DSP description: transform f, its parameters and targets τ."""
    transform: Transform
    params: Dict[str, float]
    targets: Tuple[str, ...]
    direction: Direction = Direction.APPLY
    side: Optional[str] = None

    def __post_init__(self) -> None:
        if self.direction == Direction.REMOVE and self.transform != Transform.REVERB:
            raise InvalidDescription("only reverb can be removed")
        if self.transform == Transform.PAN and self.side not in ("left", "right"):
            raise InvalidDescription("a pan plan needs side 'left' or 'right'")

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "transform": self.transform.value,
            "params": dict(self.params),
            "targets": list(self.targets),
            "direction": self.direction.value,
        }
        if self.side:
            data["side"] = self.side
        return data


# --- GRAMMAR CONSTRUCTION ---

def source_sequences(sources: Sequence[str]) -> List[Production]:
    """Every non-empty duplicate-free ordered sequence, comma-separated (15 for three sources)."""
    productions: List[Production] = []
    for size in range(1, len(sources) + 1):
        for perm in itertools.permutations(sources, size):
            tokens: List[str] = []
            for i, name in enumerate(perm):
                if i:
                    tokens.append(",")
                tokens.append(name)
            productions.append(tuple(tokens))
    return productions


def build_grammar(sources: Sequence[str], tasks: Optional[Iterable[Any]] = None) -> Grammar:
    """
    Builds the full AML grammar, or the subgrammar covering only `tasks`.

    Args:
        sources: Target vocabulary for <srcs>
        tasks: Task ids or Task members; None means all nine tasks

    Returns:
        Grammar rooted at <desc>
    """
    if not sources:
        raise GrammarError("source vocabulary is empty")
    selected = {Task(t) for t in tasks} if tasks is not None else set(Task)
    if not selected:
        raise GrammarError("no task selected")

    rules: Dict[str, List[Production]] = {}
    desc: List[Production] = []
    needs_adverb = needs_opt = False

    vc: List[Production] = []
    if Task.SEPARATE in selected:
        vc.append(("separate", SOURCES_SYMBOL))
    if Task.MUTE in selected:
        vc.append(("mute", SOURCES_SYMBOL))
    vol = [w for w, t in (("increase", Task.INCREASE_VOLUME), ("decrease", Task.DECREASE_VOLUME)) if t in selected]
    if vol:
        rules["<vol-dir>"] = [(w,) for w in vol]
        vc.append(("<vol-dir>", "the", "volume", "of", SOURCES_SYMBOL))
        vc.append(("<vol-dir>", "the", "volume", "of", SOURCES_SYMBOL, "<adv>"))
        needs_adverb = True
    if vc:
        rules["<cls-vc>"] = vc
        desc.append(("<cls-vc>",))

    sides = [w for w, t in (("left", Task.PAN_LEFT), ("right", Task.PAN_RIGHT)) if t in selected]
    if sides:
        rules["<side>"] = [(w,) for w in sides]
        rules["<cls-vcm>"] = [
            ("pan", SOURCES_SYMBOL, "to", "the", "<side>"),
            ("pan", SOURCES_SYMBOL, "to", "the", "<side>", "<adv>"),
        ]
        desc.append(("<cls-vcm>",))
        needs_adverb = True

    filters = [w for w, t in (("lowpass", Task.LOWPASS), ("highpass", Task.HIGHPASS)) if t in selected]
    if filters:
        rules["<filter>"] = [(w,) for w in filters]
        rules["<opt-filter>"] = [("<opt>", "<filter>"), ("<filter>",)]
        rules["<cls-f>"] = [("apply", "<opt-filter>", "to", SOURCES_SYMBOL)]
        desc.append(("<cls-f>",))
        needs_opt = True

    if Task.DEREVERB in selected:
        rules["<opt-reverb>"] = [("<opt>", "reverb"), ("reverb",)]
        rules["<cls-d>"] = [("remove", "<opt-reverb>", "from", SOURCES_SYMBOL)]
        desc.append(("<cls-d>",))
        needs_opt = True

    if needs_adverb:
        rules["<adv>"] = [(ADVERBS[lv],) for lv in Level]
    if needs_opt:
        rules["<opt>"] = [(lv.value,) for lv in Level]
    rules[SOURCES_SYMBOL] = source_sequences(list(sources))
    rules[START_SYMBOL] = desc

    ordered = {START_SYMBOL: tuple(rules.pop(START_SYMBOL))}
    ordered.update({k: tuple(v) for k, v in rules.items()})
    return Grammar(rules=ordered, start_symbol=START_SYMBOL)


@lru_cache(maxsize=32)
def _cached_grammar(sources: Tuple[str, ...], tasks: Optional[Tuple[str, ...]]) -> Grammar:
    return build_grammar(sources, tasks)


def default_grammar(sources: Optional[Sequence[str]] = None, tasks: Optional[Iterable[Any]] = None) -> Grammar:
    """Full (or task-restricted) grammar over the configured source vocabulary."""
    vocab = tuple(sources) if sources is not None else config.get_config().sources
    task_key = tuple(sorted(Task(t).value for t in tasks)) if tasks is not None else None
    return _cached_grammar(vocab, task_key)


def load_grammar(path: str) -> Grammar:
    """
    Loads a grammar from JSON.

    Accepts either {"sources": [...], "tasks": [...]} (built with build_grammar)
    or an explicit {"rules": ..., "start_symbol": ..., "rule_weights": ...}.
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise GrammarError(f"cannot read grammar {path}: {e}") from e
    if "rules" in data:
        return Grammar.from_dict(data)
    grammar = build_grammar(data["sources"], data.get("tasks"))
    weights = data.get("rule_weights")
    if weights:
        grammar = Grammar(
            rules=grammar.rules,
            start_symbol=grammar.start_symbol,
            rule_weights={k: tuple(float(x) for x in v) for k, v in weights.items()},
        )
    return grammar


# --- TOKENS ---

def tokenize(text: str) -> List[str]:
    """Lowercases and splits on whitespace; commas become their own tokens."""
    return text.lower().replace(",", " , ").split()


def join_tokens(tokens: Sequence[str]) -> str:
    return " ".join(tokens).replace(" ,", ",")


# --- PARSING ---

ParseTree = Tuple[str, Any]


class _Parser:
    """Exhaustive backtracking descent over a finite grammar with furthest-failure tracking."""

    def __init__(self, grammar: Grammar, tokens: Sequence[str]) -> None:
        self.grammar = grammar
        self.tokens = list(tokens)
        self.memo: Dict[Tuple[str, int], List[Tuple[ParseTree, int]]] = {}
        self.furthest = -1
        self.expected: set = set()

    def _fail(self, position: int, expected: str) -> None:
        if position > self.furthest:
            self.furthest = position
            self.expected = {expected}
        elif position == self.furthest:
            self.expected.add(expected)

    def derive(self, symbol: str, position: int) -> List[Tuple[ParseTree, int]]:
        if not is_nonterminal(symbol):
            if position < len(self.tokens) and self.tokens[position] == symbol:
                return [((symbol, position), position + 1)]
            self._fail(position, symbol)
            return []

        key = (symbol, position)
        if key in self.memo:
            return self.memo[key]

        results: List[Tuple[ParseTree, int]] = []
        for production in self.grammar.rules[symbol]:
            partial: List[Tuple[List[ParseTree], int]] = [([], position)]
            for part in production:
                extended = []
                for children, pos in partial:
                    for tree, end in self.derive(part, pos):
                        extended.append((children + [tree], end))
                partial = extended
                if not partial:
                    break
            results.extend(((symbol, children), end) for children, end in partial)
        self.memo[key] = results
        return results


def _collect(tree: ParseTree, inside_sources: bool, out: Dict[str, List[str]]) -> None:
    symbol, payload = tree
    if not is_nonterminal(symbol):
        out["sources" if inside_sources else "words"].append(symbol)
        return
    for child in payload:
        _collect(child, inside_sources or symbol == SOURCES_SYMBOL, out)


def _tree_to_description(tree: ParseTree) -> AmssDescription:
    parts: Dict[str, List[str]] = {"words": [], "sources": []}
    _collect(tree, False, parts)
    task = next((TASK_KEYWORDS[w] for w in parts["words"] if w in TASK_KEYWORDS), None)
    if task is None:
        raise GrammarError("derivation names no task keyword")
    level = next((LEVEL_WORDS[w] for w in parts["words"] if w in LEVEL_WORDS), Level.MEDIUM)
    targets = tuple(t for t in parts["sources"] if t != ",")
    return AmssDescription.of(task, targets, level)


def parse_tree(text: str, grammar: Grammar) -> ParseTree:
    """Returns the unique derivation tree of `text` under `grammar`."""
    tokens = tokenize(text)
    parser = _Parser(grammar, tokens)
    complete = []
    for tree, end in parser.derive(grammar.start_symbol, 0):
        if end == len(tokens):
            complete.append(tree)
        else:
            parser._fail(end, "end of query")

    if len(complete) > 1:
        raise AmbiguousParse(text, len(complete))
    if complete:
        return complete[0]

    index = max(parser.furthest, 0)
    got = tokens[index] if index < len(tokens) else None
    position = index + 1
    expected = parser.expected
    if got is not None and got not in grammar.terminals:
        source_slot = bool(expected) and expected <= set(grammar.sources)
        if source_slot or got == "other":
            raise UnknownSource(got, position)
        raise UnknownWord(got, position, expected)
    raise AmlSyntaxError(expected, got, position)


def parse(text: str, grammar: Optional[Grammar] = None) -> AmssDescription:
    """
    Parses a query into its AST.

    Args:
        text: Query such as "apply medium lowpass to vocals, drums"
        grammar: Grammar rooted at <desc>; defaults to the configured full grammar

    Returns:
        AmssDescription (level defaults to Medium when absent)

    Raises:
        UnknownWord, AmlSyntaxError, UnknownSource
    """
    grammar = grammar or default_grammar()
    return _tree_to_description(parse_tree(text, grammar))


def render(desc: AmssDescription) -> str:
    """Canonical surface form; Medium is written explicitly for leveled tasks."""
    srcs = ", ".join(desc.targets)
    task = desc.task
    if task == Task.SEPARATE:
        return f"separate {srcs}"
    if task == Task.MUTE:
        return f"mute {srcs}"
    if task in (Task.INCREASE_VOLUME, Task.DECREASE_VOLUME):
        verb = "increase" if task == Task.INCREASE_VOLUME else "decrease"
        return f"{verb} the volume of {srcs} {ADVERBS[desc.level]}"
    if task in (Task.PAN_LEFT, Task.PAN_RIGHT):
        side = "left" if task == Task.PAN_LEFT else "right"
        return f"pan {srcs} to the {side} {ADVERBS[desc.level]}"
    if task in (Task.LOWPASS, Task.HIGHPASS):
        return f"apply {desc.level.value} {task.value} to {srcs}"
    return f"remove {desc.level.value} reverb from {srcs}"


# --- GENERATION ---

def expand_random(grammar: Grammar, rng: np.random.Generator, symbol: Optional[str] = None) -> List[str]:
    """Recursively expands `symbol` (default: start symbol) into terminal tokens."""
    symbol = symbol or grammar.start_symbol
    if not is_nonterminal(symbol):
        return [symbol]
    alternatives = grammar.rules[symbol]
    choice = int(rng.choice(len(alternatives), p=grammar.probabilities(symbol)))
    tokens: List[str] = []
    for part in alternatives[choice]:
        tokens.extend(expand_random(grammar, rng, part))
    return tokens


def generate_random(grammar: Grammar, rng: np.random.Generator) -> Tuple[str, AmssDescription]:
    """
    Draws one query from a description grammar.

    Identical generator states give identical outputs.

    Returns:
        (query string, AmssDescription of that string)
    """
    grammar.check_finite()
    text = join_tokens(expand_random(grammar, rng))
    return text, parse(text, grammar)


def enumerate_queries(grammar: Grammar) -> List[str]:
    """
    Every string derivable from the start symbol, duplicate-free, sorted.

    Raises:
        GrammarNotFinite: If a recursion cycle exists
    """
    grammar.check_finite()
    memo: Dict[str, List[Production]] = {}

    def expand(symbol: str) -> List[Production]:
        if not is_nonterminal(symbol):
            return [(symbol,)]
        if symbol in memo:
            return memo[symbol]
        out: List[Production] = []
        for production in grammar.rules[symbol]:
            pieces = [expand(part) for part in production]
            for combo in itertools.product(*pieces):
                out.append(tuple(tok for piece in combo for tok in piece))
        memo[symbol] = out
        return out

    return sorted({join_tokens(tokens) for tokens in expand(grammar.start_symbol)})


# --- INTERPRETATION ---

def interpret(desc: AmssDescription, level_table: Optional[Mapping[str, Mapping[str, float]]] = None) -> ManipulationPlan:
    """
    Maps a description onto its DSP plan (transform, parameters, direction).

    Raises:
        MissingLevelEntry: If a leveled task has no (task, level) parameter
    """
    table = level_table if level_table is not None else config.get_config().level_table
    transform = TASK_TRANSFORMS[desc.task]

    params: Dict[str, float] = {}
    if desc.task.leveled:
        try:
            value = float(table[desc.task.value][desc.level.value])
        except KeyError:
            raise MissingLevelEntry(desc.task.value, desc.level.value) from None
        key = {
            Transform.GAIN: "factor",
            Transform.PAN: "amount",
            Transform.LOWPASS: "cutoff_hz",
            Transform.HIGHPASS: "cutoff_hz",
            Transform.REVERB: "decay_s",
        }[transform]
        params[key] = value

    side = None
    if desc.task == Task.PAN_LEFT:
        side = "left"
    elif desc.task == Task.PAN_RIGHT:
        side = "right"

    direction = Direction.REMOVE if desc.task == Task.DEREVERB else Direction.APPLY
    plan = ManipulationPlan(transform, params, desc.targets, direction, side)
    logger.debug(f"Interpreted {desc.task.value}/{desc.level.value} -> {plan.transform.value} {plan.params}")
    return plan
