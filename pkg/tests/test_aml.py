import json
from collections import Counter

import numpy as np
import pytest

from engines.aml_engine import (
    AmssDescription, Direction, Grammar, Level, Task, TaskClass, Transform,
    build_grammar, enumerate_queries, generate_random, interpret, load_grammar,
    parse, parse_tree, render, tokenize,
)
from errors import (
    AmbiguousParse, AmlSyntaxError, GrammarError, GrammarNotFinite,
    MissingLevelEntry, UnknownSource, UnknownWord,
)

SOURCES = ("vocals", "drums", "bass")


@pytest.fixture(scope="module")
def grammar() -> Grammar:
    return build_grammar(SOURCES)


@pytest.fixture(scope="module")
def all_queries(grammar):
    return enumerate_queries(grammar)


# --- PARSE ---

def test_parse_filter_query(grammar):
    desc = parse("apply medium lowpass to vocals, drums", grammar)
    assert desc == AmssDescription(TaskClass.FILTER, Task.LOWPASS, Level.MEDIUM, ("vocals", "drums"))


def test_missing_level_defaults_to_medium(grammar):
    assert parse("apply lowpass to vocals, drums", grammar) == parse("apply medium lowpass to vocals, drums", grammar)
    assert parse("increase the volume of bass", grammar).level == Level.MEDIUM
    assert parse("remove reverb from drums", grammar).level == Level.MEDIUM


def test_parse_is_case_insensitive_and_splits_commas(grammar):
    assert tokenize("Vocals,Drums") == ["vocals", ",", "drums"]
    desc = parse("Apply HEAVY Highpass to Bass,Vocals", grammar)
    assert desc.task == Task.HIGHPASS
    assert desc.level == Level.HEAVY
    assert desc.targets == ("bass", "vocals")


def test_parse_adverbs_and_pan(grammar):
    desc = parse("pan drums to the left heavily", grammar)
    assert desc.task_class == TaskClass.VOLUME_CONTROL_MULTI
    assert desc.task == Task.PAN_LEFT
    assert desc.level == Level.HEAVY
    assert parse("decrease the volume of vocals lightly", grammar).level == Level.LIGHT


def test_unknown_word_reports_position(grammar):
    with pytest.raises(UnknownWord) as exc:
        parse("apply loudpass to drums", grammar)
    assert isinstance(exc.value, AmlSyntaxError)
    assert exc.value.position == 2
    assert exc.value.token == "loudpass"


def test_known_word_in_wrong_place_is_syntax_error(grammar):
    with pytest.raises(AmlSyntaxError) as exc:
        parse("apply medium to drums", grammar)
    assert type(exc.value) is AmlSyntaxError
    assert exc.value.position == 3
    assert exc.value.got == "to"
    assert set(exc.value.expected) == {"lowpass", "highpass"}


def test_duplicate_source_rejected(grammar):
    with pytest.raises(AmlSyntaxError) as exc:
        parse("mute drums, drums", grammar)
    assert exc.value.position == 4


def test_empty_query_expects_a_verb(grammar):
    with pytest.raises(AmlSyntaxError) as exc:
        parse("", grammar)
    assert exc.value.position == 1
    assert exc.value.got is None
    assert "separate" in exc.value.expected


def test_unknown_source(grammar):
    with pytest.raises(UnknownSource) as exc:
        parse("separate guitar", grammar)
    assert exc.value.name == "guitar"
    with pytest.raises(UnknownSource):
        parse("mute other", grammar)


def test_ambiguous_grammar_is_detected():
    g = Grammar({
        "<desc>": (("a", "<x>"), ("<y>", "b")),
        "<x>": (("b",),),
        "<y>": (("a",),),
    })
    with pytest.raises(AmbiguousParse) as exc:
        parse_tree("a b", g)
    assert exc.value.count == 2


# --- RENDER / ENUMERATE ---

def test_render_examples():
    assert render(AmssDescription.of(Task.LOWPASS, ["drums"])) == "apply medium lowpass to drums"
    assert render(AmssDescription.of(Task.MUTE, ["vocals", "drums", "bass"])) == "mute vocals, drums, bass"
    assert render(AmssDescription.of(Task.INCREASE_VOLUME, ["bass"], Level.MEDIUM)) == \
        "increase the volume of bass moderately"
    assert render(AmssDescription.of(Task.DEREVERB, ["drums"], Level.LIGHT)) == "remove light reverb from drums"


def test_enumeration_counts(grammar):
    assert len(enumerate_queries(grammar.restricted_to("<srcs>"))) == 15
    assert enumerate_queries(grammar.restricted_to("<opt>")) == ["heavy", "light", "medium"]
    assert len(enumerate_queries(grammar.restricted_to("<opt-filter>"))) == 8


def test_full_enumeration_sorted_and_unique(all_queries):
    # separate/mute 15 each, volume and pan 120 each, filters 120, reverb 60
    assert len(all_queries) == 450
    assert all_queries == sorted(set(all_queries))


def test_round_trip_over_every_query(grammar, all_queries):
    for query in all_queries:
        desc = parse(query, grammar)
        assert parse(render(desc), grammar) == desc


def test_canonical_forms_are_unique(grammar, all_queries):
    asts = {parse(q, grammar) for q in all_queries}
    canonical = {render(d) for d in asts}
    assert len(asts) == len(canonical) == 345


def test_recursive_grammar_is_not_finite():
    g = Grammar({"<desc>": (("mute", "<a>"),), "<a>": (("x",), ("<b>",)), "<b>": (("<a>", "y"),)})
    with pytest.raises(GrammarNotFinite) as exc:
        enumerate_queries(g)
    assert exc.value.cycle[0] == exc.value.cycle[-1]


def test_undefined_nonterminal_rejected():
    with pytest.raises(GrammarError):
        Grammar({"<desc>": (("mute", "<srcs>"),)})


# --- GENERATION ---

def test_generate_random_is_deterministic(grammar):
    first = [generate_random(grammar, np.random.default_rng(7)) for _ in range(3)]
    second = [generate_random(grammar, np.random.default_rng(7)) for _ in range(3)]
    assert first == second


def test_filter_subgrammar_generates_parsable_queries():
    g = build_grammar(SOURCES, ["lowpass", "highpass"])
    rng = np.random.default_rng(0)
    for _ in range(20):
        text, desc = generate_random(g, rng)
        assert text.startswith("apply ") and " to " in text
        assert parse(text, g) == desc
        assert desc.task_class == TaskClass.FILTER


def test_dereverb_subgrammar_always_removes():
    g = build_grammar(SOURCES, ["dereverb"])
    rng = np.random.default_rng(3)
    for _ in range(20):
        _, desc = generate_random(g, rng)
        assert interpret(desc).direction == Direction.REMOVE


def test_task_class_sampling_is_uniform(grammar):
    rng = np.random.default_rng(0)
    draws = 4000
    counts = Counter(generate_random(grammar, rng)[1].task_class for _ in range(draws))
    p = 0.25
    sigma = np.sqrt(draws * p * (1 - p))
    for task_class in TaskClass:
        assert abs(counts[task_class] - draws * p) <= 4 * sigma


def test_rule_weights_bias_generation():
    base = build_grammar(SOURCES, ["separate", "mute"])
    weighted = Grammar(base.rules, base.start_symbol, {"<cls-vc>": (1.0, 1e-9)})
    rng = np.random.default_rng(0)
    assert all(generate_random(weighted, rng)[1].task == Task.SEPARATE for _ in range(50))


# --- INTERPRET ---

def test_interpret_examples():
    plan = interpret(AmssDescription.of(Task.SEPARATE, ["vocals"]))
    assert (plan.transform, plan.targets, plan.direction) == (Transform.MASK_OTHERS, ("vocals",), Direction.APPLY)

    plan = interpret(AmssDescription.of(Task.DEREVERB, ["drums"]))
    assert (plan.transform, plan.direction) == (Transform.REVERB, Direction.REMOVE)
    assert plan.params == {"decay_s": 0.6}

    plan = interpret(AmssDescription.of(Task.INCREASE_VOLUME, ["bass"], Level.HEAVY))
    assert plan.transform == Transform.GAIN
    assert plan.params["factor"] == 2.0

    plan = interpret(AmssDescription.of(Task.PAN_RIGHT, ["bass"], Level.LIGHT))
    assert plan.side == "right"
    assert plan.params["amount"] == 0.25


def test_interpret_is_total_on_default_table(grammar, all_queries):
    for query in all_queries:
        interpret(parse(query, grammar))


def test_missing_level_entry():
    table = {"lowpass": {"light": 6000.0}}
    with pytest.raises(MissingLevelEntry) as exc:
        interpret(AmssDescription.of(Task.LOWPASS, ["drums"], Level.HEAVY), table)
    assert (exc.value.task, exc.value.level) == ("lowpass", "heavy")
    # separate/mute need no table entry
    interpret(AmssDescription.of(Task.MUTE, ["drums"]), table)


def test_description_rejects_duplicates_and_levels_on_mask_tasks():
    with pytest.raises(ValueError):
        AmssDescription.of(Task.MUTE, ["drums", "drums"])
    with pytest.raises(ValueError):
        AmssDescription.of(Task.SEPARATE, ["drums"], Level.HEAVY)


# --- SERIALIZATION ---

def test_grammar_dict_round_trip(grammar):
    assert Grammar.from_dict(json.loads(json.dumps(grammar.to_dict()))) == grammar


def test_load_grammar_from_sources_and_tasks(tmp_path):
    path = tmp_path / "grammar.json"
    path.write_text(json.dumps({"sources": ["vocals", "piano"], "tasks": ["mute"]}))
    g = load_grammar(str(path))
    assert enumerate_queries(g) == sorted([
        "mute vocals", "mute piano", "mute vocals, piano", "mute piano, vocals",
    ])
