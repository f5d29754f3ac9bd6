import pytest
from hypothesis import given
from hypothesis import strategies as st

from textvin import suite
from textvin.corpus import (REFERENCE_AVG_WORDS, UNK, Description, EmptyText, MissingTemplate,
                            build_vocab, describe_entity, generate_synthetic_corpus,
                            is_instructive, lookup, read_corpus, tokenize, write_corpus)
from textvin.engine import EntityDef


@pytest.fixture(scope="module")
def bundled_corpus():
    specs = [suite.load_bundled(n) for n in suite.bundled_names()]
    return generate_synthetic_corpus(specs, seed=0)


def test_tokenize_example():
    assert tokenize("Red scorpion that moves up and down") == \
        ["red", "scorpion", "that", "moves", "up", "and", "down"]


def test_tokenize_strips_punctuation():
    assert tokenize("It's fast, REALLY fast!") == ["its", "fast", "really", "fast"]


@pytest.mark.parametrize("text", ["   ", "", "?!,"])
def test_tokenize_empty(text):
    with pytest.raises(EmptyText):
        tokenize(text)


@given(st.text(min_size=1, max_size=80))
def test_tokenize_idempotent(text):
    try:
        toks = tokenize(text)
    except EmptyText:
        return
    assert tokenize(" ".join(toks)) == toks


def test_vocab_dedupes_and_reserves_zero():
    c = build_vocab([Description("a", ("red", "bat"), 1), Description("b", ("red", "cat"), 1)])
    assert c.vocab == {UNK: 0, "bat": 1, "cat": 2, "red": 3}
    assert c.index("zebra") == 0
    assert c.encode(["red", "zebra"]) == [3, 0]


def test_description_limits():
    with pytest.raises(EmptyText):
        Description("a", (), 1)
    with pytest.raises(ValueError):
        Description("a", ("w",) * 23, 1)


def test_duplicate_alignment_rejected():
    with pytest.raises(ValueError):
        build_vocab([Description("a", ("x",), 1), Description("a", ("y",), 1)])


def test_lookup(bundled_corpus):
    d = lookup(bundled_corpus, "tancar", 2)
    assert d.entity_symbol == "tancar" and d.annotator_id == 2
    assert lookup(bundled_corpus, "never_seen", 1) is None
    assert lookup(None, "tancar", 1) is None


def test_alignment_unique(bundled_corpus):
    keys = [(d.entity_symbol, d.annotator_id) for d in bundled_corpus.descriptions]
    assert len(keys) == len(set(keys))
    for sym in bundled_corpus.symbols():
        assert [d.annotator_id for d in bundled_corpus.for_entity(sym)] == [1, 2, 3, 4]


def test_synthetic_is_deterministic(bundled_corpus):
    specs = [suite.load_bundled(n) for n in suite.bundled_names()]
    assert generate_synthetic_corpus(specs, seed=0) == bundled_corpus
    assert generate_synthetic_corpus(specs, seed=1) != bundled_corpus


def test_chaser_text_mentions_pursuit():
    d = EntityDef("hound", "chaser", 0.5)
    for ann in (1, 2, 3, 4):
        words = set(describe_entity(d, ann))
        assert words & {"chases", "follows", "pursues"}


def test_enemy_and_friend_effects_differ():
    pool = suite.fe_pool()
    corp = generate_synthetic_corpus([suite.load_bundled("fe_pool")])
    friendly = {"friendly", "friend", "greets"}
    hostile = {"kills", "hostile", "enemy", "deadly"}
    for e in pool:
        words = {w for d in corp.for_entity(e.symbol) for w in d.text}
        if e.is_friend:
            assert not words & hostile
        else:
            assert not words & friendly


def test_missing_template():
    with pytest.raises(MissingTemplate):
        describe_entity(EntityDef("x", "teleporter", 1.0), 1)


def test_mean_length_and_no_instructions(bundled_corpus):
    stats = bundled_corpus.stats()
    assert abs(stats["avg_words_per_sentence"] - REFERENCE_AVG_WORDS) <= 2.0
    assert stats["max_sentence_length"] <= 22
    assert not any(is_instructive(list(d.text)) for d in bundled_corpus.descriptions)
    assert stats["reference_unique_word_types"] == 286


def test_file_round_trip(tmp_path, bundled_corpus):
    path = tmp_path / "corpus.tsv"
    write_corpus(bundled_corpus, path)
    assert read_corpus(path) == bundled_corpus


def test_subset_and_merge(bundled_corpus):
    train = bundled_corpus.subset((1, 2, 3))
    assert {d.annotator_id for d in train.descriptions} == {1, 2, 3}
    merged = train.merged(bundled_corpus.subset((4,)))
    assert set(merged.descriptions) == set(bundled_corpus.descriptions)
