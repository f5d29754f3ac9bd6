import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdcheck import numeric_grad, rel_error, sample_indices
from textvin.corpus import Description, build_vocab
from textvin.engine import EntityDef, GameSpec, reset
from textvin.repgen import (EmbeddingTable, EmptySequence, TextEncoderParams,
                            build_phi, build_phi_backward, build_phi_batch,
                            choose_descriptions, embed_entity, encode_description,
                            observe)

D = 8


def make_state(layout, symbols):
    ents = tuple(EntityDef(sym, "static", glyph=g) for g, sym in symbols.items())
    spec = GameSpec(name="t", game="t", rows=len(layout), cols=len(layout[0]),
                    entities=ents, layout=tuple(layout))
    return reset(spec, 0)


def corpus_for(*pairs):
    return build_vocab([Description(sym, tuple(text.split()), 1) for sym, text in pairs])


def test_zero_encoder_gives_zero():
    table = EmbeddingTable(D, 0)
    enc = TextEncoderParams.zeros(D, D)
    v = encode_description(enc, ["red", "bat", "moves"], table)
    assert v.shape == (D,) and not v.any()


def test_encoder_deterministic_and_empty():
    table = EmbeddingTable(D, 0)
    enc = TextEncoderParams.init(D, D, np.random.default_rng(0))
    a = encode_description(enc, ["a", "b"], table)
    b = encode_description(enc, ["a", "b"], table)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, encode_description(enc, ["b", "a"], table))
    with pytest.raises(EmptySequence):
        encode_description(enc, [], table)


def test_encoder_gradients_match_fd():
    rng = np.random.default_rng(1)
    table = EmbeddingTable(D, 0)
    enc = TextEncoderParams.init(D, D, rng)
    enc.b += rng.normal(0, 0.3, enc.b.shape)
    corp = corpus_for(("bat", "red bat moves up and down quickly"), ("cat", "cat sits"))
    state = make_state(["b.c", "..A"], {"b": "bat", "c": "cat"})
    descs = choose_descriptions(["bat", "cat"], corp, 0)
    obs = [observe(state, descs)]
    w = rng.normal(size=(1, 2 * D, 2, 3))

    def loss():
        phi, _ = build_phi_batch(obs, table, enc)
        return float(np.sum(w * np.tanh(phi)))

    phi, cache = build_phi_batch(obs, table, enc)
    grads = build_phi_backward(w * (1 - np.tanh(phi) ** 2), cache, table, enc)
    groups = {"enc.wx": enc.wx, "enc.wh": enc.wh, "enc.b": enc.b,
              "emb.word": table.words.matrix, "emb.entity": table.entities.matrix}
    for name, arr in groups.items():
        idx = sample_indices(arr, 40, rng)
        num = numeric_grad(loss, arr, idx=idx)
        assert rel_error(grads[name], num) < 1e-4, name


def test_embed_entity_persistent_and_distinct():
    table = EmbeddingTable(D, 3)
    a = embed_entity(table, "bat").copy()
    b = embed_entity(table, "cat")
    assert np.array_equal(a, embed_entity(table, "bat"))
    assert not np.array_equal(a, b)
    assert np.all(np.abs(a) <= 0.1)
    other = EmbeddingTable(D, 3)
    assert np.array_equal(embed_entity(other, "bat"), a)


def test_frozen_table_refuses_new_keys():
    table = EmbeddingTable(D, 0).freeze()
    with pytest.raises(KeyError):
        embed_entity(table, "new")


def test_empty_state_is_zero():
    spec = GameSpec(name="e", game="e", rows=4, cols=4, entities=(),
                    layout=("A...", "....", "....", "...."))
    state = reset(spec, 0)
    table = EmbeddingTable(D, 0)
    enc = TextEncoderParams.init(D, D, np.random.default_rng(0))
    phi = build_phi(state, None, table, enc, 0)
    assert phi.values.shape == (4, 4, 2 * D)
    phi.values[0, 0] = 0  # the avatar cell
    assert not phi.values.any()


def test_entity_without_text_has_zero_text_block():
    state = make_state(["A.b"], {"b": "bat"})
    table = EmbeddingTable(D, 0)
    enc = TextEncoderParams.init(D, D, np.random.default_rng(0))
    phi = build_phi(state, None, table, enc, 0).values
    assert np.array_equal(phi[0, 2, :D], embed_entity(table, "bat"))
    assert not phi[0, 2, D:].any()


def test_colocated_entities_sum():
    table = EmbeddingTable(D, 0)
    enc = TextEncoderParams.init(D, D, np.random.default_rng(0))
    corp = corpus_for(("bat", "a bat"), ("cat", "a cat"))
    state = make_state(["A.b", "..c"], {"b": "bat", "c": "cat"})
    both = state.__class__(state.spec, (state.entities[0], state.entities[1]._replace(row=0)),
                           state.avatar_pos)
    only_b = state.__class__(state.spec, (state.entities[0],), state.avatar_pos)
    only_c = state.__class__(state.spec, (state.entities[1]._replace(row=0),),
                             state.avatar_pos)
    pb = build_phi(only_b, corp, table, enc, 0).values
    pc = build_phi(only_c, corp, table, enc, 0).values
    pbc = build_phi(both, corp, table, enc, 0).values
    np.testing.assert_allclose(pbc[0, 2], pb[0, 2] + pc[0, 2], atol=1e-12)
    assert {s for s, _ in build_phi(both, corp, table, enc, 0).provenance[(0, 2)]} == \
        {"bat", "cat"}


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["full", "text", "id"]), st.integers(0, 100))
def test_shape_and_text_neutrality(rep, seed):
    table = EmbeddingTable(D, seed)
    enc = TextEncoderParams.init(D, D, np.random.default_rng(seed))
    corp = corpus_for(("bat", "a red bat"), ("cat", "a cat that sits"))
    no_cat = corpus_for(("bat", "a red bat"))
    state = make_state(["A.b.", "c..."], {"b": "bat", "c": "cat"})
    full = build_phi(state, corp, table, enc, seed, rep).values
    less = build_phi(state, no_cat, table, enc, seed, rep).values
    assert full.shape == (2, 4, 2 * D if rep == "full" else D)
    diff = np.argwhere(np.abs(full - less) > 1e-12)
    for r, c, ch in diff:
        assert (r, c) == (1, 0)
        assert rep == "text" or ch >= D


def test_descriptions_sampled_per_episode():
    descs = [Description("bat", (f"w{i}",), i) for i in (1, 2, 3, 4)]
    corp = build_vocab(descs)
    picks = {choose_descriptions(["bat"], corp, s, (1, 2, 3))["bat"] for s in range(50)}
    assert picks == {("w1",), ("w2",), ("w3",)}
    assert choose_descriptions(["bat"], corp, 5) == choose_descriptions(["bat"], corp, 5)
    assert choose_descriptions(["owl"], corp, 0) == {"owl": None}
