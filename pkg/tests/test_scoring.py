import math

import numpy as np
import pytest

from kglab.encoders import HashEncoder, TableLogProb, UniformLogProb
from kglab.errors import DimensionMismatchError, UnknownIdError
from kglab.graph import Triple
from kglab.scoring import (EntityTrie, ModelParameters, build_entity_trie,
                           decode_constrained, log_softmax, masked_context,
                           score_generation, score_joint, score_masked_entity,
                           score_two_tower, sigmoid)
from kglab.serialize import SerializeConfig

from oracles import exhaustive_generation_ranking


# --- parameters --------------------------------------------------------------

def test_initialize_shapes_and_determinism():
    a = ModelParameters.initialize(5, 2, 8, seed=1)
    b = ModelParameters.initialize(5, 2, 8, seed=1)
    assert a.entity_table.shape == (5, 8)
    assert a.relation_table.shape == (2, 8)
    assert np.array_equal(a.entity_table, b.entity_table)
    c = ModelParameters.initialize(5, 2, 8, seed=2)
    assert not np.array_equal(a.entity_table, c.entity_table)


def test_initialize_with_projections_and_classifier():
    p = ModelParameters.initialize(3, 1, 4, with_projections=True,
                                   with_classifier=True)
    assert np.array_equal(p.proj_query, np.eye(4))
    assert np.array_equal(p.proj_tail, np.eye(4))
    assert p.classifier_w.shape == (4,)


def test_parameters_validate_shapes():
    with pytest.raises(DimensionMismatchError):
        ModelParameters(entity_table=np.zeros((3, 4)),
                        relation_table=np.zeros((2, 5)))
    with pytest.raises(DimensionMismatchError):
        ModelParameters(entity_table=np.zeros((3, 4)),
                        relation_table=np.zeros((2, 4)),
                        proj_query=np.zeros((3, 4)))


def test_copy_is_deep():
    p = ModelParameters.initialize(3, 1, 4)
    q = p.copy()
    q.entity_table[0, 0] += 1.0
    assert p.entity_table[0, 0] != q.entity_table[0, 0]


def test_check_entity_bounds():
    p = ModelParameters.initialize(3, 1, 4)
    p.check_entity(2)
    with pytest.raises(UnknownIdError):
        p.check_entity(3)


# --- heads -------------------------------------------------------------------

def test_joint_score_is_half_with_zero_classifier(pair_kg):
    cfg = SerializeConfig(max_len=16)
    enc = HashEncoder(dimension=16)
    p = ModelParameters(entity_table=np.zeros((20, 16)),
                        relation_table=np.zeros((2, 16)),
                        classifier_w=np.zeros(16), classifier_b=0.0)
    assert score_joint(p, enc, pair_kg, Triple(0, 0, 1), cfg) == \
        pytest.approx(0.5)


def test_joint_score_moves_with_bias(pair_kg):
    cfg = SerializeConfig(max_len=16)
    enc = HashEncoder(dimension=16)
    p = ModelParameters(entity_table=np.zeros((20, 16)),
                        relation_table=np.zeros((2, 16)),
                        classifier_w=np.zeros(16), classifier_b=2.0)
    assert score_joint(p, enc, pair_kg, Triple(0, 0, 1), cfg) == \
        pytest.approx(sigmoid(2.0))


def test_sigmoid_extremes_do_not_overflow():
    assert sigmoid(1000.0) == pytest.approx(1.0)
    assert sigmoid(-1000.0) == pytest.approx(0.0)
    assert sigmoid(0.0) == 0.5


def test_two_tower_cosine_example():
    assert score_two_tower([1.0, 1.0], [1.0, 0.0]) == \
        pytest.approx(0.70710678, abs=1e-8)
    assert score_two_tower([2.0, 0.0], [4.0, 0.0]) == pytest.approx(1.0)


def test_two_tower_zero_vector_rejected():
    with pytest.raises(ValueError):
        score_two_tower([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(DimensionMismatchError):
        score_two_tower([1.0], [1.0, 0.0])


def test_log_softmax_properties():
    out = log_softmax(np.array([1000.0, 1000.0]))
    assert out[0] == pytest.approx(math.log(0.5))
    probs = np.exp(log_softmax(np.array([0.3, -1.2, 5.0])))
    assert probs.sum() == pytest.approx(1.0)


def test_masked_entity_equal_rows_split_mass():
    p = ModelParameters(entity_table=np.array([[1.0, 0.0], [1.0, 0.0]]),
                        relation_table=np.zeros((1, 2)))
    out = score_masked_entity(p, np.array([0.7, 0.1]), [0, 1])
    assert out[0] == pytest.approx(math.log(0.5))
    assert out[1] == pytest.approx(math.log(0.5))


def test_masked_entity_projection_applies():
    p = ModelParameters(entity_table=np.array([[1.0, 0.0], [0.0, 1.0]]),
                        relation_table=np.zeros((1, 2)),
                        proj_query=np.array([[0.0, 1.0], [1.0, 0.0]]))
    ctx = np.array([1.0, 0.0])
    assert np.array_equal(masked_context(p, ctx), [0.0, 1.0])
    out = score_masked_entity(p, ctx, [0, 1])
    assert out[1] > out[0]  # the swap projection favors entity 1


def test_masked_entity_rejects_bad_input():
    p = ModelParameters.initialize(3, 1, 4)
    with pytest.raises(ValueError):
        score_masked_entity(p, np.zeros(4), [])
    with pytest.raises(UnknownIdError):
        score_masked_entity(p, np.zeros(4), [5])
    with pytest.raises(DimensionMismatchError):
        score_masked_entity(p, np.zeros(3), [0])


def test_generation_score_uniform_example():
    lp = UniformLogProb(["a", "b", "c", "d"])
    score = score_generation(lp, ("ctx",), ("a", "b", "a"))
    assert score == pytest.approx(3 * math.log(0.25))


def test_generation_score_teacher_forcing_uses_prefix():
    lp = TableLogProb(["a", "b"], {None: {"a": 3.0, "b": 1.0},
                                   "a": {"a": 1.0, "b": 3.0}})
    score = score_generation(lp, (), ("a", "b"))
    assert score == pytest.approx(math.log(0.75) + math.log(0.75))


def test_generation_score_errors():
    lp = UniformLogProb(["a"])
    with pytest.raises(ValueError):
        score_generation(lp, (), ())
    with pytest.raises(KeyError):
        score_generation(lp, (), ("zz",))


# --- trie and constrained decoding -------------------------------------------

def test_trie_add_and_lookup():
    trie = EntityTrie()
    trie.add(0, ["new", "york"])
    trie.add(1, ["new", "jersey"])
    trie.add(2, ["boston"])
    assert len(trie) == 3
    assert trie.tokens_of(1) == ("new", "jersey")
    assert list(trie.entity_ids()) == [0, 1, 2]


def test_trie_rejects_bad_adds():
    trie = EntityTrie()
    trie.add(0, ["boston"])
    with pytest.raises(ValueError):
        trie.add(1, [])
    with pytest.raises(ValueError):
        trie.add(0, ["chicago"])     # duplicate id
    with pytest.raises(ValueError):
        trie.add(2, ["boston"])      # same token sequence


def test_trie_roundtrip(tmp_path):
    trie = EntityTrie()
    trie.add(3, ["new", "york"])
    trie.add(1, ["boston"])
    path = tmp_path / "trie.tsv"
    trie.save(path)
    back = EntityTrie.load(path)
    assert back.tokens_of(3) == ("new", "york")
    assert back.to_lines() == trie.to_lines()


def test_single_entity_decode_equals_generation_score():
    lp = UniformLogProb(["lone", "star"])
    trie = EntityTrie()
    trie.add(0, ["lone", "star"])
    out = decode_constrained(lp, ("q",), trie, beam=4)
    assert len(out) == 1
    assert out[0][0] == 0
    assert out[0][1] == pytest.approx(score_generation(lp, ("q",),
                                                       ("lone", "star")))


def test_exhaustive_decode_matches_brute_force_ranking():
    rng_names = [
        (0, ["ada"]), (1, ["ada", "prime"]), (2, ["byte"]),
        (3, ["byte", "lane"]), (4, ["cove"]), (5, ["cove", "deep", "blue"]),
        (6, ["dune"]), (7, ["dune", "sea"]), (8, ["echo"]), (9, ["flux"]),
    ]
    vocab = sorted({t for _, toks in rng_names for t in toks})
    from kglab.encoders import HashedLogProb
    lp = HashedLogProb(vocab, seed=11)
    trie = EntityTrie()
    for i, toks in rng_names:
        trie.add(i, toks)
    got = decode_constrained(lp, ("ctx",), trie, beam=len(trie))
    want = exhaustive_generation_ranking(lp, ("ctx",), rng_names)
    assert [(i, pytest.approx(s)) for i, s in want] == got


def test_small_beam_prunes_but_keeps_order():
    lp = UniformLogProb(["a", "b", "c"])
    trie = EntityTrie()
    trie.add(0, ["a"])
    trie.add(1, ["b"])
    trie.add(2, ["c"])
    out = decode_constrained(lp, (), trie, beam=2)
    assert len(out) == 2
    # equal scores: id tiebreak
    assert [i for i, _ in out] == [0, 1]


def test_decode_validates_inputs():
    lp = UniformLogProb(["a"])
    trie = EntityTrie()
    with pytest.raises(ValueError):
        decode_constrained(lp, (), trie, beam=1)   # empty trie
    trie.add(0, ["a"])
    with pytest.raises(ValueError):
        decode_constrained(lp, (), trie, beam=0)


def test_build_entity_trie_tokenizes_names(pair_kg):
    trie = build_entity_trie(pair_kg)
    assert len(trie) == 20
    assert trie.tokens_of(0) == ("alpha",)
