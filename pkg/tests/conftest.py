import numpy as np
import pytest

from kglab.graph import Entity, Relation, Triple, KnowledgeGraph

NATO = ("alpha bravo charlie delta echo foxtrot golf hotel india juliet "
        "kilo lima mike november oscar papa quebec romeo sierra tango").split()


def build_pair_kg():
    """20-entity deterministic toy: entity 2i and 2i+1 are mutual partners.

    Relation 0 ("partner") points 2i -> 2i+1 and relation 1 ("ally") points
    2i+1 -> 2i, so every (h, r) has a unique tail, every (t, r) a unique
    head, and the correct completion of any query is always the known
    entity's partner. That last property matters: the hash encoder is
    additive over tokens, so a linear entity table can only memorize answer
    maps that depend on the known entity alone (not on entity-relation or
    entity-direction interactions).
    """
    entities = [Entity(i, NATO[i]) for i in range(20)]
    relations = [Relation(0, "partner"), Relation(1, "ally")]
    triples = []
    for i in range(10):
        triples.append(Triple(2 * i, 0, 2 * i + 1))
        triples.append(Triple(2 * i + 1, 1, 2 * i))
    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        splits={"train": tuple(triples), "valid": (), "test": ()},
        raw_entity_ids=tuple(f"e{i}" for i in range(20)),
        raw_relation_ids=("partner", "ally"),
    )


def partner_of(entity_id):
    return entity_id + 1 if entity_id % 2 == 0 else entity_id - 1


def build_random_kg(n_entities=50, n_relations=5, seed=2024):
    """Random graph with repeated (h, r) pairs so filtering has teeth."""
    rng = np.random.default_rng(seed)
    entities = [Entity(i, f"node {i:02d}", f"synthetic node number {i}")
                for i in range(n_entities)]
    relations = [Relation(j, f"link_{j}") for j in range(n_relations)]
    seen = set()
    triples = []
    while len(triples) < 220:
        h = int(rng.integers(0, n_entities))
        r = int(rng.integers(0, n_relations))
        t = int(rng.integers(0, n_entities))
        if h == t or (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        triples.append(Triple(h, r, t))
    # force some shared (h, r) prefixes so true-answer sets exceed size 1
    base = triples[:20]
    for i, t in enumerate(base):
        alt = (t.tail + 1 + i) % n_entities
        if alt != t.head and (t.head, t.relation, alt) not in seen:
            seen.add((t.head, t.relation, alt))
            triples.append(Triple(t.head, t.relation, alt))
    rng.shuffle(triples)
    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        splits={"train": tuple(triples[:160]),
                "valid": tuple(triples[160:190]),
                "test": tuple(triples[190:])},
        raw_entity_ids=tuple(f"n{i}" for i in range(n_entities)),
        raw_relation_ids=tuple(f"link_{j}" for j in range(n_relations)),
    )


def make_random_scorer(n_entities, seed=7):
    """Deterministic per-query random scores; same vector for same query."""
    def scorer(known, relation, direction):
        tag = 0 if direction == "predict_tail" else 1
        rng = np.random.default_rng((seed, known, relation, tag))
        return rng.normal(size=n_entities)
    return scorer


@pytest.fixture
def pair_kg():
    return build_pair_kg()


@pytest.fixture
def random_kg():
    return build_random_kg()


@pytest.fixture
def tiny_kg_files(tmp_path):
    """Three entities, two relations, one triple per split, on disk."""
    ents = tmp_path / "entities.tsv"
    rels = tmp_path / "relations.tsv"
    ents.write_text("a\tamber lamp\ta small lamp\n"
                    "b\tbirch table\n"
                    "c\tcopper kettle\tholds water\n", encoding="utf-8")
    rels.write_text("made_of\tmade of\nnext_to\tnext to\n", encoding="utf-8")
    train = tmp_path / "train.tsv"
    valid = tmp_path / "valid.tsv"
    test = tmp_path / "test.tsv"
    train.write_text("a\tmade_of\tb\nb\tnext_to\tc\n", encoding="utf-8")
    valid.write_text("a\tnext_to\tc\n", encoding="utf-8")
    test.write_text("c\tmade_of\ta\n", encoding="utf-8")
    return {"triples": {"train": str(train), "valid": str(valid),
                        "test": str(test)},
            "entities": str(ents), "relations": str(rels),
            "dir": tmp_path}
