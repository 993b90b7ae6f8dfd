"""Token-sequence templates for the unified text encoder.

Every model input is a flat list of ordinary word tokens interleaved with
reserved special tokens (CLS, SEP, MASK, REVERSE, per-entity and per-relation
markers). The tokenizer is a deterministic whitespace/punctuation splitter:
learned subword vocabularies are ecosystem-specific, and everything downstream
only needs token identities and special-token positions.

All builders are pure functions of (graph, ids, config, neighbor seed) and are
safe for concurrent use.
"""

from __future__ import annotations

import enum
import unicodedata
from dataclasses import dataclass

from .graph import KnowledgeGraph, Triple, collapse_whitespace, sample_neighbors


class SpecialKind(enum.Enum):
    CLS = "CLS"
    SEP = "SEP"
    MASK = "MASK"
    REVERSE = "REVERSE"
    ENTITY = "ENTITY"
    RELATION = "RELATION"


@dataclass(frozen=True)
class SpecialToken:
    kind: SpecialKind
    ref: int | None = None

    def render(self) -> str:
        if self.kind is SpecialKind.ENTITY:
            return f"[E{self.ref}]"
        if self.kind is SpecialKind.RELATION:
            return f"[R{self.ref}]"
        return f"[{self.kind.value}]"


CLS = SpecialToken(SpecialKind.CLS)
SEP = SpecialToken(SpecialKind.SEP)
MASK = SpecialToken(SpecialKind.MASK)
REVERSE = SpecialToken(SpecialKind.REVERSE)


def entity_token(entity_id: int) -> SpecialToken:
    return SpecialToken(SpecialKind.ENTITY, entity_id)


def relation_token(relation_id: int) -> SpecialToken:
    return SpecialToken(SpecialKind.RELATION, relation_id)


Token = "str | SpecialToken"


def token_key(token) -> str:
    """Stable string key for hashing a token.

    Special tokens get a NUL prefix so they can never collide with ordinary
    text, whatever the input vocabulary contains.
    """
    if isinstance(token, SpecialToken):
        return "\x00" + token.render()
    return token


@dataclass
class SerializeConfig:
    max_len: int = 128
    neighbor_k: int = 0
    lowercase: bool = True
    description_included: bool = True

    def __post_init__(self):
        if self.max_len < 8:
            raise ValueError("max_len must be >= 8")
        if self.neighbor_k < 0:
            raise ValueError("neighbor_k must be >= 0")


@dataclass
class TokenSequence:
    items: list
    max_len: int

    def __post_init__(self):
        if len(self.items) > self.max_len:
            raise ValueError("sequence exceeds max_len")
        if self.items and self.items[0] != CLS:
            raise ValueError("sequence must begin with [CLS]")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def render(self) -> str:
        """Golden-fixture form: specials bracketed, tokens space-joined."""
        return " ".join(
            t.render() if isinstance(t, SpecialToken) else t for t in self.items
        )

    def ordinary_tokens(self) -> list[str]:
        return [t for t in self.items if isinstance(t, str)]


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _detach_punctuation(chunk: str) -> list[str]:
    leading = []
    while chunk and _is_punct(chunk[0]):
        leading.append(chunk[0])
        chunk = chunk[1:]
    trailing = []
    while chunk and _is_punct(chunk[-1]):
        trailing.append(chunk[-1])
        chunk = chunk[:-1]
    out = leading
    if chunk:
        out.append(chunk)
    out.extend(reversed(trailing))
    return out


def tokenize(text: str, cfg: SerializeConfig | None = None) -> list[str]:
    """Deterministic tokenizer: lowercase, whitespace split, edge punctuation
    detached into its own tokens ("Forrest Gump." -> forrest, gump, .)."""
    if cfg is None or cfg.lowercase:
        text = text.lower()
    tokens: list[str] = []
    for chunk in text.split():
        tokens.extend(_detach_punctuation(chunk))
    return tokens


def _entity_text_parts(kg, entity_id, cfg, seed, with_neighbors):
    """(token, droppable) parts for one entity segment.

    Name tokens are protected; description and neighbor tokens are droppable.
    Neighbor verbalizations follow the description, "; "-separated.
    """
    ent = kg.entity(entity_id)
    parts = [(t, False) for t in tokenize(ent.surface_name, cfg)]
    if cfg.description_included and ent.description:
        parts.extend((t, True) for t in tokenize(ent.description, cfg))
    if with_neighbors and cfg.neighbor_k > 0:
        rendered = []
        for rel_id, neighbor_id in sample_neighbors(kg, entity_id, cfg.neighbor_k, seed):
            rel = kg.relation(rel_id).display_name
            name = collapse_whitespace(kg.entity(neighbor_id).surface_name)
            rendered.append(f"{rel} {name}")
        if rendered:
            parts.extend((t, True) for t in tokenize(" ; ".join(rendered), cfg))
    return parts


def _relation_text_parts(kg, relation_id, cfg):
    rel = kg.relation(relation_id)
    parts = [(t, False) for t in tokenize(rel.display_name, cfg)]
    if cfg.description_included and rel.description:
        parts.extend((t, True) for t in tokenize(rel.description, cfg))
    return parts


def _finalize(parts, cfg) -> TokenSequence:
    """Truncate to max_len: droppable tokens go first, from the sequence end
    backwards (so later segments shrink before earlier ones and descriptions
    before names); ordinary name tokens only as a last resort; special tokens
    never."""
    over = len(parts) - cfg.max_len
    kill: set[int] = set()
    if over > 0:
        droppable = [i for i, (_, d) in enumerate(parts) if d]
        kill.update(droppable[len(droppable) - min(over, len(droppable)):])
        over -= len(kill)
        if over > 0:
            for i in range(len(parts) - 1, -1, -1):
                if over == 0:
                    break
                if i in kill or isinstance(parts[i][0], SpecialToken):
                    continue
                kill.add(i)
                over -= 1
    items = [tok for i, (tok, _) in enumerate(parts) if i not in kill]
    return TokenSequence(items=items, max_len=cfg.max_len)


def encode_hr_pair(kg: KnowledgeGraph, head_id: int, relation_id: int,
                   cfg: SerializeConfig, seed: int = 0,
                   direction: str = "predict_tail") -> TokenSequence:
    """[CLS] known-entity-text [SEP] relation-text [SEP] (query tower input).

    For predict_head queries the known entity is the tail and a REVERSE
    marker sits right after CLS, same convention as the masked template.
    """
    if direction not in ("predict_tail", "predict_head"):
        raise ValueError(f"direction must be predict_tail or predict_head, got {direction!r}")
    parts = [(CLS, False)]
    if direction == "predict_head":
        parts.append((REVERSE, False))
    parts += _entity_text_parts(kg, head_id, cfg, seed, with_neighbors=True)
    parts.append((SEP, False))
    parts += _relation_text_parts(kg, relation_id, cfg)
    parts.append((SEP, False))
    return _finalize(parts, cfg)


def encode_tail(kg: KnowledgeGraph, tail_id: int, cfg: SerializeConfig) -> TokenSequence:
    """[CLS] tail-text [SEP] (candidate tower input)."""
    parts = [(CLS, False)]
    parts += _entity_text_parts(kg, tail_id, cfg, seed=0, with_neighbors=False)
    parts.append((SEP, False))
    return _finalize(parts, cfg)


def encode_masked_query(kg: KnowledgeGraph, known_id: int, relation_id: int,
                        direction: str, cfg: SerializeConfig, seed: int = 0) -> TokenSequence:
    """Masked-entity query with the known entity's special token.

    predict_tail:  [CLS] known-text [E(known)] [SEP] rel [SEP] [MASK] [SEP]
    predict_head:  same shape, REVERSE right after CLS, known entity = tail.
    The REVERSE position is fixed so golden tests stay bit-exact.
    """
    if direction not in ("predict_tail", "predict_head"):
        raise ValueError(f"direction must be predict_tail or predict_head, got {direction!r}")
    parts = [(CLS, False)]
    if direction == "predict_head":
        parts.append((REVERSE, False))
    parts += _entity_text_parts(kg, known_id, cfg, seed, with_neighbors=True)
    parts.append((entity_token(known_id), False))
    parts.append((SEP, False))
    parts += _relation_text_parts(kg, relation_id, cfg)
    parts.append((SEP, False))
    parts.append((MASK, False))
    parts.append((SEP, False))
    return _finalize(parts, cfg)


def encode_interaction_prefix(item_ids, cfg: SerializeConfig) -> TokenSequence:
    """[CLS] E(i1) ... E(im) [MASK] [SEP] over an interaction history.

    Histories longer than the budget keep only the most recent max_len - 3
    items (CLS, MASK and SEP take the other three slots).
    """
    items = list(item_ids)
    if not items:
        raise ValueError("interaction history is empty")
    keep = cfg.max_len - 3
    items = items[-keep:]
    toks = [CLS] + [entity_token(i) for i in items] + [MASK, SEP]
    return TokenSequence(tuple(toks), cfg.max_len)


def encode_joint_triple(kg: KnowledgeGraph, triple: Triple,
                        cfg: SerializeConfig, seed: int = 0) -> TokenSequence:
    """[CLS] head [SEP] relation [SEP] tail [SEP] for joint triple scoring."""
    parts = [(CLS, False)]
    parts += _entity_text_parts(kg, triple.head, cfg, seed, with_neighbors=True)
    parts.append((SEP, False))
    parts += _relation_text_parts(kg, triple.relation, cfg)
    parts.append((SEP, False))
    parts += _entity_text_parts(kg, triple.tail, cfg, seed=0, with_neighbors=False)
    parts.append((SEP, False))
    return _finalize(parts, cfg)
