"""The evolution knowledge graph: construction, indexing, negative sampling.

Nodes are entities and attribute values; edges are relational triples
(entity-entity), attribute triples (entity-value), and evolution triples
(value-value within one attribute domain, recording an observed change
between two linked records).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import DomainError, LoadError
from .ingest import LinkedPairSet, RecordSet, TextFormat, ValueDictionary


class RelationalTriple(NamedTuple):
    head: int
    tail: int
    relation: int


class AttributeTriple(NamedTuple):
    entity: int
    value: int
    attribute: int


class EvolutionTriple(NamedTuple):
    head_value: int
    tail_value: int
    attribute: int


@dataclass(frozen=True)
class EvolutionKG:
    """Immutable triple stores plus the tails-per-head evolution index."""

    entities: frozenset[int]
    values: ValueDictionary
    relation_names: tuple[str, ...]
    relational: frozenset[RelationalTriple]
    attribute_triples: frozenset[AttributeTriple]
    evolution: frozenset[EvolutionTriple]
    evolution_index: Mapping[tuple[int, int], frozenset[int]] = field(repr=False)

    @classmethod
    def from_triples(
        cls,
        entities: Iterable[int],
        values: ValueDictionary,
        attribute_triples: Iterable[AttributeTriple],
        evolution: Iterable[EvolutionTriple],
        relational: Iterable[RelationalTriple] = (),
        relation_names: Iterable[str] = (),
    ) -> "EvolutionKG":
        entities = frozenset(entities)
        attribute_triples = frozenset(attribute_triples)
        evolution = frozenset(evolution)
        relational = frozenset(relational)
        relation_names = tuple(relation_names)

        n_values = len(values)
        seen: set[tuple[int, int]] = set()
        for t in attribute_triples:
            if t.entity not in entities:
                raise DomainError(f"attribute triple references unknown entity {t.entity}")
            if not 0 <= t.value < n_values:
                raise DomainError(f"attribute triple references unknown value {t.value}")
            if values.attribute_of(t.value) != t.attribute:
                raise DomainError(
                    f"attribute triple ({t.entity},{t.value},{t.attribute}): value "
                    f"belongs to attribute {values.attribute_of(t.value)}"
                )
            key = (t.entity, t.attribute)
            if key in seen:
                raise DomainError(
                    f"entity {t.entity} has two attribute triples for attribute {t.attribute}"
                )
            seen.add(key)
        for t in evolution:
            for v in (t.head_value, t.tail_value):
                if not 0 <= v < n_values:
                    raise DomainError(f"evolution triple references unknown value {v}")
                if values.attribute_of(v) != t.attribute:
                    raise DomainError(
                        f"evolution triple {t}: value {v} outside attribute "
                        f"{t.attribute} domain"
                    )
        for t in relational:
            if t.head == t.tail:
                raise DomainError(f"relational triple with head == tail ({t.head})")
            if t.head not in entities or t.tail not in entities:
                raise DomainError(f"relational triple references unknown entity: {t}")
            if not 0 <= t.relation < len(relation_names):
                raise DomainError(f"relational triple uses unregistered relation {t.relation}")

        index: dict[tuple[int, int], set[int]] = {}
        for t in evolution:
            index.setdefault((t.attribute, t.head_value), set()).add(t.tail_value)
        frozen_index = {k: frozenset(v) for k, v in index.items()}

        return cls(
            entities=entities,
            values=values,
            relation_names=relation_names,
            relational=relational,
            attribute_triples=attribute_triples,
            evolution=evolution,
            evolution_index=frozen_index,
        )

    def observed_tails(self, attribute: int, head_value: int) -> frozenset[int]:
        """E(head): every tail value seen evolving from head under attribute."""
        return self.evolution_index.get((attribute, head_value), frozenset())

    def counts(self) -> dict[str, int]:
        return {
            "entities": len(self.entities),
            "attributes": self.values.n_attributes,
            "values": len(self.values),
            "relations": len(self.relation_names),
            "attribute_triples": len(self.attribute_triples),
            "relational_triples": len(self.relational),
            "evolution_triples": len(self.evolution),
        }


def build_ekg(
    records_a: RecordSet,
    records_b: RecordSet,
    train_links: LinkedPairSet,
    include_identity_triples: bool = False,
    include_reverse_triples: bool = False,
    relational: Iterable[RelationalTriple] = (),
    relation_names: Iterable[str] = (),
) -> EvolutionKG:
    """Assemble the graph from two record sets and their training links.

    Evolution triples are directed A -> B (earlier -> later record) and
    deduplicated. Identical values on a linked pair produce a triple only
    when ``include_identity_triples`` is set; ``include_reverse_triples``
    adds the B -> A direction as well (the degenerate, direction-blind
    graph variant).
    """
    if records_a.dictionary is not records_b.dictionary:
        raise DomainError("record sets must share one value dictionary")
    overlap = records_a.entity_ids() & records_b.entity_ids()
    if overlap:
        raise DomainError(f"entity ids appear in both record sets: {sorted(overlap)[:5]}")

    entities = records_a.entity_ids() | records_b.entity_ids()

    attribute_triples = [
        AttributeTriple(rec.entity_id, vid, attr)
        for records in (records_a, records_b)
        for rec in records
        for attr, vid in sorted(rec.values.items())
    ]

    evolution: set[EvolutionTriple] = set()
    for a_id, b_id in train_links:
        if a_id not in records_a:
            raise LoadError(f"link endpoint {a_id} missing from record set A")
        if b_id not in records_b:
            raise LoadError(f"link endpoint {b_id} missing from record set B")
        head, tail = records_a.get(a_id), records_b.get(b_id)
        for attr, v_h in head.values.items():
            v_t = tail.values.get(attr)
            if v_t is None:
                continue
            if v_h == v_t:
                if include_identity_triples:
                    evolution.add(EvolutionTriple(v_h, v_t, attr))
                continue
            evolution.add(EvolutionTriple(v_h, v_t, attr))
            if include_reverse_triples:
                evolution.add(EvolutionTriple(v_t, v_h, attr))

    return EvolutionKG.from_triples(
        entities=entities,
        values=records_a.dictionary,
        attribute_triples=attribute_triples,
        evolution=evolution,
        relational=relational,
        relation_names=relation_names,
    )


def sample_negatives(
    ekg: EvolutionKG,
    triple: EvolutionTriple,
    k: int,
    rng: np.random.Generator,
) -> list[EvolutionTriple] | None:
    """Draw k corrupted tails for one positive evolution triple.

    Candidates are the attribute's domain minus every tail observed for this
    head, so a sampled triple can never be a real evolution triple. Draws are
    uniform without replacement (with replacement once k exceeds the pool).
    Returns None when the pool is empty: the caller drops this positive.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    observed = ekg.observed_tails(triple.attribute, triple.head_value)
    pool = [v for v in ekg.values.values_of(triple.attribute) if v not in observed]
    if not pool:
        return None
    idx = rng.choice(len(pool), size=k, replace=k > len(pool))
    return [
        EvolutionTriple(triple.head_value, pool[int(i)], triple.attribute)
        for i in np.atleast_1d(idx)
    ]


def load_relations(
    path: str | Path,
    known_entities: Iterable[int],
    fmt: TextFormat = TextFormat(),
) -> tuple[tuple[RelationalTriple, ...], tuple[str, ...]]:
    """Read optional (head_entity, tail_entity, relation_name) rows."""
    known = frozenset(known_entities)
    names: list[str] = []
    by_name: dict[str, int] = {}
    triples: list[RelationalTriple] = []
    with open(path, newline="", encoding=fmt.encoding) as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=fmt.delimiter), start=1):
            if len(row) != 3:
                raise LoadError(f"{path}: line {lineno}: expected 3 columns")
            try:
                head, tail = int(row[0]), int(row[1])
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise LoadError(f"{path}: line {lineno}: bad entity id") from None
            if head not in known or tail not in known:
                raise LoadError(f"{path}: line {lineno}: unknown entity id")
            name = row[2].strip()
            if name not in by_name:
                by_name[name] = len(names)
                names.append(name)
            triples.append(RelationalTriple(head, tail, by_name[name]))
    return tuple(triples), tuple(names)


def export_text(ekg: EvolutionKG) -> str:
    """Dump the five stores, one element per line, for debugging."""
    lines = [f"entity\t{e}" for e in sorted(ekg.entities)]
    lines += [
        f"value\t{vid}\t{attr}\t{text}" for vid, attr, text in ekg.values.entries()
    ]
    lines += [
        f"rt\t{t.head}\t{t.tail}\t{ekg.relation_names[t.relation]}"
        for t in sorted(ekg.relational)
    ]
    lines += [
        f"at\t{t.entity}\t{t.value}\t{t.attribute}"
        for t in sorted(ekg.attribute_triples)
    ]
    lines += [
        f"et\t{t.head_value}\t{t.tail_value}\t{t.attribute}"
        for t in sorted(ekg.evolution)
    ]
    return "\n".join(lines) + "\n"
