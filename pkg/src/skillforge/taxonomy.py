"""ESCO-style skill base: CSV ingestion, hierarchy queries, passage text."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Mapping

SKILL_COLUMNS = ("conceptUri", "preferredLabel", "altLabels", "description")
RELATION_COLUMNS = ("conceptUri", "broaderUri")


class TaxonomyError(ValueError):
    pass


class Relatedness(str, Enum):
    IDENTICAL = "identical"
    ANCESTOR = "ancestor"  # b is a (transitive) broader concept of a
    DESCENDANT = "descendant"
    SIBLING = "sibling"
    UNRELATED = "unrelated"


@dataclass(frozen=True)
class TaxonomyEntry:
    id: str
    preferred_label: str
    alt_labels: tuple[str, ...] = ()
    description: str = ""
    broader_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "alt_labels", tuple(self.alt_labels))
        object.__setattr__(self, "broader_ids", tuple(self.broader_ids))
        if not self.preferred_label.strip():
            raise TaxonomyError(f"entry {self.id!r} has an empty preferred label")


@dataclass
class Taxonomy:
    """Entries keyed by URI plus the broader-relation DAG."""

    entries: dict[str, TaxonomyEntry] = field(default_factory=dict)

    def __post_init__(self):
        for entry in self.entries.values():
            for parent in entry.broader_ids:
                if parent not in self.entries:
                    raise TaxonomyError(
                        f"entry {entry.id!r} references unknown broader concept {parent!r}"
                    )
        self._children: dict[str, list[str]] = {i: [] for i in self.entries}
        for entry in self.entries.values():
            for parent in entry.broader_ids:
                self._children[parent].append(entry.id)
        self._check_acyclic()
        self._ancestors: dict[str, frozenset[str]] = {}

    @classmethod
    def from_entries(cls, entries: Iterable[TaxonomyEntry]) -> "Taxonomy":
        table: dict[str, TaxonomyEntry] = {}
        for e in entries:
            if e.id in table:
                raise TaxonomyError(f"duplicate concept id {e.id!r}")
            table[e.id] = e
        return cls(table)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self.entries

    def __getitem__(self, concept_id: str) -> TaxonomyEntry:
        try:
            return self.entries[concept_id]
        except KeyError:
            raise TaxonomyError(f"unknown concept id {concept_id!r}") from None

    def __iter__(self) -> Iterator[TaxonomyEntry]:
        return iter(self.entries.values())

    @property
    def ids(self) -> list[str]:
        return list(self.entries)

    @property
    def edges(self) -> list[tuple[str, str]]:
        """(child, broader) pairs."""
        return [(e.id, p) for e in self.entries.values() for p in e.broader_ids]

    def children(self, concept_id: str) -> list[str]:
        self[concept_id]
        return list(self._children[concept_id])

    def ancestors(self, concept_id: str) -> frozenset[str]:
        """Transitive closure of the broader relation (excluding the concept)."""
        cached = self._ancestors.get(concept_id)
        if cached is not None:
            return cached
        seen: set[str] = set()
        stack = list(self[concept_id].broader_ids)
        while stack:
            node = stack.pop()
            if node not in seen:
                seen.add(node)
                stack.extend(self.entries[node].broader_ids)
        result = frozenset(seen)
        self._ancestors[concept_id] = result
        return result

    def _check_acyclic(self) -> None:
        WHITE, GREY, BLACK = 0, 1, 2
        color = dict.fromkeys(self.entries, WHITE)
        for root in self.entries:
            if color[root] != WHITE:
                continue
            stack = [(root, iter(self.entries[root].broader_ids))]
            color[root] = GREY
            while stack:
                node, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    color[node] = BLACK
                    stack.pop()
                elif color[nxt] == GREY:
                    raise TaxonomyError(f"cycle in broader relations through {nxt!r}")
                elif color[nxt] == WHITE:
                    color[nxt] = GREY
                    stack.append((nxt, iter(self.entries[nxt].broader_ids)))


def relatedness(a: str, b: str, taxonomy: Taxonomy) -> Relatedness:
    """Position of ``b`` relative to ``a`` in the hierarchy.

    ``ANCESTOR`` means ``b`` is broader than ``a``. Siblings share at least
    one direct broader concept.
    """
    ea, eb = taxonomy[a], taxonomy[b]
    if a == b:
        return Relatedness.IDENTICAL
    if b in taxonomy.ancestors(a):
        return Relatedness.ANCESTOR
    if a in taxonomy.ancestors(b):
        return Relatedness.DESCENDANT
    if set(ea.broader_ids) & set(eb.broader_ids):
        return Relatedness.SIBLING
    return Relatedness.UNRELATED


def render_passage(entry: TaxonomyEntry, mode: str = "label") -> str:
    if mode == "label":
        return entry.preferred_label
    if mode == "label+description":
        desc = entry.description.strip()
        return f"{entry.preferred_label}: {desc}" if desc else entry.preferred_label
    raise ValueError(f"unknown passage mode {mode!r}")


# ---------------------------------------------------------------- CSV I/O


def _require_columns(reader: csv.DictReader, needed: Iterable[str], source: str) -> None:
    missing = [c for c in needed if c not in (reader.fieldnames or ())]
    if missing:
        raise TaxonomyError(f"{source}: missing column(s) {', '.join(missing)}")


def _split_alt(cell: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in cell.splitlines() if s.strip())


def parse_taxonomy(skills_csv: str, relations_csv: str | None = None) -> Taxonomy:
    reader = csv.DictReader(io.StringIO(skills_csv))
    _require_columns(reader, SKILL_COLUMNS, "skills file")
    rows: dict[str, dict] = {}
    for rowno, row in enumerate(reader, start=2):
        uri = (row["conceptUri"] or "").strip()
        if not uri:
            raise TaxonomyError(f"skills file row {rowno}: empty conceptUri")
        if uri in rows:
            raise TaxonomyError(f"skills file row {rowno}: duplicate conceptUri {uri!r}")
        label = (row["preferredLabel"] or "").strip()
        if not label:
            raise TaxonomyError(f"skills file row {rowno}: empty preferredLabel")
        rows[uri] = {
            "preferred_label": label,
            "alt_labels": _split_alt(row["altLabels"] or ""),
            "description": (row["description"] or "").strip(),
            "broader_ids": [],
        }

    if relations_csv is not None:
        reader = csv.DictReader(io.StringIO(relations_csv))
        _require_columns(reader, RELATION_COLUMNS, "relations file")
        for rowno, row in enumerate(reader, start=2):
            child = (row["conceptUri"] or "").strip()
            parent = (row["broaderUri"] or "").strip()
            for uri in (child, parent):
                if uri not in rows:
                    raise TaxonomyError(
                        f"relations file row {rowno}: unknown concept {uri!r}"
                    )
            if parent not in rows[child]["broader_ids"]:
                rows[child]["broader_ids"].append(parent)

    return Taxonomy(
        {uri: TaxonomyEntry(uri, **fields) for uri, fields in rows.items()}
    )


def load_taxonomy(skills_path: str | Path, relations_path: str | Path | None = None) -> Taxonomy:
    skills = Path(skills_path).read_text(encoding="utf-8-sig")
    relations = (
        Path(relations_path).read_text(encoding="utf-8-sig") if relations_path else None
    )
    return parse_taxonomy(skills, relations)


def dump_taxonomy(taxonomy: Taxonomy) -> tuple[str, str]:
    """Return (skills_csv, relations_csv) text."""
    skills = io.StringIO()
    w = csv.writer(skills, lineterminator="\n")
    w.writerow(SKILL_COLUMNS)
    for e in taxonomy:
        w.writerow([e.id, e.preferred_label, "\n".join(e.alt_labels), e.description])
    rels = io.StringIO()
    w = csv.writer(rels, lineterminator="\n")
    w.writerow(RELATION_COLUMNS)
    for child, parent in taxonomy.edges:
        w.writerow([child, parent])
    return skills.getvalue(), rels.getvalue()


def save_taxonomy(taxonomy: Taxonomy, skills_path: str | Path, relations_path: str | Path) -> None:
    skills, rels = dump_taxonomy(taxonomy)
    Path(skills_path).write_text(skills, encoding="utf-8")
    Path(relations_path).write_text(rels, encoding="utf-8")


def to_jsonl(taxonomy: Taxonomy) -> str:
    lines = [
        json.dumps(
            {
                "id": e.id,
                "preferred_label": e.preferred_label,
                "alt_labels": list(e.alt_labels),
                "description": e.description,
                "broader_ids": list(e.broader_ids),
            },
            ensure_ascii=False,
        )
        for e in taxonomy
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def labels_by_id(taxonomy: Taxonomy) -> Mapping[str, str]:
    return {e.id: e.preferred_label for e in taxonomy}
