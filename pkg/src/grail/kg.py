"""Directed multi-relational graph container and triple-file I/O."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field


@dataclass
class KnowledgeGraph:
    """Immutable-by-convention store of (head, relation, tail) triples.

    Entities and relations are interned to dense integer ids in first-appearance
    order; every downstream module works on ids only.
    """

    entity_names: list[str]
    relation_names: list[str]
    triples: list[tuple[int, int, int]]
    duplicates_dropped: int = 0
    entity_ids: dict[str, int] = field(default_factory=dict)
    relation_ids: dict[str, int] = field(default_factory=dict)
    out_index: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    in_index: dict[tuple[int, int], list[int]] = field(default_factory=dict)
    undirected_index: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.entity_ids:
            self.entity_ids = {n: i for i, n in enumerate(self.entity_names)}
        if not self.relation_ids:
            self.relation_ids = {n: i for i, n in enumerate(self.relation_names)}
        if not self.out_index and not self.in_index and not self.undirected_index:
            out, inn, und = build_indices(self.triples)
            self.out_index = out
            self.in_index = inn
            self.undirected_index = und

    @property
    def num_entities(self) -> int:
        return len(self.entity_names)

    @property
    def num_relations(self) -> int:
        return len(self.relation_names)

    def check_entity(self, node: int) -> None:
        if not (0 <= node < self.num_entities):
            raise ValueError(f"invalid entity id {node} (graph has {self.num_entities} entities)")

    def check_relation(self, rel: int) -> None:
        if not (0 <= rel < self.num_relations):
            raise ValueError(f"invalid relation id {rel} (graph has {self.num_relations} relations)")


def build_indices(
    triples: list[tuple[int, int, int]],
) -> tuple[dict[tuple[int, int], list[int]], dict[tuple[int, int], list[int]], dict[int, list[int]]]:
    """Build out/in per-(node, relation) indices and the undirected neighbor index."""
    out: dict[tuple[int, int], list[int]] = {}
    inn: dict[tuple[int, int], list[int]] = {}
    und: dict[int, set[int]] = {}
    for h, r, t in triples:
        out.setdefault((h, r), []).append(t)
        inn.setdefault((t, r), []).append(h)
        und.setdefault(h, set()).add(t)
        und.setdefault(t, set()).add(h)
    for v in out.values():
        v.sort()
    for v in inn.values():
        v.sort()
    und_sorted = {k: sorted(v) for k, v in und.items()}
    return out, inn, und_sorted


def parse_triples(text: str) -> tuple[list[str], list[str], list[tuple[int, int, int]], int]:
    """Parse tab-separated triple lines into vocabularies and id triples.

    Ids are assigned in first-appearance order (heads before tails within a
    line).  Exact duplicate triples after id mapping are dropped and counted.
    """
    entity_names: list[str] = []
    entity_ids: dict[str, int] = {}
    relation_names: list[str] = []
    relation_ids: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    dropped = 0

    def ent(name: str) -> int:
        i = entity_ids.get(name)
        if i is None:
            i = len(entity_names)
            entity_ids[name] = i
            entity_names.append(name)
        return i

    def rel(name: str) -> int:
        i = relation_ids.get(name)
        if i is None:
            i = len(relation_names)
            relation_ids[name] = i
            relation_names.append(name)
        return i

    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        parts = line.split("\t")
        if len(parts) != 3 or any(p == "" for p in parts):
            raise ValueError(f"malformed triple on line {lineno}: {line!r}")
        h, r, t = parts
        trip = (ent(h), rel(r), ent(t))
        if trip in seen:
            dropped += 1
            continue
        seen.add(trip)
        triples.append(trip)
    if not triples:
        raise ValueError("no triples found in input")
    return entity_names, relation_names, triples, dropped


def load_triples(text: str) -> KnowledgeGraph:
    """Build a KnowledgeGraph from tab-separated triple text (one triple per line)."""
    entity_names, relation_names, triples, dropped = parse_triples(text)
    return KnowledgeGraph(entity_names, relation_names, triples, duplicates_dropped=dropped)


def load_triples_file(path: str) -> KnowledgeGraph:
    with open(path, encoding="utf-8") as f:
        return load_triples(f.read())


def to_lines(g: KnowledgeGraph) -> str:
    """Serialize back to triple lines (inverse of load_triples up to dropped dupes)."""
    rows = []
    for h, r, t in g.triples:
        rows.append(f"{g.entity_names[h]}\t{g.relation_names[r]}\t{g.entity_names[t]}")
    return "\n".join(rows) + "\n"


def save_triples_file(g: KnowledgeGraph, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(to_lines(g))


def from_parts(
    entity_names: list[str],
    relation_names: list[str],
    triples: list[tuple[int, int, int]],
) -> KnowledgeGraph:
    """Construct a graph from prebuilt vocabularies and id triples (dedups exact repeats)."""
    seen: set[tuple[int, int, int]] = set()
    kept: list[tuple[int, int, int]] = []
    dropped = 0
    n, m = len(entity_names), len(relation_names)
    for h, r, t in triples:
        if not (0 <= h < n and 0 <= t < n):
            raise ValueError(f"triple ({h},{r},{t}) has entity id out of range {n}")
        if not (0 <= r < m):
            raise ValueError(f"triple ({h},{r},{t}) has relation id out of range {m}")
        if (h, r, t) in seen:
            dropped += 1
            continue
        seen.add((h, r, t))
        kept.append((h, r, t))
    return KnowledgeGraph(list(entity_names), list(relation_names), kept, duplicates_dropped=dropped)


def without_triples(g: KnowledgeGraph, removed: list[tuple[int, int, int]]) -> KnowledgeGraph:
    """Copy of g with the given triples removed; vocabularies are preserved."""
    gone = set(removed)
    kept = [t for t in g.triples if t not in gone]
    return KnowledgeGraph(list(g.entity_names), list(g.relation_names), kept)


def out_neighbors(g: KnowledgeGraph, node: int, rel: int) -> list[int]:
    """Sorted tails t of edges (node, rel, t)."""
    g.check_entity(node)
    g.check_relation(rel)
    return list(g.out_index.get((node, rel), []))


def in_neighbors(g: KnowledgeGraph, node: int, rel: int) -> list[int]:
    """Sorted heads h of edges (h, rel, node)."""
    g.check_entity(node)
    g.check_relation(rel)
    return list(g.in_index.get((node, rel), []))


def khop_nodes(g: KnowledgeGraph, node: int, k: int) -> set[int]:
    """All nodes within undirected BFS distance k of node (node itself included)."""
    g.check_entity(node)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    seen = {node}
    frontier = deque([(node, 0)])
    while frontier:
        cur, d = frontier.popleft()
        if d == k:
            continue
        for nxt in g.undirected_index.get(cur, []):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append((nxt, d + 1))
    return seen


def graphs_equal(a: KnowledgeGraph, b: KnowledgeGraph) -> bool:
    return (
        a.entity_names == b.entity_names
        and a.relation_names == b.relation_names
        and a.triples == b.triples
        and a.out_index == b.out_index
        and a.in_index == b.in_index
        and a.undirected_index == b.undirected_index
    )
