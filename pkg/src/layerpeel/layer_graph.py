"""Layer graph: color-region nodes with occlusion and interrupted-shape edges.

The JSON schema is the one the annotator prompts ask for::

    {"nodes": [{"id", "description", "color", "part_of_object"?}],
     "edges": [{"source", "target", "relationship"}]}

VLMs like to wrap that block in Markdown fences and sprinkle ``//`` comments
through it; both are stripped before decoding.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import DanglingEdge, InvalidJson, SchemaViolation

OCCLUDES = "occludes"
INTERRUPTED = "interrupted_shape"
RELATIONSHIPS = (OCCLUDES, INTERRUPTED)


@dataclass(frozen=True)
class GraphNode:
    id: str
    description: str
    color: str
    part_of_object: str | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise SchemaViolation(f"node id must be a non-empty string, got {self.id!r}")
        if not isinstance(self.description, str) or not self.description.strip():
            raise SchemaViolation(f"node {self.id!r}: description must be non-empty text")
        if not isinstance(self.color, str):
            raise SchemaViolation(f"node {self.id!r}: color must be text")
        if self.part_of_object is not None and not isinstance(self.part_of_object, str):
            raise SchemaViolation(f"node {self.id!r}: part_of_object must be text")

    def to_json(self) -> dict:
        d = {"id": self.id, "description": self.description, "color": self.color}
        if self.part_of_object is not None:
            d["part_of_object"] = self.part_of_object
        return d


@dataclass(frozen=True)
class GraphEdge:
    source: str
    target: str
    relationship: str

    def __post_init__(self):
        for name in ("source", "target"):
            v = getattr(self, name)
            if not isinstance(v, str) or not v:
                raise SchemaViolation(f"edge {name} must be a non-empty string, got {v!r}")
        if self.relationship not in RELATIONSHIPS:
            raise SchemaViolation(f"unknown relationship {self.relationship!r}")
        if self.source == self.target:
            raise SchemaViolation(f"self-loop on {self.source!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        """Identity of the edge; interrupted_shape is unordered."""
        if self.relationship == INTERRUPTED:
            a, b = sorted((self.source, self.target))
            return (a, b, INTERRUPTED)
        return (self.source, self.target, OCCLUDES)

    def to_json(self) -> dict:
        return {"source": self.source, "target": self.target, "relationship": self.relationship}


@dataclass(frozen=True, eq=False)
class LayerGraph:
    nodes: tuple = ()
    edges: tuple = ()

    def __post_init__(self):
        nodes = tuple(self.nodes)
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise SchemaViolation(f"duplicate node ids {dup}")
        known = set(ids)
        seen: set = set()
        edges = []
        for e in self.edges:
            for end in (e.source, e.target):
                if end not in known:
                    raise DanglingEdge(f"edge {e.source}->{e.target} references unknown node {end!r}")
            if e.key in seen:
                continue
            seen.add(e.key)
            edges.append(e)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(edges))

    def __eq__(self, other):
        if not isinstance(other, LayerGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.edge_keys() == other.edge_keys()

    __hash__ = None

    def equivalent(self, other: "LayerGraph") -> bool:
        """Equality that ignores node order as well."""
        return {n.id: n for n in self.nodes} == {n.id: n for n in other.nodes} and self.edge_keys() == other.edge_keys()

    def edge_keys(self) -> frozenset:
        return frozenset(e.key for e in self.edges)

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def node(self, node_id: str) -> GraphNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def to_json(self) -> dict:
        return {"nodes": [n.to_json() for n in self.nodes], "edges": [e.to_json() for e in self.edges]}


def serialize(g: LayerGraph) -> str:
    """Canonical JSON text; parse_graph(serialize(g)) == g."""
    return json.dumps(g.to_json(), indent=2, ensure_ascii=False)


def strip_json_comments(text: str) -> str:
    """Drop ``//`` line comments that sit outside string literals."""
    out = []
    i, n = 0, len(text)
    in_str = False
    while i < n:
        c = text[i]
        if in_str:
            out.append(c)
            if c == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if c == '"':
                in_str = False
        elif c == '"':
            in_str = True
            out.append(c)
        elif c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                i += 1
            continue
        else:
            out.append(c)
        i += 1
    return "".join(out)


def _json_object_span(text: str) -> str:
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise InvalidJson("no JSON object found")
    return text[start:end + 1]


def _node_from(obj) -> GraphNode:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"node must be an object, got {type(obj).__name__}")
    for key in ("id", "description", "color"):
        if key not in obj:
            raise SchemaViolation(f"node missing {key!r}: {obj!r}")
    return GraphNode(obj["id"], obj["description"], obj["color"], obj.get("part_of_object"))


def _edge_from(obj) -> GraphEdge:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"edge must be an object, got {type(obj).__name__}")
    for key in ("source", "target", "relationship"):
        if key not in obj:
            raise SchemaViolation(f"edge missing {key!r}: {obj!r}")
    return GraphEdge(obj["source"], obj["target"], obj["relationship"])


def graph_from_json(data) -> LayerGraph:
    if not isinstance(data, dict):
        raise SchemaViolation("graph must be a JSON object")
    for key in ("nodes", "edges"):
        if key not in data:
            raise SchemaViolation(f"graph missing {key!r}")
        if not isinstance(data[key], list):
            raise SchemaViolation(f"{key!r} must be an array")
    nodes = [_node_from(n) for n in data["nodes"]]
    edges = [_edge_from(e) for e in data["edges"]]
    return LayerGraph(tuple(nodes), tuple(edges))


def parse_graph(text: str) -> LayerGraph:
    if not isinstance(text, str):
        raise InvalidJson("graph text must be a string")
    body = _json_object_span(strip_json_comments(text))
    try:
        data = json.loads(body)
    except (json.JSONDecodeError, RecursionError) as e:
        raise InvalidJson(str(e)) from None
    return graph_from_json(data)


def non_occluded_nodes(g: LayerGraph) -> set[str]:
    """Node ids never targeted by an ``occludes`` edge."""
    targets = {e.target for e in g.edges if e.relationship == OCCLUDES}
    return {n.id for n in g.nodes if n.id not in targets}


def occlusion_cycles(g: LayerGraph) -> list[list[str]]:
    """Strongly connected groups of ``occludes`` edges (reported, never rejected)."""
    succ: dict[str, list[str]] = {n.id: [] for n in g.nodes}
    for e in g.edges:
        if e.relationship == OCCLUDES:
            succ[e.source].append(e.target)
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set = set()
    stack: list[str] = []
    out: list[list[str]] = []
    counter = 0
    for root in succ:
        if root in index:
            continue
        work = [(root, 0)]
        while work:
            v, i = work.pop()
            if i == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack.add(v)
            if i < len(succ[v]):
                work.append((v, i + 1))
                w = succ[v][i]
                if w not in index:
                    work.append((w, 0))
                elif w in on_stack:
                    low[v] = min(low[v], index[w])
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                if len(comp) > 1:
                    out.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return out


@dataclass(frozen=True)
class GraphDiff:
    nodes_added: tuple = ()
    nodes_removed: tuple = ()
    edges_added: tuple = ()
    edges_removed: tuple = ()
    attribute_changes: tuple = ()  # (node id, field, old, new)
    renamed: tuple = ()  # (old id, new id)

    @property
    def is_empty(self) -> bool:
        return not any(
            (self.nodes_added, self.nodes_removed, self.edges_added, self.edges_removed, self.attribute_changes, self.renamed)
        )

    def to_json(self) -> dict:
        return {
            "nodes_added": [n.to_json() for n in self.nodes_added],
            "nodes_removed": list(self.nodes_removed),
            "edges_added": [e.to_json() for e in self.edges_added],
            "edges_removed": [e.to_json() for e in self.edges_removed],
            "attribute_changes": [list(c) for c in self.attribute_changes],
            "renamed": [list(r) for r in self.renamed],
        }


def _rename_graph(g: LayerGraph, mapping: dict[str, str]) -> LayerGraph:
    if not mapping:
        return g
    nodes = [GraphNode(mapping.get(n.id, n.id), n.description, n.color, n.part_of_object) for n in g.nodes]
    edges = [GraphEdge(mapping.get(e.source, e.source), mapping.get(e.target, e.target), e.relationship) for e in g.edges]
    return LayerGraph(tuple(nodes), tuple(edges))


def diff_graphs(prev: LayerGraph, next: LayerGraph, match: str = "id") -> GraphDiff:
    """Change report turning ``prev`` into ``next``.

    ``match="auto"`` pairs nodes whose ids changed by exact
    ``(description, color)`` before falling back to add/remove.
    """
    renamed = []
    if match == "auto":
        prev_ids, next_ids = set(prev.node_ids), set(next.node_ids)
        orphans = [n for n in prev.nodes if n.id not in next_ids]
        for n in next.nodes:
            if n.id in prev_ids:
                continue
            for o in orphans:
                if (o.description, o.color) == (n.description, n.color):
                    renamed.append((o.id, n.id))
                    orphans.remove(o)
                    break
    elif match != "id":
        raise ValueError(f"unknown match mode {match!r}")
    base = _rename_graph(prev, dict(renamed))
    before = {n.id: n for n in base.nodes}
    after = {n.id: n for n in next.nodes}
    added = tuple(after[i] for i in next.node_ids if i not in before)
    removed = tuple(i for i in base.node_ids if i not in after)
    changes = []
    for i in base.node_ids:
        if i in after:
            for f in ("description", "color", "part_of_object"):
                old, new = getattr(before[i], f), getattr(after[i], f)
                if old != new:
                    changes.append((i, f, old, new))
    bk = {e.key: e for e in base.edges}
    ak = {e.key: e for e in next.edges}
    return GraphDiff(
        nodes_added=added,
        nodes_removed=removed,
        edges_added=tuple(e for e in next.edges if e.key not in bk),
        edges_removed=tuple(e for e in base.edges if e.key not in ak),
        attribute_changes=tuple(changes),
        renamed=tuple(renamed),
    )


def apply_diff(prev: LayerGraph, diff: GraphDiff) -> LayerGraph:
    g = _rename_graph(prev, dict(diff.renamed))
    gone = set(diff.nodes_removed)
    nodes = {n.id: n for n in g.nodes if n.id not in gone}
    for node_id, f, _old, new in diff.attribute_changes:
        n = nodes[node_id]
        fields = {"description": n.description, "color": n.color, "part_of_object": n.part_of_object, f: new}
        nodes[node_id] = GraphNode(node_id, **fields)
    for n in diff.nodes_added:
        nodes[n.id] = n
    dropped = {e.key for e in diff.edges_removed}
    edges = [e for e in g.edges if e.key not in dropped] + list(diff.edges_added)
    return LayerGraph(tuple(nodes.values()), tuple(edges))
