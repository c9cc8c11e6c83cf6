"""Heterogeneous sentence graphs: typed nodes, dependency edges, noun-subsentence edges.

Node ids follow a fixed layout: 0 is the left subsentence, 1..N are word
nodes aligned with 1-based token indices, N+1 is the right subsentence.
With ``no_subsentence_nodes`` the two subsentence nodes collapse into a
single global node with id 0 and the layout becomes 0 (global), 1..N.

Dependency arcs become bidirectional edges sharing one label; nouns emit a
directed edge to each subsentence node labeled by containment (``con`` for
the side holding the noun, ``not-con`` for the other).  Every node carries
a self-loop so no attention neighborhood is empty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .corpus import DEFAULT_NOUN_TAGS, AnnotatedSentence, Vocabulary


class NodeKind(Enum):
    NOUN = "noun"
    NON_NOUN = "non-noun"
    SUBSENTENCE = "subsentence"


class EdgeKind(Enum):
    DEP = "dep"
    DEP_OTHER = "dep_other"
    NS_CON = "ns_con"
    NS_NOT_CON = "ns_not_con"
    SELF_LOOP = "self_loop"


@dataclass(frozen=True)
class EdgeLabel:
    kind: EdgeKind
    rel: str | None = None  # set only for kind == DEP

    def display(self) -> str:
        if self.kind is EdgeKind.DEP:
            return self.rel or "?"
        return {
            EdgeKind.DEP_OTHER: "other",
            EdgeKind.NS_CON: "con",
            EdgeKind.NS_NOT_CON: "not-con",
            EdgeKind.SELF_LOOP: "self",
        }[self.kind]


@dataclass(frozen=True)
class GraphOptions:
    """Graph-construction switches; the last three implement ablation variants."""

    top_k_deprels: int = 8
    noun_tags: frozenset[str] = DEFAULT_NOUN_TAGS
    no_dependency: bool = False
    no_pos: bool = False
    no_subsentence_nodes: bool = False


@dataclass
class HeteroGraph:
    n_tokens: int
    node_kinds: list[NodeKind]
    edges: list[tuple[int, int, EdgeLabel]]
    left_node: int
    right_node: int
    left_range: tuple[int, int] | None  # inclusive 1-based token range, None if empty
    right_range: tuple[int, int] | None
    merged: bool
    n_edge_labels: int
    # dense views for the encoder
    src_ids: np.ndarray = field(repr=False, default=None)
    dst_ids: np.ndarray = field(repr=False, default=None)
    label_ids: np.ndarray = field(repr=False, default=None)
    _incoming: list[list[tuple[int, EdgeLabel]]] = field(repr=False, default=None)

    @property
    def n_nodes(self) -> int:
        return len(self.node_kinds)

    def kind_counts(self) -> dict[str, int]:
        counts = {k.value: 0 for k in NodeKind}
        for kind in self.node_kinds:
            counts[kind.value] += 1
        return counts

    def edge_label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, _, label in self.edges:
            key = label.display()
            counts[key] = counts.get(key, 0) + 1
        return dict(sorted(counts.items()))


def edge_label_index(vocab: Vocabulary, top_k: int = 8) -> dict[EdgeLabel, int]:
    """Dense id per edge label: top-k relations, then other/con/not-con/self."""
    top = vocab.top_deprels(top_k)
    index = {EdgeLabel(EdgeKind.DEP, rel): i for i, rel in enumerate(top)}
    base = len(top)
    index[EdgeLabel(EdgeKind.DEP_OTHER)] = base
    index[EdgeLabel(EdgeKind.NS_CON)] = base + 1
    index[EdgeLabel(EdgeKind.NS_NOT_CON)] = base + 2
    index[EdgeLabel(EdgeKind.SELF_LOOP)] = base + 3
    return index


def build_graph(
    sentence: AnnotatedSentence,
    vocab: Vocabulary,
    options: GraphOptions | None = None,
) -> HeteroGraph:
    """Construct the typed sentence graph; deterministic and label-blind."""
    opts = options or GraphOptions()
    n = len(sentence.tokens)
    c = sentence.comparator_index
    top = set(vocab.top_deprels(opts.top_k_deprels))
    label_ids_map = edge_label_index(vocab, opts.top_k_deprels)

    if opts.no_pos:
        word_kinds = [NodeKind.NON_NOUN] * n
        ns_sources = list(range(1, n + 1))
    else:
        word_kinds = [
            NodeKind.NOUN if tok.pos in opts.noun_tags else NodeKind.NON_NOUN
            for tok in sentence.tokens
        ]
        ns_sources = [i for i in range(1, n + 1) if word_kinds[i - 1] is NodeKind.NOUN]

    # Word node id always equals the 1-based token index.
    if opts.no_subsentence_nodes:
        node_kinds = [NodeKind.SUBSENTENCE] + word_kinds
        left_node = right_node = 0
    else:
        node_kinds = [NodeKind.SUBSENTENCE] + word_kinds + [NodeKind.SUBSENTENCE]
        left_node, right_node = 0, n + 1

    left_range = (1, c - 1) if c > 1 else None
    right_range = (c + 1, n) if c < n else None

    edges: list[tuple[int, int, EdgeLabel]] = []
    if opts.no_dependency:
        # Ablation: fully connect word nodes, dropping arc identities.
        other = EdgeLabel(EdgeKind.DEP_OTHER)
        for i in range(1, n + 1):
            for j in range(1, n + 1):
                if i != j:
                    edges.append((i, j, other))
    else:
        for i, tok in enumerate(sentence.tokens, start=1):
            if tok.head == 0:
                continue
            if tok.deprel in top:
                label = EdgeLabel(EdgeKind.DEP, tok.deprel)
            else:
                label = EdgeLabel(EdgeKind.DEP_OTHER)
            edges.append((i, tok.head, label))
            edges.append((tok.head, i, label))

    con = EdgeLabel(EdgeKind.NS_CON)
    not_con = EdgeLabel(EdgeKind.NS_NOT_CON)
    for i in ns_sources:
        if opts.no_subsentence_nodes:
            edges.append((i, 0, con))
            continue
        in_left = left_range is not None and left_range[0] <= i <= left_range[1]
        in_right = right_range is not None and right_range[0] <= i <= right_range[1]
        # The comparator itself belongs to neither side.
        edges.append((i, left_node, con if in_left else not_con))
        edges.append((i, right_node, con if in_right else not_con))

    self_loop = EdgeLabel(EdgeKind.SELF_LOOP)
    for node in range(len(node_kinds)):
        edges.append((node, node, self_loop))

    m = len(node_kinds)
    incoming: list[list[tuple[int, EdgeLabel]]] = [[] for _ in range(m)]
    for src, dst, label in edges:
        incoming[dst].append((src, label))

    return HeteroGraph(
        n_tokens=n,
        node_kinds=node_kinds,
        edges=edges,
        left_node=left_node,
        right_node=right_node,
        left_range=left_range,
        right_range=right_range,
        merged=opts.no_subsentence_nodes,
        n_edge_labels=len(label_ids_map),
        src_ids=np.array([e[0] for e in edges], dtype=np.int64),
        dst_ids=np.array([e[1] for e in edges], dtype=np.int64),
        label_ids=np.array([label_ids_map[e[2]] for e in edges], dtype=np.int64),
        _incoming=incoming,
    )


def neighbors(graph: HeteroGraph, node_id: int) -> set[tuple[int, EdgeLabel]]:
    """Sources of edges pointing into ``node_id`` (self included via its loop)."""
    if not (0 <= node_id < graph.n_nodes):
        raise ValueError(f"node id {node_id} out of range [0, {graph.n_nodes})")
    return set(graph._incoming[node_id])


_KIND_STYLE = {
    NodeKind.NOUN: ("ellipse", "lightblue"),
    NodeKind.NON_NOUN: ("ellipse", "palegreen"),
    NodeKind.SUBSENTENCE: ("box", "orange"),
}


def to_dot(graph: HeteroGraph, sentence: AnnotatedSentence) -> str:
    """Deterministic DOT rendering with node kinds and edge labels."""
    lines = ["digraph sentence_graph {", "  rankdir=LR;"]
    for node, kind in enumerate(graph.node_kinds):
        if kind is NodeKind.SUBSENTENCE:
            if graph.merged:
                text = "global"
            else:
                text = "left" if node == graph.left_node else "right"
        else:
            text = f"{node}:{sentence.tokens[node - 1].surface}"
        shape, color = _KIND_STYLE[kind]
        lines.append(
            f'  n{node} [label="{text}", kind="{kind.value}", shape={shape},'
            f' style=filled, fillcolor={color}];'
        )
    for src, dst, label in graph.edges:
        lines.append(f'  n{src} -> n{dst} [label="{label.display()}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
