"""Sentence encoding: contextual token states, gloss fusion, graph attention.

The token encoder is a compact stand-in for a pretrained transformer:
learned token and position embeddings followed by a configurable number of
single-head scaled dot-product self-attention blocks with residual
connections. Noun states are then augmented with pooled dictionary-gloss
embeddings, node states are initialized from token states (subsentence
nodes pool their token range), and L graph-attention layers propagate
information along the typed edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensorcore as tc
from .corpus import CLS_TOKEN, SEP_TOKEN, AnnotatedSentence, Vocabulary
from .hetgraph import HeteroGraph
from .tensorcore import DiffArray, ParamStore


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 300
    n_selfattn_layers: int = 2
    n_gat_layers: int = 2
    edge_emb_dim: int = 50
    leaky_slope: float = 0.01
    max_tokens: int = 100
    max_positions: int = 128
    use_gloss_fusion: bool = True

    def validate(self) -> None:
        if self.d_model <= 0 or self.edge_emb_dim <= 0:
            raise ValueError("EncoderConfig: dimensions must be positive")
        if self.n_selfattn_layers < 0 or self.n_gat_layers < 0:
            raise ValueError("EncoderConfig: layer counts must be non-negative")
        if self.max_tokens <= 0:
            raise ValueError("EncoderConfig: max_tokens must be positive")
        if self.max_positions < self.max_tokens + 2:
            raise ValueError("EncoderConfig: max_positions must cover max_tokens + 2")


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int,
           shape: tuple[int, ...] | None = None) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, shape if shape is not None else (fan_in, fan_out))


EMB_INIT_STD = 0.1
# Edge labels must already steer attention at step zero or both subsentence
# nodes aggregate the same neighborhood and their states stay identical.
EDGE_EMB_INIT_STD = 1.0
# The sigmoid gate compresses aggregated values toward 0.5; a wider value
# projection keeps node states spread enough to carry gradient.
GAT_VALUE_GAIN = 4.0
GAT_SCORE_GAIN = 2.0
# Definition content has to outweigh surface identity, otherwise nouns with
# the same definition phrase start no closer than unrelated ones.
GLOSS_W_GAIN = 8.0


def init_encoder_params(
    store: ParamStore,
    vocab_size: int,
    n_edge_labels: int,
    config: EncoderConfig,
    rng: np.random.Generator,
    prefix: str = "enc",
) -> dict[str, DiffArray]:
    """Create all encoder weights in ``store`` and return them keyed locally."""
    config.validate()
    d = config.d_model
    p: dict[str, DiffArray] = {}

    def add(key: str, data: np.ndarray) -> None:
        p[key] = store.add(f"{prefix}/{key}", data)

    add("tok_emb", rng.normal(0.0, EMB_INIT_STD, (vocab_size, d)))
    add("pos_emb", rng.normal(0.0, EMB_INIT_STD, (config.max_positions, d)))
    for layer in range(config.n_selfattn_layers):
        for w in ("wq", "wk", "wv"):
            add(f"sa{layer}/{w}", glorot(rng, d, d))
    add("gloss/w", glorot(rng, d, d) * GLOSS_W_GAIN)
    add("gloss/b", np.zeros(d))
    add("edge_emb", rng.normal(0.0, EDGE_EMB_INIT_STD, (n_edge_labels, config.edge_emb_dim)))
    for layer in range(config.n_gat_layers):
        add(f"gat{layer}/wq", glorot(rng, d, d))
        add(f"gat{layer}/wk", glorot(rng, d, d))
        add(f"gat{layer}/wv", glorot(rng, d, d) * GAT_VALUE_GAIN)
        add(f"gat{layer}/wa", glorot(rng, 2 * d + config.edge_emb_dim, 1) * GAT_SCORE_GAIN)
    return p


def encode_tokens(
    sentence: AnnotatedSentence,
    vocab: Vocabulary,
    params: dict[str, DiffArray],
    config: EncoderConfig,
) -> DiffArray:
    """Contextual states, one row per position: CLS, tokens 1..N, SEP."""
    n = len(sentence.tokens)
    if n > config.max_tokens:
        raise ValueError(f"sentence has {n} tokens, limit is {config.max_tokens}")
    ids = (
        [vocab.token_to_id[CLS_TOKEN]]
        + [vocab.token_id(t.surface) for t in sentence.tokens]
        + [vocab.token_to_id[SEP_TOKEN]]
    )
    rows = tc.pick_rows(params["tok_emb"], ids)
    pos = tc.pick_rows(params["pos_emb"], list(range(len(ids))))
    h = tc.add(rows, pos)
    inv_sqrt_d = 1.0 / math.sqrt(config.d_model)
    for layer in range(config.n_selfattn_layers):
        q = tc.matmul(h, params[f"sa{layer}/wq"])
        k = tc.matmul(h, params[f"sa{layer}/wk"])
        v = tc.matmul(h, params[f"sa{layer}/wv"])
        scores = tc.scale(tc.matmul(q, tc.transpose(k)), inv_sqrt_d)
        att = tc.softmax(scores, axis=-1)
        h = tc.add(h, tc.matmul(att, v))
    return h


def fuse_definitions(
    sentence: AnnotatedSentence,
    h: DiffArray,
    vocab: Vocabulary,
    params: dict[str, DiffArray],
) -> DiffArray:
    """Add a projected mean-pooled gloss embedding to each glossed noun row."""
    if not sentence.glosses:
        return h
    noun_indices = sorted(sentence.glosses)
    pooled = []
    for i in noun_indices:
        gloss_ids = [vocab.token_id(w) for w in sentence.glosses[i]]
        pooled.append(tc.mean_pool(tc.pick_rows(params["tok_emb"], gloss_ids),
                                   list(range(len(gloss_ids)))))
    stacked = pooled[0] if len(pooled) == 1 else tc.concat(pooled, axis=0)
    delta = tc.add(tc.matmul(stacked, params["gloss/w"]), params["gloss/b"])
    # Token i sits at row i of h (row 0 is the CLS surrogate).
    return tc.add_rows_at(h, noun_indices, delta)


def init_node_states(h: DiffArray, graph: HeteroGraph) -> DiffArray:
    """g^(0): word node i takes h_i; subsentence nodes mean-pool their range.

    A merged graph has one global node instead of the two subsentence
    nodes; it starts from the CLS-surrogate state (row 0 of h).
    """
    n = graph.n_tokens
    words = tc.pick_rows(h, list(range(1, n + 1)))
    if graph.merged:
        whole = tc.pick_rows(h, [0])
        return tc.concat([whole, words], axis=0)
    left = tc.mean_pool(h, _range_rows(graph.left_range))
    right = tc.mean_pool(h, _range_rows(graph.right_range))
    return tc.concat([left, words, right], axis=0)


def _range_rows(token_range: tuple[int, int] | None) -> list[int]:
    if token_range is None:
        return []
    lo, hi = token_range
    return list(range(lo, hi + 1))


def gat_layer(
    g: DiffArray,
    graph: HeteroGraph,
    params: dict[str, DiffArray],
    layer: int,
    config: EncoderConfig,
) -> DiffArray:
    """One graph-attention step over incoming edges.

    For node i with incoming edges from j: score = LeakyReLU of a learned
    map over [Wq g_i ; Wk g_j ; e_ij], attention is a softmax over i's
    incoming edges, and the update is sigmoid of the attention-weighted sum
    of Wv g_j.
    """
    m = graph.n_nodes
    q = tc.matmul(g, params[f"gat{layer}/wq"])
    k = tc.matmul(g, params[f"gat{layer}/wk"])
    v = tc.matmul(g, params[f"gat{layer}/wv"])
    e = tc.pick_rows(params["edge_emb"], graph.label_ids)
    feat = tc.concat([tc.pick_rows(q, graph.dst_ids), tc.pick_rows(k, graph.src_ids), e],
                     axis=1)
    z = tc.leaky_relu(tc.matmul(feat, params[f"gat{layer}/wa"]), config.leaky_slope)
    alpha = tc.segment_softmax(tc.reshape(z, (len(graph.edges),)), graph.dst_ids, m)
    agg = tc.segment_aggregate(alpha, v, graph.src_ids, graph.dst_ids, m)
    return tc.sigmoid(agg)


def encode_graph(
    sentence: AnnotatedSentence,
    graph: HeteroGraph,
    vocab: Vocabulary,
    params: dict[str, DiffArray],
    config: EncoderConfig,
) -> list[DiffArray]:
    """Full pipeline; returns node states per layer, g^(0) through g^(L)."""
    h = encode_tokens(sentence, vocab, params, config)
    if config.use_gloss_fusion:
        h = fuse_definitions(sentence, h, vocab, params)
    states = [init_node_states(h, graph)]
    for layer in range(config.n_gat_layers):
        states.append(gat_layer(states[-1], graph, params, layer, config))
    return states
