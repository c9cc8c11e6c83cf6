"""Task heads and the composed model.

Three model variants share one encoder architecture and differ only in how
they produce the final 3-way tag distribution over {T, V, O}:

- parallel: one linear layer per token.
- tenor-first: a 2-way stage finds tenor tokens, their pooled state
  conditions a second 3-way stage.
- vehicle-first: same with the vehicle extracted first.

Sentence classification reads only the two subsentence states and their
element-wise absolute difference, projected into a label-embedding space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .corpus import TAG_VALUES, AnnotatedSentence, Vocabulary
from .encoder import (
    EMB_INIT_STD,
    EncoderConfig,
    encode_graph,
    glorot,
    init_encoder_params,
)
from .hetgraph import HeteroGraph
from .tensorcore import DiffArray, ParamStore

CLASSES = ("literal", "simile")
CLASS_LITERAL, CLASS_SIMILE = 0, 1

TAG_TO_ID = {t: i for i, t in enumerate(TAG_VALUES)}
TAG_T, TAG_V, TAG_O = TAG_TO_ID["T"], TAG_TO_ID["V"], TAG_TO_ID["O"]

FIRST_O, FIRST_C1 = 0, 1

MODES = ("parallel", "tenor_first", "vehicle_first")
# Word states live in (0, 1), so plain glorot taggers start nearly flat and
# the fresh ensemble has no content to teach; a wider init gives each
# decoding order a distinct, confident starting opinion.
TAGGER_INIT_GAIN = 4.0

ROLE_OF_TAG = {"T": "tenor", "V": "vehicle"}


@dataclass(frozen=True)
class Span:
    start: int  # 1-based, inclusive
    end: int
    role: str  # "tenor" | "vehicle"


@dataclass
class SpanPrediction:
    label: str  # "simile" | "literal"
    p_simile: float
    spans: list[Span] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "label": self.label,
            "p_simile": self.p_simile,
            "spans": [
                {"start": s.start, "end": s.end, "role": s.role} for s in self.spans
            ],
        }


@dataclass
class SimileModel:
    mode: str
    store: ParamStore
    enc: dict[str, DiffArray]
    head: dict[str, DiffArray]
    config: EncoderConfig

    @property
    def first_component(self) -> str | None:
        if self.mode == "tenor_first":
            return "T"
        if self.mode == "vehicle_first":
            return "V"
        return None


def init_head_params(
    store: ParamStore,
    mode: str,
    config: EncoderConfig,
    rng: np.random.Generator,
    label_emb_dim: int = 100,
    prefix: str = "head",
) -> dict[str, DiffArray]:
    if mode not in MODES:
        raise ValueError(f"unknown model mode '{mode}'")
    d = config.d_model
    p: dict[str, DiffArray] = {}

    def add(key: str, data: np.ndarray) -> None:
        p[key] = store.add(f"{prefix}/{key}", data)

    add("cls/w", glorot(rng, 3 * d, label_emb_dim))
    add("cls/emb", rng.normal(0.0, EMB_INIT_STD, (len(CLASSES), label_emb_dim)))
    if mode == "parallel":
        add("ext/w", glorot(rng, d, 3) * TAGGER_INIT_GAIN)
        add("ext/b", np.zeros(3))
    else:
        add("first/w", glorot(rng, d, 2) * TAGGER_INIT_GAIN)
        add("first/b", np.zeros(2))
        add("second/w", glorot(rng, 2 * d, 3) * TAGGER_INIT_GAIN)
        add("second/b", np.zeros(3))
    return p


def init_model(
    mode: str,
    vocab_size: int,
    n_edge_labels: int,
    config: EncoderConfig,
    rng: np.random.Generator,
    label_emb_dim: int = 100,
    shared_encoder: dict[str, DiffArray] | None = None,
) -> SimileModel:
    """Fresh model with its own ParamStore.

    Passing ``shared_encoder`` reuses another model's encoder weights; the
    store registers them so checkpoints stay complete, and the optimizer's
    skip-on-empty-grad rule keeps shared weights from double updates.
    """
    store = ParamStore()
    if shared_encoder is None:
        enc = init_encoder_params(store, vocab_size, n_edge_labels, config, rng)
    else:
        enc = shared_encoder
        for key, param in shared_encoder.items():
            store.register(f"enc/{key}", param)
    head = init_head_params(store, mode, config, rng, label_emb_dim)
    return SimileModel(mode=mode, store=store, enc=enc, head=head, config=config)


# ---------------------------------------------------------------------------
# heads
# ---------------------------------------------------------------------------

def classify(g_final: DiffArray, graph: HeteroGraph, head: dict[str, DiffArray]) -> DiffArray:
    """(1, 2) distribution over {literal, simile} from the subsentence states."""
    g_left = tc.pick_rows(g_final, [graph.left_node])
    g_right = tc.pick_rows(g_final, [graph.right_node])
    feat = tc.concat([g_left, g_right, tc.abs_(tc.sub(g_left, g_right))], axis=1)
    logits = tc.matmul(tc.matmul(feat, head["cls/w"]), tc.transpose(head["cls/emb"]))
    return tc.softmax(logits, axis=-1)


def word_states(g_final: DiffArray, graph: HeteroGraph) -> DiffArray:
    return tc.pick_rows(g_final, list(range(1, graph.n_tokens + 1)))


def tag_logits_parallel(words: DiffArray, head: dict[str, DiffArray]) -> DiffArray:
    return tc.add(tc.matmul(words, head["ext/w"]), head["ext/b"])


def tag_logits_first(words: DiffArray, head: dict[str, DiffArray]) -> DiffArray:
    return tc.add(tc.matmul(words, head["first/w"]), head["first/b"])


def pool_component(words: DiffArray, row_indices: list[int]) -> DiffArray:
    """Mean state over the selected word rows; zero row when none selected."""
    return tc.mean_pool(words, row_indices)


def tag_logits_second(
    words: DiffArray, g_c1: DiffArray, head: dict[str, DiffArray]
) -> DiffArray:
    n = words.data.shape[0]
    feat = tc.concat([words, tc.repeat_row(g_c1, n)], axis=1)
    return tc.add(tc.matmul(feat, head["second/w"]), head["second/b"])


def project_first_golds(tags: tuple[str, ...] | list[str], component: str) -> list[int]:
    """Gold targets for the 2-way first stage: component tag -> C1, rest -> O."""
    return [FIRST_C1 if t == component else FIRST_O for t in tags]


@dataclass
class TagForward:
    """Everything the losses and the ensemble need from one tagger pass."""

    final_logits: DiffArray  # (N, 3)
    first_logits: DiffArray | None = None  # (N, 2) for sequential modes
    first_golds: list[int] | None = None  # teacher-forcing targets


def forward_tagger(
    model: SimileModel,
    words: DiffArray,
    gold_tags: tuple[str, ...] | None,
) -> TagForward:
    """Final 3-way logits for any mode.

    Sequential modes pool the first component from gold tags when provided
    (teacher forcing) and from the first stage's argmax otherwise.
    """
    if model.mode == "parallel":
        return TagForward(final_logits=tag_logits_parallel(words, model.head))
    component = model.first_component
    first_logits = tag_logits_first(words, model.head)
    if gold_tags is not None:
        rows = [i for i, t in enumerate(gold_tags) if t == component]
        first_golds = project_first_golds(gold_tags, component)
    else:
        picked = first_logits.data.argmax(axis=1)
        rows = [i for i, c in enumerate(picked) if c == FIRST_C1]
        first_golds = None
    g_c1 = pool_component(words, rows)
    final_logits = tag_logits_second(words, g_c1, model.head)
    return TagForward(
        final_logits=final_logits, first_logits=first_logits, first_golds=first_golds
    )


# ---------------------------------------------------------------------------
# span decoding
# ---------------------------------------------------------------------------

def decode_tags(tag_dist: np.ndarray) -> list[str]:
    """Per-token argmax over {T, V, O}; any tie involving O resolves to O."""
    tags = []
    for row in np.asarray(tag_dist):
        if row[TAG_O] >= row.max():
            tags.append("O")
        else:
            tags.append(TAG_VALUES[int(row.argmax())])
    return tags


def spans_from_tags(tags: list[str]) -> list[Span]:
    """Maximal runs of identical non-O tags, 1-based inclusive bounds."""
    spans = []
    start = None
    prev = "O"
    for i, tag in enumerate(tags + ["O"], start=1):
        if tag != prev:
            if prev != "O":
                spans.append(Span(start=start, end=i - 1, role=ROLE_OF_TAG[prev]))
            start = i if tag != "O" else None
        prev = tag
    return spans


def decode_spans(tag_dist: np.ndarray) -> list[Span]:
    return spans_from_tags(decode_tags(tag_dist))


def spans_from_gold(tags: tuple[str, ...] | list[str]) -> list[Span]:
    return spans_from_tags(list(tags))


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

SIMILE_THRESHOLD = 0.5


def predict(
    model: SimileModel,
    sentence: AnnotatedSentence,
    graph: HeteroGraph,
    vocab: Vocabulary,
) -> SpanPrediction:
    """Classify, then extract spans only for sentences judged similes."""
    g_final = encode_graph(sentence, graph, vocab, model.enc, model.config)[-1]
    cls = classify(g_final, graph, model.head)
    p_simile = float(cls.data[0, CLASS_SIMILE])
    if p_simile <= SIMILE_THRESHOLD:
        return SpanPrediction(label="literal", p_simile=p_simile)
    words = word_states(g_final, graph)
    fwd = forward_tagger(model, words, gold_tags=None)
    dist = tc.softmax(fwd.final_logits, axis=-1)
    return SpanPrediction(label="simile", p_simile=p_simile, spans=decode_spans(dist.data))
