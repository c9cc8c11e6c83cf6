"""Joint training of the decoding-order models with ensemble distillation.

Each batch runs every model forward, sums their per-token tag logits into a
constant ensemble target, and optimizes each model on
lambda * supervised + (1 - lambda) * KL(ensemble || model), where lambda
rises linearly from 0 to 1 over training (direction and fixed values are
configurable). Model selection afterwards keeps the single model with the
best dev extraction F1.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorcore as tc
from .corpus import TAG_VALUES, AnnotatedSentence, Vocabulary
from .encoder import EncoderConfig, encode_graph
from .evalkit import PRF, score_classification, score_extraction
from .hetgraph import GraphOptions, HeteroGraph, build_graph
from .heads import (
    CLASS_LITERAL,
    CLASS_SIMILE,
    TAG_TO_ID,
    SimileModel,
    TagForward,
    classify,
    forward_tagger,
    init_model,
    predict,
    spans_from_gold,
    word_states,
)
from .tensorcore import DiffArray, NonFiniteError, ParamStore

MODEL_ORDER = ("p", "t", "v")
MODE_OF = {"p": "parallel", "t": "tenor_first", "v": "vehicle_first"}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    alpha: float = 0.1  # weight of the classification term in the supervised loss
    aux_weight: float = 1.0  # weight of the first-stage tagger loss
    seed: int = 0
    lambda_mode: str = "increase"  # increase | decrease | fixed
    lambda_fixed: float = 1.0
    disabled_models: tuple[str, ...] = ()
    share_encoder: bool = False
    restore_best: bool = True  # reload each model's best dev snapshot at the end

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("TrainConfig: alpha must lie in [0, 1]")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("TrainConfig: batch_size and epochs must be >= 1")
        if self.lambda_mode not in ("increase", "decrease", "fixed"):
            raise ValueError(f"TrainConfig: unknown lambda_mode '{self.lambda_mode}'")
        if not 0.0 <= self.lambda_fixed <= 1.0:
            raise ValueError("TrainConfig: lambda_fixed must lie in [0, 1]")
        bad = set(self.disabled_models) - set(MODEL_ORDER)
        if bad:
            raise ValueError(f"TrainConfig: unknown model names {sorted(bad)}")
        if set(self.disabled_models) >= set(MODEL_ORDER):
            raise ValueError("TrainConfig: at least one model must stay enabled")


@dataclass
class ModelBundle:
    models: dict[str, SimileModel]  # keyed p/t/v in fixed order
    vocab: Vocabulary
    config: EncoderConfig
    label_emb_dim: int

    def names(self) -> tuple[str, ...]:
        return tuple(self.models)


def build_bundle(
    vocab: Vocabulary,
    config: EncoderConfig,
    rng: np.random.Generator,
    label_emb_dim: int = 100,
    disabled_models: tuple[str, ...] = (),
    share_encoder: bool = False,
    n_edge_labels: int | None = None,
) -> ModelBundle:
    if n_edge_labels is None:
        n_edge_labels = min(8, len(vocab.deprel_ranking)) + 4
    vocab_size = len(vocab.token_to_id)
    models: dict[str, SimileModel] = {}
    shared = None
    for name in MODEL_ORDER:
        if name in disabled_models:
            continue
        model = init_model(
            MODE_OF[name], vocab_size, n_edge_labels, config, rng,
            label_emb_dim=label_emb_dim, shared_encoder=shared,
        )
        if share_encoder and shared is None:
            shared = model.enc
        models[name] = model
    return ModelBundle(models=models, vocab=vocab, config=config,
                       label_emb_dim=label_emb_dim)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class SentenceForward:
    cls_dist: DiffArray  # (1, 2)
    tag_fwd: TagForward
    tag_dist: DiffArray  # (N, 3)


def forward_sentence(
    model: SimileModel,
    sentence: AnnotatedSentence,
    graph: HeteroGraph,
    vocab: Vocabulary,
    teacher_forcing: bool = True,
) -> SentenceForward:
    g_final = encode_graph(sentence, graph, vocab, model.enc, model.config)[-1]
    cls_dist = classify(g_final, graph, model.head)
    words = word_states(g_final, graph)
    gold = sentence.tags if teacher_forcing else None
    tag_fwd = forward_tagger(model, words, gold)
    tag_dist = tc.softmax(tag_fwd.final_logits, axis=-1)
    return SentenceForward(cls_dist=cls_dist, tag_fwd=tag_fwd, tag_dist=tag_dist)


def supervised_loss(
    out: SentenceForward,
    sentence: AnnotatedSentence,
    alpha: float,
    aux_weight: float = 1.0,
) -> DiffArray:
    """alpha * classification loss + (1 - alpha) * tagging loss.

    The tagging loss sums per-token cross entropy of the final 3-way
    distribution; sequential models add their first-stage 2-way cross
    entropy, scaled by aux_weight, into the same term.
    """
    gold_class = CLASS_SIMILE if sentence.is_simile else CLASS_LITERAL
    j_sc = tc.cross_entropy(out.cls_dist, gold_class)
    gold_ids = [TAG_TO_ID[t] for t in sentence.tags]
    j_ce = tc.cross_entropy_rows(out.tag_dist, gold_ids)
    if out.tag_fwd.first_logits is not None:
        first_dist = tc.softmax(out.tag_fwd.first_logits, axis=-1)
        aux = tc.cross_entropy_rows(first_dist, out.tag_fwd.first_golds)
        j_ce = tc.add(j_ce, tc.scale(aux, aux_weight))
    return tc.add(tc.scale(j_sc, alpha), tc.scale(j_ce, 1.0 - alpha))


def ensemble_distribution(*logits: np.ndarray) -> np.ndarray:
    """Per-token softmax of the summed logits; a constant training target."""
    if not logits:
        raise ValueError("ensemble_distribution: no logits given")
    first = np.asarray(logits[0])
    total = np.zeros_like(first, dtype=np.float64)
    for z in logits:
        z = np.asarray(z)
        if z.shape != first.shape:
            raise ValueError(
                f"ensemble_distribution: shape mismatch {z.shape} vs {first.shape}"
            )
        total += z
    shifted = total - total.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def kl_to_ensemble(tag_dist: DiffArray, ensemble: np.ndarray) -> DiffArray:
    """Mean over tokens of KL(ensemble || model); target is constant."""
    n = tag_dist.data.shape[0]
    return tc.scale(tc.kl_divergence(ensemble, tag_dist), 1.0 / n)


def lambda_at(step: int, total_steps: int) -> float:
    if total_steps < 1:
        raise ValueError("lambda_at: total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"lambda_at: step {step} outside [0, {total_steps}]")
    return step / total_steps


def training_lambda(config: TrainConfig, step: int, total_steps: int) -> float:
    """Lambda used at a 0-based optimization step.

    The linear schedule is stretched over total_steps - 1 so the first step
    sees exactly 0 and the last exactly 1 (reversed for 'decrease').
    """
    if config.lambda_mode == "fixed":
        return config.lambda_fixed
    lam = lambda_at(step, max(total_steps - 1, 1))
    return lam if config.lambda_mode == "increase" else 1.0 - lam


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def epoch_batches(
    n_sentences: int, batch_size: int, rng: np.random.Generator
) -> list[list[int]]:
    """Shuffled sentence indices chunked into batches (last may be short)."""
    order = rng.permutation(n_sentences).tolist()
    return [order[i:i + batch_size] for i in range(0, n_sentences, batch_size)]


@dataclass
class TrainResult:
    bundle: ModelBundle
    epoch_logs: list[dict] = field(default_factory=list)
    best: dict[str, dict] = field(default_factory=dict)
    total_steps: int = 0


def train(
    bundle: ModelBundle,
    train_sents: list[AnnotatedSentence],
    dev_sents: list[AnnotatedSentence],
    config: TrainConfig,
    graph_options: GraphOptions | None = None,
    log_path: str | os.PathLike | None = None,
    checkpoint_dir: str | os.PathLike | None = None,
) -> TrainResult:
    """Run the full distillation schedule; deterministic under the seed.

    Per epoch the log gains one JSON record with the epoch-end lambda, the
    mean batch loss per model, and dev P/R/F1 per model for both subtasks.
    Non-finite values abort with the offending epoch and batch named.  When
    ``restore_best`` is set each model's weights are rolled back to its best
    dev extraction epoch after the schedule finishes.
    """
    config.validate()
    if not train_sents:
        raise ValueError("train: empty training corpus")
    if config.restore_best and dev_sents and len(bundle.models) > 1:
        enc_ids = {id(model.enc["tok_emb"]) for model in bundle.models.values()}
        if len(enc_ids) < len(bundle.models):
            raise ValueError(
                "train: restore_best needs per-model encoders; disable it or "
                "build the bundle without a shared encoder"
            )
    rng = np.random.default_rng(config.seed)
    opts = graph_options or GraphOptions()
    train_graphs = [build_graph(s, bundle.vocab, opts) for s in train_sents]
    dev_graphs = [build_graph(s, bundle.vocab, opts) for s in dev_sents]
    n_batches = math.ceil(len(train_sents) / config.batch_size)
    total_steps = config.epochs * n_batches
    result = TrainResult(bundle=bundle, total_steps=total_steps)
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    step = 0
    try:
        for epoch in range(1, config.epochs + 1):
            epoch_loss = {name: 0.0 for name in bundle.models}
            lam = 0.0
            for bi, batch in enumerate(
                epoch_batches(len(train_sents), config.batch_size, rng), start=1
            ):
                lam = training_lambda(config, step, total_steps)
                try:
                    batch_losses = _batch_step(
                        bundle, train_sents, train_graphs, batch, lam, config
                    )
                except NonFiniteError as exc:
                    raise RuntimeError(
                        f"training aborted: non-finite value in epoch {epoch}, "
                        f"batch {bi}: {exc}"
                    ) from exc
                for name, value in batch_losses.items():
                    epoch_loss[name] += value
                step += 1
            record = {
                "epoch": epoch,
                "lambda": lam,
                "losses": {k: v / n_batches for k, v in epoch_loss.items()},
            }
            if dev_sents:
                dev_scores = {
                    name: evaluate_model(model, dev_sents, dev_graphs, bundle.vocab)
                    for name, model in bundle.models.items()
                }
                record["dev"] = {
                    name: {task: prf.to_record() for task, prf in scores.items()}
                    for name, scores in dev_scores.items()
                }
                _track_best(result, bundle, dev_scores, epoch, checkpoint_dir)
            result.epoch_logs.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
        if config.restore_best:
            for name, info in result.best.items():
                store = bundle.models[name].store
                for pname, data in info["params"].items():
                    store.params[pname].data = data.copy()
    finally:
        if log_file:
            log_file.close()
    return result


def _batch_step(
    bundle: ModelBundle,
    sents: list[AnnotatedSentence],
    graphs: list[HeteroGraph],
    batch: list[int],
    lam: float,
    config: TrainConfig,
) -> dict[str, float]:
    outs = {
        name: [
            forward_sentence(model, sents[i], graphs[i], bundle.vocab)
            for i in batch
        ]
        for name, model in bundle.models.items()
    }
    targets = None
    if lam < 1.0:
        targets = [
            ensemble_distribution(
                *(outs[name][j].tag_fwd.final_logits.data for name in bundle.models)
            )
            for j in range(len(batch))
        ]
    losses: dict[str, DiffArray] = {}
    for name in bundle.models:
        terms = []
        for j, i in enumerate(batch):
            sup = supervised_loss(outs[name][j], sents[i], config.alpha,
                                  config.aux_weight)
            if lam >= 1.0:
                terms.append(sup)
            else:
                kl = kl_to_ensemble(outs[name][j].tag_dist, targets[j])
                if lam <= 0.0:
                    terms.append(kl)
                else:
                    terms.append(tc.add(tc.scale(sup, lam), tc.scale(kl, 1.0 - lam)))
        total = terms[0]
        for t in terms[1:]:
            total = tc.add(total, t)
        losses[name] = tc.scale(total, 1.0 / len(batch))
    # All backwards run before any update so shared weights see the full
    # gradient; the optimizer then consumes (and clears) each gradient once.
    for name in bundle.models:
        tc.backward(losses[name])
    for model in bundle.models.values():
        model.store.adam_step(config.learning_rate)
    return {name: float(loss.data) for name, loss in losses.items()}


def _track_best(
    result: TrainResult,
    bundle: ModelBundle,
    dev_scores: dict[str, dict[str, PRF]],
    epoch: int,
    checkpoint_dir: str | os.PathLike | None,
) -> None:
    for name, scores in dev_scores.items():
        f1 = scores["extraction"].f1
        prev = result.best.get(name)
        if prev is not None and f1 <= prev["extraction_f1"]:
            continue
        snapshot = {
            pname: p.data.copy() for pname, p in bundle.models[name].store.params.items()
        }
        result.best[name] = {
            "epoch": epoch,
            "extraction_f1": f1,
            "classification_f1": scores["classification"].f1,
            "params": snapshot,
        }
        if checkpoint_dir:
            tc.save_checkpoint(
                os.path.join(checkpoint_dir, f"model_{name}.best.json"),
                snapshot,
                extra={"model": name, "mode": bundle.models[name].mode, "epoch": epoch},
            )


# ---------------------------------------------------------------------------
# evaluation and selection
# ---------------------------------------------------------------------------

def evaluate_model(
    model: SimileModel,
    sents: list[AnnotatedSentence],
    graphs: list[HeteroGraph],
    vocab: Vocabulary,
) -> dict[str, PRF]:
    preds = [predict(model, s, g, vocab) for s, g in zip(sents, graphs)]
    cls = score_classification([p.label for p in preds], [s.label for s in sents])
    ext = score_extraction(
        [p.spans for p in preds], [spans_from_gold(s.tags) for s in sents]
    )
    return {"classification": cls, "extraction": ext}


def select_from_scores(scores: dict[str, tuple[float, float]]) -> str:
    """Highest extraction F1; ties fall to classification F1, then p < t < v."""
    if not scores:
        raise ValueError("select_from_scores: no candidates")
    best = None
    for name in MODEL_ORDER:
        if name not in scores:
            continue
        ext, cls = scores[name]
        if best is None or (ext, cls) > (scores[best][0], scores[best][1]):
            best = name
    return best


def select_best(
    bundle: ModelBundle,
    dev_sents: list[AnnotatedSentence],
    graph_options: GraphOptions | None = None,
) -> tuple[str, dict[str, dict[str, PRF]]]:
    if not dev_sents:
        raise ValueError("select_best: empty dev set")
    opts = graph_options or GraphOptions()
    graphs = [build_graph(s, bundle.vocab, opts) for s in dev_sents]
    all_scores = {
        name: evaluate_model(model, dev_sents, graphs, bundle.vocab)
        for name, model in bundle.models.items()
    }
    compact = {
        name: (s["extraction"].f1, s["classification"].f1)
        for name, s in all_scores.items()
    }
    return select_from_scores(compact), all_scores


def mean_ensemble_kl(
    bundle: ModelBundle,
    sents: list[AnnotatedSentence],
    graphs: list[HeteroGraph],
) -> dict[str, float]:
    """Mean per-token KL(ensemble || model) over a corpus, per model."""
    totals = {name: 0.0 for name in bundle.models}
    n_tokens = 0
    for sent, graph in zip(sents, graphs):
        dists = {}
        logits = []
        for name, model in bundle.models.items():
            out = forward_sentence(model, sent, graph, bundle.vocab)
            dists[name] = out.tag_dist.data
            logits.append(out.tag_fwd.final_logits.data)
        target = ensemble_distribution(*logits)
        n_tokens += len(sent.tokens)
        for name in bundle.models:
            q = np.maximum(dists[name], tc.EPS_LOG)
            terms = np.where(
                target > 0,
                target * (np.log(np.maximum(target, tc.EPS_LOG)) - np.log(q)),
                0.0,
            )
            totals[name] += float(terms.sum())
    return {name: total / max(n_tokens, 1) for name, total in totals.items()}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

BUNDLE_META = "bundle.json"
VOCAB_FILE = "vocab.json"
SELECTED_FILE = "selected.json"


def _graph_options_record(opts: GraphOptions) -> dict:
    return {
        "top_k_deprels": opts.top_k_deprels,
        "noun_tags": sorted(opts.noun_tags),
        "no_dependency": opts.no_dependency,
        "no_pos": opts.no_pos,
        "no_subsentence_nodes": opts.no_subsentence_nodes,
    }


def _graph_options_from_record(rec: dict) -> GraphOptions:
    return GraphOptions(
        top_k_deprels=rec["top_k_deprels"],
        noun_tags=frozenset(rec["noun_tags"]),
        no_dependency=rec["no_dependency"],
        no_pos=rec["no_pos"],
        no_subsentence_nodes=rec["no_subsentence_nodes"],
    )


def save_bundle(
    bundle: ModelBundle,
    out_dir: str | os.PathLike,
    graph_options: GraphOptions | None = None,
    selected: str | None = None,
    selected_scores: dict | None = None,
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    opts = graph_options or GraphOptions()
    meta = {
        "encoder": asdict(bundle.config),
        "label_emb_dim": bundle.label_emb_dim,
        "models": {name: m.mode for name, m in bundle.models.items()},
        "graph_options": _graph_options_record(opts),
    }
    with open(os.path.join(out_dir, BUNDLE_META), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, VOCAB_FILE), "w", encoding="utf-8") as fh:
        json.dump(bundle.vocab.to_json(), fh, sort_keys=True)
    for name, model in bundle.models.items():
        tc.save_checkpoint(
            os.path.join(out_dir, f"model_{name}.json"),
            {pname: p.data for pname, p in model.store.params.items()},
            extra={"model": name, "mode": model.mode},
        )
    if selected is not None:
        with open(os.path.join(out_dir, SELECTED_FILE), "w", encoding="utf-8") as fh:
            json.dump(
                {"selected": selected, "scores": selected_scores or {}},
                fh, indent=2, sort_keys=True,
            )


def _load_meta(model_dir: str | os.PathLike) -> tuple[dict, Vocabulary, GraphOptions]:
    meta_path = os.path.join(model_dir, BUNDLE_META)
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"{meta_path}: missing bundle metadata")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(os.path.join(model_dir, VOCAB_FILE), "r", encoding="utf-8") as fh:
        vocab = Vocabulary.from_json(json.load(fh))
    return meta, vocab, _graph_options_from_record(meta["graph_options"])


def _load_one_model(
    model_dir: str | os.PathLike, name: str, meta: dict, vocab: Vocabulary
) -> SimileModel:
    config = EncoderConfig(**meta["encoder"])
    path = os.path.join(model_dir, f"model_{name}.json")
    if not os.path.exists(path):
        raise FileNotFoundError(f"{path}: missing model checkpoint")
    arrays, _ = tc.load_checkpoint(path)
    n_edge_labels = arrays["enc/edge_emb"].shape[0]
    model = init_model(
        meta["models"][name], len(vocab.token_to_id), n_edge_labels, config,
        np.random.default_rng(0), label_emb_dim=meta["label_emb_dim"],
    )
    if set(arrays) != set(model.store.params):
        missing = sorted(set(model.store.params) - set(arrays))
        extra = sorted(set(arrays) - set(model.store.params))
        raise ValueError(
            f"{path}: parameter names do not match (missing {missing}, extra {extra})"
        )
    for pname, arr in arrays.items():
        p = model.store.params[pname]
        if p.data.shape != arr.shape:
            raise ValueError(
                f"{path}: shape mismatch for '{pname}': "
                f"{arr.shape} vs expected {p.data.shape}"
            )
        p.data = arr
    return model


def load_selected(
    model_dir: str | os.PathLike,
) -> tuple[str, SimileModel, Vocabulary, GraphOptions]:
    """Load only the dev-selected model, per the single-model inference rule."""
    meta, vocab, opts = _load_meta(model_dir)
    sel_path = os.path.join(model_dir, SELECTED_FILE)
    if not os.path.exists(sel_path):
        raise FileNotFoundError(f"{sel_path}: missing selected-model marker")
    with open(sel_path, "r", encoding="utf-8") as fh:
        name = json.load(fh)["selected"]
    return name, _load_one_model(model_dir, name, meta, vocab), vocab, opts


def load_bundle(
    model_dir: str | os.PathLike,
) -> tuple[ModelBundle, GraphOptions]:
    meta, vocab, opts = _load_meta(model_dir)
    models = {
        name: _load_one_model(model_dir, name, meta, vocab) for name in meta["models"]
    }
    config = EncoderConfig(**meta["encoder"])
    bundle = ModelBundle(models=models, vocab=vocab, config=config,
                         label_emb_dim=meta["label_emb_dim"])
    return bundle, opts
