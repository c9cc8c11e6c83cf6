import numpy as np
import pytest

from gradutil import check_grads
from simrec import heads
from simrec import tensorcore as tc
from simrec.corpus import build_vocab
from simrec.encoder import EncoderConfig
from simrec.heads import Span, SpanPrediction
from simrec.hetgraph import build_graph
from simrec.tensorcore import DiffArray, ParamStore


def head_only(mode, config, seed=0, label_emb_dim=7):
    store = ParamStore()
    params = heads.init_head_params(
        store, mode, config, np.random.default_rng(seed), label_emb_dim
    )
    return store, params


def softmax_np(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@pytest.fixture
def graph_and_states(fig_sentence, tiny_config, rng):
    vocab = build_vocab([fig_sentence])
    graph = build_graph(fig_sentence, vocab)
    g_final = DiffArray(
        rng.uniform(0.0, 1.0, size=(graph.n_nodes, tiny_config.d_model)),
        requires_grad=True,
    )
    return graph, g_final


class TestClassify:
    def test_is_valid_distribution(self, graph_and_states, tiny_config):
        graph, g_final = graph_and_states
        _, head = head_only("parallel", tiny_config)
        dist = heads.classify(g_final, graph, head)
        assert dist.data.shape == (1, 2)
        np.testing.assert_allclose(dist.data.sum(), 1.0, atol=1e-12)

    def test_matches_numpy_oracle(self, graph_and_states, tiny_config):
        graph, g_final = graph_and_states
        _, head = head_only("parallel", tiny_config)
        dist = heads.classify(g_final, graph, head)
        gl = g_final.data[graph.left_node]
        gr = g_final.data[graph.right_node]
        feat = np.concatenate([gl, gr, np.abs(gl - gr)])[None, :]
        logits = feat @ head["cls/w"].data @ head["cls/emb"].data.T
        np.testing.assert_allclose(dist.data, softmax_np(logits), rtol=1e-12)

    def test_identical_subsentences_zero_difference_feature(
        self, graph_and_states, tiny_config
    ):
        graph, g_final = graph_and_states
        _, head = head_only("parallel", tiny_config)
        g_final.data[graph.right_node] = g_final.data[graph.left_node]
        dist = heads.classify(g_final, graph, head)
        g = g_final.data[graph.left_node]
        feat = np.concatenate([g, g, np.zeros_like(g)])[None, :]
        logits = feat @ head["cls/w"].data @ head["cls/emb"].data.T
        np.testing.assert_allclose(dist.data, softmax_np(logits), rtol=1e-12)

    def test_gradient_against_finite_differences(self, graph_and_states, tiny_config):
        graph, g_final = graph_and_states
        _, head = head_only("parallel", tiny_config)

        def build():
            return tc.cross_entropy(
                tc.reshape(heads.classify(g_final, graph, head), (2,)), 1
            )

        tc.backward(build())
        params = {"g": g_final, "w": head["cls/w"], "emb": head["cls/emb"]}
        check_grads(lambda: float(build().data), params, tol=1e-5)


class TestParallelTagger:
    def test_zero_parameters_give_uniform_rows(self, tiny_config, rng):
        _, head = head_only("parallel", tiny_config)
        head["ext/w"].data[:] = 0.0
        words = DiffArray(rng.normal(size=(5, tiny_config.d_model)))
        dist = tc.softmax(heads.tag_logits_parallel(words, head), axis=-1)
        np.testing.assert_allclose(dist.data, 1 / 3, atol=1e-12)

    def test_identical_rows_identical_distributions(self, tiny_config, rng):
        _, head = head_only("parallel", tiny_config)
        row = rng.normal(size=tiny_config.d_model)
        words = DiffArray(np.stack([row, row, row]))
        dist = tc.softmax(heads.tag_logits_parallel(words, head), axis=-1).data
        np.testing.assert_array_equal(dist[0], dist[1])
        np.testing.assert_array_equal(dist[1], dist[2])

    def test_matches_affine_oracle(self, tiny_config, rng):
        _, head = head_only("parallel", tiny_config)
        words = DiffArray(rng.normal(size=(4, tiny_config.d_model)))
        logits = heads.tag_logits_parallel(words, head)
        np.testing.assert_allclose(
            logits.data, words.data @ head["ext/w"].data + head["ext/b"].data,
            rtol=1e-12,
        )


class TestComponentPooling:
    def test_singleton(self, rng):
        words = DiffArray(rng.normal(size=(4, 6)))
        np.testing.assert_allclose(
            heads.pool_component(words, [2]).data, words.data[2:3]
        )

    def test_empty_gives_zero_row(self, rng):
        words = DiffArray(rng.normal(size=(4, 6)))
        out = heads.pool_component(words, []).data
        assert out.shape == (1, 6)
        assert (out == 0).all()

    def test_mean_of_selected(self, rng):
        words = DiffArray(rng.normal(size=(5, 6)))
        out = heads.pool_component(words, [1, 4]).data
        np.testing.assert_allclose(out[0], words.data[[1, 4]].mean(axis=0))


class TestSequentialStages:
    def test_project_first_golds(self):
        assert heads.project_first_golds(["O", "T", "O"], "T") == [0, 1, 0]
        assert heads.project_first_golds(["O", "T", "V"], "V") == [0, 0, 1]
        assert heads.project_first_golds(["O", "O"], "T") == [0, 0]

    def test_teacher_forcing_pools_gold_component(self, tiny_config, rng):
        store, head = head_only("tenor_first", tiny_config)
        model = heads.SimileModel(
            mode="tenor_first", store=store, enc={}, head=head, config=tiny_config
        )
        words = DiffArray(rng.normal(size=(4, tiny_config.d_model)))
        gold = ("O", "T", "T", "O")
        fwd = heads.forward_tagger(model, words, gold)
        assert fwd.first_golds == [0, 1, 1, 0]
        g_c1 = words.data[[1, 2]].mean(axis=0)
        feat = np.concatenate([words.data, np.tile(g_c1, (4, 1))], axis=1)
        expected = feat @ head["second/w"].data + head["second/b"].data
        np.testing.assert_allclose(fwd.final_logits.data, expected, rtol=1e-12)

    def test_inference_pools_first_stage_argmax(self, tiny_config, rng):
        store, head = head_only("vehicle_first", tiny_config, seed=4)
        model = heads.SimileModel(
            mode="vehicle_first", store=store, enc={}, head=head, config=tiny_config
        )
        words = DiffArray(rng.normal(size=(6, tiny_config.d_model)))
        fwd = heads.forward_tagger(model, words, gold_tags=None)
        assert fwd.first_golds is None
        picked = fwd.first_logits.data.argmax(axis=1)
        rows = [i for i, c in enumerate(picked) if c == heads.FIRST_C1]
        g_c1 = (
            words.data[rows].mean(axis=0) if rows
            else np.zeros(tiny_config.d_model)
        )
        feat = np.concatenate([words.data, np.tile(g_c1, (6, 1))], axis=1)
        expected = feat @ head["second/w"].data + head["second/b"].data
        np.testing.assert_allclose(fwd.final_logits.data, expected, rtol=1e-12)

    def test_zeroed_condition_block_reduces_to_parallel_form(self, tiny_config, rng):
        # Killing the pooled-component columns turns the second stage into
        # a per-token affine map, the parallel head's exact shape.
        d = tiny_config.d_model
        _, head = head_only("tenor_first", tiny_config)
        head["second/w"].data[d:] = 0.0
        words = DiffArray(rng.normal(size=(5, d)))
        g_c1 = heads.pool_component(words, [0, 3])
        logits = heads.tag_logits_second(words, g_c1, head)
        reduced = words.data @ head["second/w"].data[:d] + head["second/b"].data
        np.testing.assert_allclose(logits.data, reduced, atol=1e-12)

    def test_sequential_gradient_with_teacher_forcing(self, tiny_config, rng):
        store, head = head_only("tenor_first", tiny_config)
        model = heads.SimileModel(
            mode="tenor_first", store=store, enc={}, head=head, config=tiny_config
        )
        words = DiffArray(rng.normal(size=(4, tiny_config.d_model)), requires_grad=True)
        gold = ("O", "T", "T", "O")

        def build():
            fwd = heads.forward_tagger(model, words, gold)
            dist = tc.softmax(fwd.final_logits, axis=-1)
            first = tc.softmax(fwd.first_logits, axis=-1)
            return tc.add(
                tc.cross_entropy_rows(dist, [2, 0, 0, 2]),
                tc.cross_entropy_rows(first, fwd.first_golds),
            )

        tc.backward(build())
        params = {
            "words": words,
            "first/w": head["first/w"],
            "second/w": head["second/w"],
            "second/b": head["second/b"],
        }
        check_grads(lambda: float(build().data), params, tol=1e-5)


class TestDecoding:
    def test_tie_with_o_resolves_to_o(self):
        dist = np.array([[1 / 3, 1 / 3, 1 / 3], [0.4, 0.2, 0.4]])
        assert heads.decode_tags(dist) == ["O", "O"]

    def test_clear_winners(self):
        dist = np.array([[0.7, 0.1, 0.2], [0.1, 0.7, 0.2], [0.1, 0.2, 0.7]])
        assert heads.decode_tags(dist) == ["T", "V", "O"]

    def test_runs_become_spans(self):
        spans = heads.spans_from_tags(["O", "T", "T", "O", "V"])
        assert spans == [Span(2, 3, "tenor"), Span(5, 5, "vehicle")]

    def test_adjacent_distinct_tags_split(self):
        spans = heads.spans_from_tags(["T", "V"])
        assert spans == [Span(1, 1, "tenor"), Span(2, 2, "vehicle")]

    def test_all_o_yields_no_spans(self):
        assert heads.spans_from_tags(["O", "O", "O"]) == []

    def test_span_round_trip_random_sequences(self, rng):
        for _ in range(100):
            tags = list(rng.choice(["T", "V", "O"], size=rng.integers(1, 12)))
            spans = heads.spans_from_tags(tags)
            rebuilt = ["O"] * len(tags)
            for s in spans:
                tag = "T" if s.role == "tenor" else "V"
                for i in range(s.start - 1, s.end):
                    rebuilt[i] = tag
            assert rebuilt == tags

    def test_gold_tags_decode_directly(self, fig_sentence):
        spans = heads.spans_from_gold(fig_sentence.tags)
        assert spans == [Span(2, 2, "tenor"), Span(6, 6, "vehicle")]


class TestPredict:
    def make_model(self, fig_sentence, seed=0):
        config = EncoderConfig(
            d_model=10, n_selfattn_layers=1, n_gat_layers=1,
            edge_emb_dim=4, max_tokens=10, max_positions=12,
        )
        vocab = build_vocab([fig_sentence])
        n_edge_labels = min(8, len(vocab.deprel_ranking)) + 4
        model = heads.init_model(
            "parallel", vocab.size, n_edge_labels, config,
            np.random.default_rng(seed), label_emb_dim=6,
        )
        return model, vocab, build_graph(fig_sentence, vocab)

    def test_threshold_gates_extraction(self, fig_sentence):
        model, vocab, graph = self.make_model(fig_sentence)
        first = heads.predict(model, fig_sentence, graph, vocab)
        # Swap the class embeddings: the two logits trade places, so the
        # decision flips and both branches get exercised.
        model.head["cls/emb"].data[:] = model.head["cls/emb"].data[::-1].copy()
        second = heads.predict(model, fig_sentence, graph, vocab)
        np.testing.assert_allclose(
            first.p_simile + second.p_simile, 1.0, atol=1e-12
        )
        low, high = sorted([first, second], key=lambda p: p.p_simile)
        assert low.label == "literal" and low.spans == []
        assert high.label == "simile"

    def test_prediction_record_shape(self, fig_sentence):
        model, vocab, graph = self.make_model(fig_sentence, seed=2)
        pred = heads.predict(model, fig_sentence, graph, vocab)
        rec = pred.to_record()
        assert set(rec) == {"label", "p_simile", "spans"}
        for span in rec["spans"]:
            assert set(span) == {"start", "end", "role"}

    def test_deterministic(self, fig_sentence):
        model, vocab, graph = self.make_model(fig_sentence, seed=5)
        a = heads.predict(model, fig_sentence, graph, vocab)
        b = heads.predict(model, fig_sentence, graph, vocab)
        assert a.to_record() == b.to_record()


class TestModelSetup:
    def test_unknown_mode_rejected(self, tiny_config):
        with pytest.raises(ValueError, match="mode"):
            head_only("backwards", tiny_config)

    def test_shared_encoder_is_registered_not_copied(self, tiny_config):
        rng = np.random.default_rng(0)
        base = heads.init_model("parallel", 20, 10, tiny_config, rng, label_emb_dim=6)
        other = heads.init_model(
            "tenor_first", 20, 10, tiny_config, rng, label_emb_dim=6,
            shared_encoder=base.enc,
        )
        assert other.enc is base.enc
        for key, param in base.enc.items():
            assert other.store.params[f"enc/{key}"] is param

    def test_sequential_head_param_names(self, tiny_config):
        _, head = head_only("vehicle_first", tiny_config)
        assert set(head) == {
            "cls/w", "cls/emb", "first/w", "first/b", "second/w", "second/b"
        }
