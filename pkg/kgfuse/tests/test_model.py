"""
Unit tests for the fusion classifier and its variants
"""

import math

import numpy as np
import pytest

from kgfuse.core.graph import build_graph
from kgfuse.core.model import (
    check_params,
    forward,
    gat_layer,
    glorot_bound,
    global_concat,
    init_params,
    layer_input_dims,
    parameter_shapes,
    project_nodes,
    record_loss,
)
from kgfuse.core.numerics import ParamSet, Param, Tape, constant, grad_check, sum_all
from kgfuse.models.config import FUSION_TABLE_ORDER, FusionVariant, ModelConfig
from kgfuse.models.errors import ConfigurationError
from kgfuse.models.record import KnowledgeSource
from kgfuse.tests.test_graph import random_record

SMALL = {"d_t": 8, "d_v": 8, "d": 8, "d_hidden": 4, "num_classes": 5}


def params_equal(a: ParamSet, b: ParamSet) -> bool:
    if a.names() != b.names():
        return False
    return all(np.array_equal(p.value, b[p.name].value) for p in a)


class TestParameterLayout:
    """Test cases for parameter shapes and initialization"""

    def setup_method(self):
        """Set up the default configuration"""
        self.config = ModelConfig()

    def test_dimension_ledger_with_global_concat(self):
        """Test layer 1 maps 5d and layer 2 maps 5 * heads * d_hidden"""
        shapes = parameter_shapes(self.config)
        assert layer_input_dims(self.config) == [80, 160]
        assert shapes["gat.0.head0.theta"] == (80, 8)
        assert shapes["gat.1.head3.theta"] == (160, 8)
        assert shapes["gat.0.head0.attn"] == (16, 1)
        assert shapes["classifier.hidden.weight"] == (8, 16)
        assert shapes["classifier.output.weight"] == (16, 5)

    def test_dimension_ledger_without_global_concat(self):
        """Test the independent GAT reads plain node states"""
        config = ModelConfig(fusion=FusionVariant.INDEPENDENT_GAT)
        assert layer_input_dims(config) == [16, 32]
        config = ModelConfig(use_global_concat=False)
        assert layer_input_dims(config) == [16, 32]

    def test_variant_specific_tensors(self):
        """Test GCN has no attention vectors and the readout baselines no graph layers"""
        gcn = parameter_shapes(ModelConfig(fusion=FusionVariant.GCN))
        assert "gcn.0.head0.theta" in gcn
        assert not any(name.endswith(".attn") for name in gcn)
        selfatt = parameter_shapes(ModelConfig(fusion=FusionVariant.SELF_ATT))
        assert selfatt["selfatt.query"] == (16, 16)
        assert selfatt["classifier.hidden.weight"] == (16, 16)
        concat = parameter_shapes(ModelConfig(fusion=FusionVariant.CONCAT))
        assert concat["classifier.hidden.weight"] == (64, 16)
        block = parameter_shapes(ModelConfig(fusion=FusionVariant.CONCAT, concat_knowledge_block=True))
        assert block["classifier.hidden.weight"] == (80, 16)

    def test_same_seed_identical(self):
        """Test init_params is deterministic per seed"""
        assert params_equal(init_params(self.config, seed=5), init_params(self.config, seed=5))
        assert not params_equal(init_params(self.config, seed=5), init_params(self.config, seed=6))

    def test_biases_zero_and_weights_bounded(self):
        """Test biases are zero and weights lie inside their Glorot bound"""
        params = init_params(self.config)
        for param in params:
            if param.name.endswith(".bias"):
                assert not param.value.any()
            else:
                assert np.abs(param.value).max() <= glorot_bound(param.shape)

    def test_check_params_rejects_wrong_shape(self):
        """Test a parameter set for another config is rejected"""
        params = init_params(ModelConfig(num_classes=3))
        with pytest.raises(ConfigurationError):
            check_params(self.config, params)


class TestLayers:
    """Test cases for projection, global concatenation and the graph layer"""

    def setup_method(self):
        """Set up a small configuration and record"""
        self.rng = np.random.default_rng(0)
        self.config = ModelConfig(**SMALL)
        self.params = init_params(self.config)
        self.graph = build_graph(random_record(self.rng, 3, 2, 0, d_t=8, d_v=8))

    def test_zero_embedding_projects_to_zero(self):
        """Test a zero embedding with zero bias gives a zero state"""
        record = random_record(self.rng, 0, 0, 0, d_t=8, d_v=8)
        record = record.model_copy(update={"claim_text_emb": [0.0] * 8})
        states = project_nodes(build_graph(record), self.params, Tape())
        assert states.shape == (4, 8)
        assert not states.data[0].any()

    def test_projection_mismatched_dim(self):
        """Test an embedding of the wrong size is a configuration error"""
        graph = build_graph(random_record(self.rng, 1, 0, 0, d_t=6, d_v=8))
        with pytest.raises(ConfigurationError):
            project_nodes(graph, self.params, Tape())

    def test_projection_gradients(self):
        """Test projection gradients against central differences"""
        params = ParamSet([p for p in self.params if p.name.startswith("proj_")])
        report = grad_check(
            lambda tape: sum_all(project_nodes(self.graph, params, tape)), params, tol=1e-5
        )
        assert report.passed, report.failing_tensors

    def test_global_concat_width_and_layout(self):
        """Test 16 -> 80 and the self slot followed by t_c, t_e, o_c, o_e"""
        states = constant(self.rng.standard_normal((6, 16)))
        out = global_concat(states, (0, 1, 4, 5))
        assert out.shape == (6, 80)
        np.testing.assert_array_equal(out.data[0, :16], states.data[0])
        np.testing.assert_array_equal(out.data[0, 16:32], states.data[0])
        np.testing.assert_array_equal(out.data[3, 48:64], states.data[4])

    def test_global_concat_identical_states(self):
        """Test identical states give [v|v|v|v|v]"""
        v = self.rng.standard_normal(4)
        out = global_concat(constant(np.tile(v, (5, 1))), (0, 1, 2, 3))
        np.testing.assert_array_equal(out.data, np.tile(v, (5, 5)))

    def test_uniform_attention_under_symmetry(self):
        """Test identical states and equal factors give 1/|V| everywhere"""
        v = self.rng.standard_normal(6)
        heads = [
            (constant(self.rng.standard_normal((6, 3))), constant(self.rng.standard_normal((6, 1))))
            for _ in range(2)
        ]
        log = []
        out = gat_layer(constant(np.tile(v, (5, 1))), np.ones((5, 5)), heads, is_final=True, attention_log=log)
        for gamma in log:
            np.testing.assert_allclose(gamma, np.full((5, 5), 0.2), atol=1e-12)
        expected = (v @ heads[0][0].data + v @ heads[1][0].data) / 2
        np.testing.assert_allclose(out.data, np.tile(expected, (5, 1)), atol=1e-12)

    def test_hidden_layer_concatenates_heads(self):
        """Test a hidden layer outputs heads * d_hidden columns"""
        heads = [
            (constant(self.rng.standard_normal((6, 3))), constant(self.rng.standard_normal((6, 1))))
            for _ in range(4)
        ]
        out = gat_layer(constant(self.rng.standard_normal((5, 6))), np.ones((5, 5)), heads, is_final=False)
        assert out.shape == (5, 12)

    def test_gcn_coefficients(self):
        """Test heads without attention use factor / row sum"""
        factors = np.array([[1.0, 0.5], [0.25, 1.0]])
        log = []
        states = constant(np.eye(2))
        gat_layer(states, factors, [(constant(np.eye(2)), None)], is_final=True, attention_log=log)
        np.testing.assert_allclose(log[0], [[2 / 3, 1 / 3], [0.2, 0.8]])

    def test_gat_layer_gradients(self):
        """Test theta and attention gradients on a 9-node graph"""
        params = ParamSet([
            Param("theta", self.rng.standard_normal((8, 4))),
            Param("attn", self.rng.standard_normal((8, 1))),
        ])
        states = constant(self.rng.standard_normal((9, 8)))
        factors = np.full((9, 9), 0.7)
        np.fill_diagonal(factors, 1.0)

        def loss(tape):
            heads = [(tape.watch(params["theta"]), tape.watch(params["attn"]))]
            return sum_all(gat_layer(states, factors, heads, is_final=True))

        report = grad_check(loss, params)
        assert report.passed, report.failing_tensors


class TestForward:
    """Test cases for the full forward pass"""

    def setup_method(self):
        """Set up a random record and the default model"""
        self.rng = np.random.default_rng(42)
        self.config = ModelConfig()
        self.params = init_params(self.config)
        self.record = random_record(self.rng, 3, 2, 3, d_t=16, d_v=16)
        self.graph = build_graph(self.record)

    def test_probabilities(self):
        """Test probs sum to 1 and label is the argmax"""
        prediction = forward(self.graph, self.params, self.config)
        assert prediction.probs.sum() == pytest.approx(1.0, abs=1e-9)
        assert prediction.label == int(np.argmax(prediction.probs))
        assert prediction.pooled.shape == (8,)

    @pytest.mark.parametrize("fusion", FUSION_TABLE_ORDER)
    def test_every_variant_runs(self, fusion):
        """Test each fusion variant produces a distribution"""
        config = ModelConfig(fusion=fusion)
        prediction = forward(self.graph, init_params(config), config)
        assert prediction.probs.shape == (5,)
        assert prediction.probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_entity_permutation_invariance(self):
        """Test reordering text entities leaves probabilities unchanged"""
        permuted = self.record.model_copy(update={"text_entities": self.record.text_entities[::-1]})
        original = forward(self.graph, self.params, self.config).probs
        shuffled = forward(build_graph(permuted), self.params, self.config).probs
        np.testing.assert_allclose(shuffled, original, atol=1e-9)

    def test_deterministic(self):
        """Test repeated forwards are bit-identical"""
        first = forward(self.graph, self.params, self.config).probs
        second = forward(self.graph, self.params, self.config).probs
        np.testing.assert_array_equal(first, second)

    def test_attention_rows_normalized_on_fuzzed_graphs(self):
        """Test every attention row sums to 1 at every layer and head"""
        for _ in range(100):
            counts = self.rng.integers(0, 4, size=3)
            graph = build_graph(random_record(self.rng, *counts, d_t=16, d_v=16))
            log = []
            forward(graph, self.params, self.config, attention_log=log)
            assert len(log) == self.config.num_layers * self.config.num_heads
            for gamma in log:
                np.testing.assert_allclose(gamma.sum(axis=1), np.ones(graph.num_nodes), atol=1e-12)

    def test_without_knowledge_uses_four_nodes(self):
        """Test use_knowledge=False runs the graph over the globals only"""
        config = ModelConfig(use_knowledge=False)
        log = []
        forward(self.graph, self.params, config, attention_log=log)
        assert all(gamma.shape == (4, 4) for gamma in log)

    def test_knowledge_sources_restrict_nodes(self):
        """Test a source subset keeps globals plus that source"""
        config = ModelConfig(knowledge_sources=[KnowledgeSource.VISUAL_OBJECT])
        log = []
        forward(self.graph, self.params, config, attention_log=log)
        assert log[0].shape == (7, 7)

    def test_kgf_differs_from_concat_fusion(self):
        """Test KGF and ConcatFusion give different outputs on a knowledge-free record"""
        graph = build_graph(self.record.without_knowledge())
        concat = ModelConfig(fusion=FusionVariant.CONCAT)
        kgf_probs = forward(graph, self.params, self.config).probs
        concat_probs = forward(graph, init_params(concat), concat).probs
        assert not np.allclose(kgf_probs, concat_probs, atol=1e-9)


class TestFullModelGradients:
    """Test cases for end-to-end gradient checks"""

    @pytest.mark.parametrize("fusion", FUSION_TABLE_ORDER)
    def test_variant_gradients(self, fusion):
        """Test the loss gradient of each variant matches central differences"""
        rng = np.random.default_rng(9)
        config = ModelConfig(fusion=fusion, **SMALL)
        params = init_params(config, seed=1)
        graph = build_graph(random_record(rng, 3, 2, 2, d_t=8, d_v=8))
        report = grad_check(lambda tape: record_loss(graph, 3, params, config, tape), params, max_samples=40)
        assert report.passed, report.failing_tensors

    def test_initial_loss_near_uniform(self):
        """Test a fresh model's loss is close to ln(num_classes)"""
        rng = np.random.default_rng(2)
        config = ModelConfig()
        params = init_params(config)
        losses = [
            record_loss(build_graph(random_record(rng, 3, 2, 3, d_t=16, d_v=16)), k % 5, params, config, Tape()).item()
            for k in range(100)
        ]
        assert abs(np.mean(losses) - math.log(5)) < 0.2
