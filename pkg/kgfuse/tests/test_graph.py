"""
Unit tests for heterogeneous graph construction
"""

import json

import numpy as np
import pytest

from kgfuse.core.graph import (
    NodeKind,
    build_graph,
    edge_factors,
    edge_transform,
    graph_to_dict,
    graph_to_json,
    restrict_graph,
)
from kgfuse.models.record import KnowledgeItem, KnowledgeRecord, KnowledgeSource

LIST_NAMES = ("text_entities", "key_phrases", "visual_objects")


def random_record(rng, n_text=3, n_key=2, n_obj=4, d_t=6, d_v=5, record_id="g") -> KnowledgeRecord:
    def items(source, count, dim):
        return [
            KnowledgeItem(
                embedding=rng.standard_normal(dim).tolist(),
                score=1.0,
                dedup_key=f"{source.value}{k}",
                source=source,
            )
            for k in range(count)
        ]

    return KnowledgeRecord(
        id=record_id,
        claim_text_emb=rng.standard_normal(d_t).tolist(),
        claim_image_emb=rng.standard_normal(d_v).tolist(),
        evidence_text_emb=rng.standard_normal(d_t).tolist(),
        evidence_image_emb=rng.standard_normal(d_v).tolist(),
        text_entities=items(KnowledgeSource.TEXT_ENTITY, n_text, d_t),
        key_phrases=items(KnowledgeSource.KEY_PHRASE, n_key, d_t),
        visual_objects=items(KnowledgeSource.VISUAL_OBJECT, n_obj, d_v),
        label=0,
    )


class TestBuildGraph:
    """Test cases for build_graph"""

    def setup_method(self):
        """Set up a record with |T|=3, |K|=2, |O|=4"""
        self.rng = np.random.default_rng(0)
        self.record = random_record(self.rng)
        self.graph = build_graph(self.record)

    def test_node_count(self):
        """Test |V| = |T| + |K| + |O| + 4"""
        assert self.graph.num_nodes == 13

    def test_canonical_order(self):
        """Test nodes follow [t_c, t_e, T, K, o_c, o_e, O]"""
        expected = (
            [NodeKind.GLOBAL_TEXT_CLAIM, NodeKind.GLOBAL_TEXT_EVIDENCE]
            + [NodeKind.TEXT_ENTITY] * 3
            + [NodeKind.KEY_PHRASE] * 2
            + [NodeKind.GLOBAL_IMAGE_CLAIM, NodeKind.GLOBAL_IMAGE_EVIDENCE]
            + [NodeKind.VISUAL_OBJECT] * 4
        )
        assert self.graph.kinds == expected
        assert self.graph.global_index == (0, 1, 7, 8)

    def test_one_of_each_global(self):
        """Test exactly one node per global kind"""
        for kind in NodeKind:
            if kind.is_global:
                assert self.graph.count(kind) == 1

    def test_edges_symmetric_unit_diagonal(self):
        """Test edge weights are symmetric with ones on the diagonal"""
        weights = self.graph.edge_weights
        np.testing.assert_array_equal(weights, weights.T)
        np.testing.assert_array_equal(np.diag(weights), np.ones(13))
        assert np.all(weights >= -1.0) and np.all(weights <= 1.0)

    def test_fuzzed_records(self):
        """Test the node-count formula and symmetry on list sizes 0-16"""
        for _ in range(25):
            counts = self.rng.integers(0, 17, size=3)
            graph = build_graph(random_record(self.rng, *counts))
            assert graph.num_nodes == int(counts.sum()) + 4
            np.testing.assert_array_equal(graph.edge_weights, graph.edge_weights.T)

    def test_within_source_permutation_equivariance(self):
        """Test shuffling each knowledge list permutes nodes and edges the same way"""
        for _ in range(10):
            counts = self.rng.integers(0, 17, size=3)
            record = random_record(self.rng, *counts)
            graph = build_graph(record)

            orders = {name: self.rng.permutation(int(n)) for name, n in zip(LIST_NAMES, counts)}
            shuffled = record.model_copy(
                update={
                    name: [getattr(record, name)[i] for i in order]
                    for name, order in orders.items()
                }
            )
            permuted = build_graph(shuffled)

            n_text, n_key = int(counts[0]), int(counts[1])
            offsets = {
                "text_entities": 2,
                "key_phrases": 2 + n_text,
                "visual_objects": 4 + n_text + n_key,
            }
            perm = np.arange(graph.num_nodes)
            for name, order in orders.items():
                start = offsets[name]
                perm[start:start + order.size] = start + order

            assert permuted.kinds == graph.kinds
            for new, old in enumerate(perm):
                np.testing.assert_array_equal(permuted.nodes[new].embedding, graph.nodes[old].embedding)
            np.testing.assert_allclose(
                permuted.edge_weights, graph.edge_weights[np.ix_(perm, perm)], rtol=0, atol=1e-15
            )

    def test_knowledge_free_record(self):
        """Test zero knowledge items give a 4-node graph with 6 distinct edges"""
        graph = build_graph(self.record.without_knowledge())
        assert graph.num_nodes == 4
        assert graph.global_index == (0, 1, 2, 3)
        assert len(graph.edge_weights[np.triu_indices(4, k=1)]) == 6

    def test_identical_embeddings_weight_one(self):
        """Test two nodes with identical embeddings are joined with weight 1"""
        same = [0.5, -1.0, 2.0, 0.0, 1.0, 3.0]
        entities = [
            KnowledgeItem(embedding=same, score=1.0, dedup_key=k, source=KnowledgeSource.TEXT_ENTITY)
            for k in ("a", "b")
        ]
        graph = build_graph(self.record.model_copy(update={"text_entities": entities}))
        assert graph.edge_weights[2, 3] == pytest.approx(1.0, abs=1e-12)

    def test_graph_is_read_only(self):
        """Test edge weights cannot be mutated"""
        with pytest.raises(ValueError):
            self.graph.edge_weights[0, 1] = 0.0


class TestEdgeTransform:
    """Test cases for the cosine-to-factor transform"""

    def test_known_weights(self):
        """Test w=1, w=-1 and w=0"""
        assert edge_transform(1.0) == 1.0
        assert edge_transform(-1.0) == 1e-6
        assert edge_transform(0.0) == 0.5

    def test_factors_positive_with_unit_self(self):
        """Test edge factors are positive and the self factor is 1"""
        graph = build_graph(random_record(np.random.default_rng(4)))
        factors = edge_factors(graph)
        assert np.all(factors > 0)
        np.testing.assert_array_equal(np.diag(factors), np.ones(graph.num_nodes))


class TestRestrictGraph:
    """Test cases for dropping knowledge nodes"""

    def setup_method(self):
        """Set up a full graph"""
        self.graph = build_graph(random_record(np.random.default_rng(1)))

    def test_without_knowledge(self):
        """Test include_knowledge=False leaves only the four globals"""
        restricted = restrict_graph(self.graph, include_knowledge=False)
        assert restricted.num_nodes == 4
        assert restricted.global_index == (0, 1, 2, 3)
        assert all(kind.is_global for kind in restricted.kinds)

    def test_single_source(self):
        """Test keeping key phrases only preserves the matching sub-matrix"""
        restricted = restrict_graph(self.graph, [KnowledgeSource.KEY_PHRASE])
        assert restricted.kinds.count(NodeKind.KEY_PHRASE) == 2
        assert restricted.num_nodes == 6
        keep = [0, 1, 5, 6, 7, 8]
        np.testing.assert_array_equal(restricted.edge_weights, self.graph.edge_weights[np.ix_(keep, keep)])
        assert restricted.global_index == (0, 1, 4, 5)

    def test_all_sources_is_identity(self):
        """Test keeping every source returns the graph itself"""
        assert restrict_graph(self.graph, list(KnowledgeSource)) is self.graph


class TestGraphDump:
    """Test cases for the debug dump"""

    def test_dict_and_json(self):
        """Test the dump lists node kinds, dims and edge weights"""
        graph = build_graph(random_record(np.random.default_rng(2), 1, 1, 1))
        dump = graph_to_dict(graph)
        assert dump["record_id"] == "g"
        assert [n["kind"] for n in dump["nodes"]][:2] == ["GlobalTextClaim", "GlobalTextEvidence"]
        assert len(dump["edge_weights"]) == 7
        assert json.loads(graph_to_json(graph)) == dump
