"""
Heterogeneous graph construction

One fully connected graph per claim-evidence record: global, entity,
key-phrase and object nodes in canonical order, weighted by the cosine
similarity of their raw embeddings.
"""

import json
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from kgfuse.core.numerics import cosine_similarity
from kgfuse.models.errors import DimensionError
from kgfuse.models.record import KnowledgeRecord, KnowledgeSource

EDGE_FLOOR = 1e-6


class NodeKind(str, Enum):
    """Type of a graph node"""
    GLOBAL_TEXT_CLAIM = "GlobalTextClaim"
    GLOBAL_TEXT_EVIDENCE = "GlobalTextEvidence"
    TEXT_ENTITY = "TextEntity"
    KEY_PHRASE = "KeyPhrase"
    GLOBAL_IMAGE_CLAIM = "GlobalImageClaim"
    GLOBAL_IMAGE_EVIDENCE = "GlobalImageEvidence"
    VISUAL_OBJECT = "VisualObject"

    @property
    def is_global(self) -> bool:
        return self in GLOBAL_KINDS


# t_c, t_e, o_c, o_e: the order used by global_index and global concatenation
GLOBAL_KINDS = (
    NodeKind.GLOBAL_TEXT_CLAIM,
    NodeKind.GLOBAL_TEXT_EVIDENCE,
    NodeKind.GLOBAL_IMAGE_CLAIM,
    NodeKind.GLOBAL_IMAGE_EVIDENCE,
)

SOURCE_KINDS: Dict[KnowledgeSource, NodeKind] = {
    KnowledgeSource.TEXT_ENTITY: NodeKind.TEXT_ENTITY,
    KnowledgeSource.KEY_PHRASE: NodeKind.KEY_PHRASE,
    KnowledgeSource.VISUAL_OBJECT: NodeKind.VISUAL_OBJECT,
}


@dataclass(frozen=True, eq=False)
class GraphNode:
    kind: NodeKind
    embedding: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.embedding.size)


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Typed nodes plus a symmetric edge-weight matrix with unit diagonal"""
    nodes: Tuple[GraphNode, ...]
    edge_weights: np.ndarray
    global_index: Tuple[int, int, int, int]
    record_id: str = ""

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def kinds(self) -> List[NodeKind]:
        return [node.kind for node in self.nodes]

    def indices_of(self, kinds: Iterable[NodeKind]) -> List[int]:
        wanted = set(kinds)
        return [i for i, node in enumerate(self.nodes) if node.kind in wanted]

    def knowledge_indices(self) -> List[int]:
        return [i for i, node in enumerate(self.nodes) if not node.kind.is_global]

    def count(self, kind: NodeKind) -> int:
        return sum(1 for node in self.nodes if node.kind == kind)


def _edge_matrix(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    n = len(embeddings)
    weights = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            u, v = embeddings[i], embeddings[j]
            # differing modality dims compare on the shared prefix
            width = min(u.size, v.size)
            weights[i, j] = cosine_similarity(u[:width], v[:width])
            weights[j, i] = weights[i, j]
    return weights


def build_graph(record: KnowledgeRecord) -> HeteroGraph:
    """
    Fully connected graph in canonical order:
    [t_c, t_e, T..., K..., o_c, o_e, O...]
    """
    def node(kind: NodeKind, values: Sequence[float]) -> GraphNode:
        embedding = np.array(values, dtype=np.float64)
        embedding.setflags(write=False)
        return GraphNode(kind, embedding)

    nodes: List[GraphNode] = [
        node(NodeKind.GLOBAL_TEXT_CLAIM, record.claim_text_emb),
        node(NodeKind.GLOBAL_TEXT_EVIDENCE, record.evidence_text_emb),
    ]
    nodes += [node(NodeKind.TEXT_ENTITY, item.embedding) for item in record.text_entities]
    nodes += [node(NodeKind.KEY_PHRASE, item.embedding) for item in record.key_phrases]
    image_claim = len(nodes)
    nodes += [
        node(NodeKind.GLOBAL_IMAGE_CLAIM, record.claim_image_emb),
        node(NodeKind.GLOBAL_IMAGE_EVIDENCE, record.evidence_image_emb),
    ]
    nodes += [node(NodeKind.VISUAL_OBJECT, item.embedding) for item in record.visual_objects]

    for item_node in nodes:
        if item_node.dim == 0:
            raise DimensionError(
                f"record {record.id!r} has an empty {item_node.kind.value} embedding"
            )

    weights = _edge_matrix([n.embedding for n in nodes])
    weights.setflags(write=False)
    return HeteroGraph(
        nodes=tuple(nodes),
        edge_weights=weights,
        global_index=(0, 1, image_claim, image_claim + 1),
        record_id=record.id,
    )


def edge_transform(w: npt.ArrayLike) -> np.ndarray:
    """(1 + w) / 2 floored at 1e-6: cosine weight to positive attention factor"""
    return np.maximum((1.0 + np.asarray(w, dtype=np.float64)) / 2.0, EDGE_FLOOR)


def edge_factors(graph: HeteroGraph) -> np.ndarray:
    factors = edge_transform(graph.edge_weights)
    np.fill_diagonal(factors, 1.0)
    return factors


def restrict_graph(
    graph: HeteroGraph,
    sources: Optional[Iterable[KnowledgeSource]] = None,
    include_knowledge: bool = True,
) -> HeteroGraph:
    """Keep the globals plus knowledge nodes of the given sources, in canonical order"""
    if not include_knowledge:
        allowed = set()
    elif sources is None:
        allowed = set(SOURCE_KINDS.values())
    else:
        allowed = {SOURCE_KINDS[source] for source in sources}
    keep = [i for i, node in enumerate(graph.nodes) if node.kind.is_global or node.kind in allowed]
    if len(keep) == graph.num_nodes:
        return graph

    position = {old: new for new, old in enumerate(keep)}
    weights = graph.edge_weights[np.ix_(keep, keep)].copy()
    weights.setflags(write=False)
    return HeteroGraph(
        nodes=tuple(graph.nodes[i] for i in keep),
        edge_weights=weights,
        global_index=tuple(position[i] for i in graph.global_index),
        record_id=graph.record_id,
    )


def graph_to_dict(graph: HeteroGraph) -> dict:
    """Debug dump: node kinds and dims plus the edge matrix"""
    return {
        "record_id": graph.record_id,
        "nodes": [{"kind": node.kind.value, "dim": node.dim} for node in graph.nodes],
        "edge_weights": graph.edge_weights.tolist(),
    }


def graph_to_json(graph: HeteroGraph) -> str:
    return json.dumps(graph_to_dict(graph))
