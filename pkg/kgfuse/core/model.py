"""
Knowledge-oriented graph fusion classifier

Shared-space projection per knowledge source, global-node concatenation
before each multi-head graph attention layer, mean-pool readout and a
ReLU MLP head. The baseline fusion modules (concatenation, self-attention,
GCN, independent GAT) share the projection and classifier.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from kgfuse.core.graph import (
    HeteroGraph,
    NodeKind,
    edge_factors,
    restrict_graph,
)
from kgfuse.core.numerics import (
    Param,
    ParamSet,
    Tape,
    Tensor,
    add,
    concat,
    constant,
    leaky_relu,
    matmul,
    mean_rows,
    relu,
    scale,
    softmax,
    softmax_cross_entropy,
    take_rows,
    transpose,
)
from kgfuse.models.config import FusionVariant, ModelConfig
from kgfuse.models.errors import ConfigurationError, DimensionError, NumericError

logger = logging.getLogger(__name__)

# (parameter prefix, node kinds routed through it, config field of its input dim)
PROJECTION_GROUPS: Tuple[Tuple[str, Tuple[NodeKind, ...], str], ...] = (
    (
        "proj_text",
        (NodeKind.GLOBAL_TEXT_CLAIM, NodeKind.GLOBAL_TEXT_EVIDENCE, NodeKind.TEXT_ENTITY),
        "d_t",
    ),
    ("proj_key", (NodeKind.KEY_PHRASE,), "d_t"),
    (
        "proj_visual",
        (NodeKind.GLOBAL_IMAGE_CLAIM, NodeKind.GLOBAL_IMAGE_EVIDENCE, NodeKind.VISUAL_OBJECT),
        "d_v",
    ),
)

GRAPH_VARIANTS = (FusionVariant.KGF, FusionVariant.INDEPENDENT_GAT, FusionVariant.GCN)


@dataclass(frozen=True, eq=False)
class Prediction:
    """Class distribution for one graph"""
    probs: np.ndarray
    label: int
    pooled: np.ndarray


def layer_input_dims(config: ModelConfig) -> List[int]:
    """Input width of every graph layer, after global concatenation if active"""
    dims = []
    previous = config.d
    for layer in range(config.num_layers):
        dims.append(5 * previous if config.global_concat_active else previous)
        is_final = layer == config.num_layers - 1
        previous = config.d_hidden if is_final else config.num_heads * config.d_hidden
    return dims


def pool_dim(config: ModelConfig) -> int:
    if config.fusion in GRAPH_VARIANTS:
        return config.d_hidden
    if config.fusion == FusionVariant.SELF_ATT:
        return config.d
    if config.fusion == FusionVariant.CONCAT:
        return config.d * (5 if config.concat_knowledge_block else 4)
    raise ConfigurationError(f"unknown fusion variant: {config.fusion}")


def _layer_prefix(config: ModelConfig) -> str:
    return "gcn" if config.fusion == FusionVariant.GCN else "gat"


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, int]]":
    """Name and shape of every tensor the configuration needs, in init order"""
    shapes: "OrderedDict[str, Tuple[int, int]]" = OrderedDict()
    for prefix, _, dim_field in PROJECTION_GROUPS:
        shapes[f"{prefix}.weight"] = (getattr(config, dim_field), config.d)
        shapes[f"{prefix}.bias"] = (1, config.d)

    if config.fusion in GRAPH_VARIANTS:
        prefix = _layer_prefix(config)
        for layer, in_dim in enumerate(layer_input_dims(config)):
            for head in range(config.num_heads):
                shapes[f"{prefix}.{layer}.head{head}.theta"] = (in_dim, config.d_hidden)
                if config.fusion != FusionVariant.GCN:
                    shapes[f"{prefix}.{layer}.head{head}.attn"] = (2 * config.d_hidden, 1)
    elif config.fusion == FusionVariant.SELF_ATT:
        for name in ("query", "key", "value"):
            shapes[f"selfatt.{name}"] = (config.d, config.d)

    shapes["classifier.hidden.weight"] = (pool_dim(config), config.d_classifier)
    shapes["classifier.hidden.bias"] = (1, config.d_classifier)
    shapes["classifier.output.weight"] = (config.d_classifier, config.num_classes)
    shapes["classifier.output.bias"] = (1, config.num_classes)
    return shapes


def glorot_bound(shape: Tuple[int, int]) -> float:
    fan_in, fan_out = shape
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(config: ModelConfig, seed: Optional[int] = None) -> ParamSet:
    """Glorot-uniform weights and zero biases, deterministic per seed"""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = ParamSet()
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            value = np.zeros(shape)
        else:
            bound = glorot_bound(shape)
            value = rng.uniform(-bound, bound, size=shape)
        params.add(Param(name, value))
    return params


def check_params(config: ModelConfig, params: ParamSet) -> None:
    """Raise ConfigurationError unless params match the configuration's layout"""
    expected = parameter_shapes(config)
    if params.names() != list(expected):
        missing = sorted(set(expected) - set(params.names()))
        extra = sorted(set(params.names()) - set(expected))
        raise ConfigurationError(
            f"parameter layout mismatch: missing {missing}, unexpected {extra}"
        )
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ConfigurationError(f"{name} has shape {params[name].shape}, expected {shape}")
        if not np.all(np.isfinite(params[name].value)):
            raise ConfigurationError(f"{name} contains non-finite values")


def select_nodes(graph: HeteroGraph, config: ModelConfig) -> HeteroGraph:
    return restrict_graph(graph, config.knowledge_sources, config.use_knowledge)


def project_nodes(graph: HeteroGraph, params: ParamSet, tape: Tape) -> Tensor:
    """ReLU(affine) per source into the shared d-dimensional space, canonical row order"""
    blocks: List[Tensor] = []
    order: List[int] = []
    for prefix, kinds, _ in PROJECTION_GROUPS:
        index = graph.indices_of(kinds)
        if not index:
            continue
        weight = tape.watch(params[f"{prefix}.weight"])
        bias = tape.watch(params[f"{prefix}.bias"])
        embeddings = [graph.nodes[i].embedding for i in index]
        if any(e.size != weight.shape[0] for e in embeddings):
            sizes = sorted({e.size for e in embeddings})
            raise ConfigurationError(
                f"{prefix} expects embeddings of dim {weight.shape[0]}, got {sizes}"
            )
        blocks.append(relu(add(matmul(constant(np.stack(embeddings)), weight), bias)))
        order.extend(index)

    states = concat(blocks, axis=0)
    if order != list(range(len(order))):
        states = take_rows(states, np.argsort(order))
    return states


def global_concat(states: Tensor, global_index: Sequence[int]) -> Tensor:
    """[m_i | m_tc | m_te | m_oc | m_oe] for every node, globals read before concatenation"""
    if len(global_index) != 4:
        raise DimensionError(f"expected four global positions, got {len(global_index)}")
    rows = states.shape[0]
    blocks = [states] + [take_rows(states, [g] * rows) for g in global_index]
    return concat(blocks, axis=1)


def attention_coefficients(
    z: Tensor, attn: Tensor, factors: np.ndarray, leaky_slope: float
) -> Tensor:
    """
    Row-normalized attention with edge factors as multiplicative weights

    logit(i, j) = a . LeakyReLU([z_i | z_j]); the edge factor enters as a
    log-bias on the logit, i.e. a factor on exp(logit).
    """
    width = z.shape[1]
    if attn.shape != (2 * width, 1):
        raise DimensionError(f"attention vector shape {attn.shape}, expected {(2 * width, 1)}")
    activated = leaky_relu(z, leaky_slope)
    source = matmul(activated, take_rows(attn, range(width)))
    target = matmul(activated, take_rows(attn, range(width, 2 * width)))
    logits = add(source, transpose(target))
    return softmax(add(logits, constant(np.log(factors))))


def gat_layer(
    states: Tensor,
    factors: np.ndarray,
    heads: Sequence[Tuple[Tensor, Optional[Tensor]]],
    is_final: bool,
    leaky_slope: float = 0.2,
    layer: int = 0,
    attention_log: Optional[List[np.ndarray]] = None,
) -> Tensor:
    """
    One multi-head layer over a fully connected graph

    heads holds (theta, attn) per head; attn=None gives the GCN update with
    coefficients factor(i, j) / sum_k factor(i, k). Heads are concatenated
    on hidden layers and averaged on the final one.
    """
    if np.any(factors <= 0):
        raise NumericError(f"layer {layer}: edge factors must be positive")
    outputs = []
    for head, (theta, attn) in enumerate(heads):
        z = matmul(states, theta)
        if attn is None:
            gamma = constant(factors / factors.sum(axis=1, keepdims=True))
        else:
            try:
                gamma = attention_coefficients(z, attn, factors, leaky_slope)
            except NumericError as e:
                raise NumericError(f"non-finite attention in layer {layer} head {head}: {e}") from e
        if attention_log is not None:
            attention_log.append(gamma.data.copy())
        outputs.append(matmul(gamma, z))

    if not is_final:
        return concat(outputs, axis=1)
    total = outputs[0]
    for output in outputs[1:]:
        total = add(total, output)
    return scale(total, 1.0 / len(outputs))


def _graph_readout(
    graph: HeteroGraph,
    states: Tensor,
    params: ParamSet,
    config: ModelConfig,
    tape: Tape,
    attention_log: Optional[List[np.ndarray]],
) -> Tensor:
    factors = edge_factors(graph)
    prefix = _layer_prefix(config)
    with_attention = config.fusion != FusionVariant.GCN
    for layer in range(config.num_layers):
        if config.global_concat_active:
            states = global_concat(states, graph.global_index)
        heads = []
        for head in range(config.num_heads):
            theta = tape.watch(params[f"{prefix}.{layer}.head{head}.theta"])
            attn: Optional[Tensor] = None
            if with_attention:
                attn = tape.watch(params[f"{prefix}.{layer}.head{head}.attn"])
            heads.append((theta, attn))
        states = gat_layer(
            states,
            factors,
            heads,
            is_final=layer == config.num_layers - 1,
            leaky_slope=config.leaky_slope,
            layer=layer,
            attention_log=attention_log,
        )
    return mean_rows(states)


def _self_attention_readout(
    states: Tensor, params: ParamSet, config: ModelConfig, tape: Tape
) -> Tensor:
    query = matmul(states, tape.watch(params["selfatt.query"]))
    key = matmul(states, tape.watch(params["selfatt.key"]))
    value = matmul(states, tape.watch(params["selfatt.value"]))
    weights = softmax(scale(matmul(query, transpose(key)), 1.0 / math.sqrt(config.d)))
    return mean_rows(matmul(weights, value))


def _concat_readout(graph: HeteroGraph, states: Tensor, config: ModelConfig) -> Tensor:
    blocks = [take_rows(states, [g]) for g in graph.global_index]
    if config.concat_knowledge_block:
        knowledge = graph.knowledge_indices()
        if knowledge:
            blocks.append(mean_rows(take_rows(states, knowledge)))
        else:
            blocks.append(constant(np.zeros((1, config.d))))
    return concat(blocks, axis=1)


def compute_logits(
    graph: HeteroGraph,
    params: ParamSet,
    config: ModelConfig,
    tape: Tape,
    attention_log: Optional[List[np.ndarray]] = None,
) -> Tuple[Tensor, Tensor]:
    """Unnormalized class scores (1 x num_classes) and the pooled representation"""
    graph = select_nodes(graph, config)
    states = project_nodes(graph, params, tape)

    if config.fusion in GRAPH_VARIANTS:
        pooled = _graph_readout(graph, states, params, config, tape, attention_log)
    elif config.fusion == FusionVariant.SELF_ATT:
        pooled = _self_attention_readout(states, params, config, tape)
    elif config.fusion == FusionVariant.CONCAT:
        pooled = _concat_readout(graph, states, config)
    else:
        raise ConfigurationError(f"unknown fusion variant: {config.fusion}")

    hidden = relu(add(
        matmul(pooled, tape.watch(params["classifier.hidden.weight"])),
        tape.watch(params["classifier.hidden.bias"]),
    ))
    logits = add(
        matmul(hidden, tape.watch(params["classifier.output.weight"])),
        tape.watch(params["classifier.output.bias"]),
    )
    return logits, pooled


def forward(
    graph: HeteroGraph,
    params: ParamSet,
    config: ModelConfig,
    tape: Optional[Tape] = None,
    attention_log: Optional[List[np.ndarray]] = None,
) -> Prediction:
    logits, pooled = compute_logits(graph, params, config, tape or Tape(), attention_log)
    probs = softmax(logits).data.reshape(-1).copy()
    return Prediction(
        probs=probs,
        label=int(np.argmax(probs)),
        pooled=pooled.data.reshape(-1).copy(),
    )


def record_loss(
    graph: HeteroGraph, label: int, params: ParamSet, config: ModelConfig, tape: Tape
) -> Tensor:
    logits, _ = compute_logits(graph, params, config, tape)
    return softmax_cross_entropy(logits, label)

