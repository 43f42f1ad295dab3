"""
Parameter checkpoints

A checkpoint is one JSON object {config, tensors: {name: {shape, values}}}.
Floats are written in shortest round-trip form, so load(save(p)) == p bit for bit.
"""

import json
import logging
import os
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from kgfuse.core.model import check_params
from kgfuse.core.numerics import Param, ParamSet
from kgfuse.models.config import ModelConfig
from kgfuse.models.errors import ConfigurationError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def checkpoint_to_dict(config: ModelConfig, params: ParamSet) -> dict:
    return {
        "config": config.model_dump(mode="json"),
        "tensors": {
            param.name: {
                "shape": list(param.shape),
                "values": [float(x) for x in param.value.reshape(-1)],
            }
            for param in params
        },
    }


def save_checkpoint(path: PathLike, config: ModelConfig, params: ParamSet) -> None:
    check_params(config, params)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(checkpoint_to_dict(config, params), f)
        f.write("\n")
    logger.info("Saved checkpoint with %d tensors to %s", len(params), path)


def load_checkpoint(
    path: PathLike,
    expected: Optional[ModelConfig] = None,
) -> Tuple[ModelConfig, ParamSet]:
    """
    Read a checkpoint and verify it against its own config

    With `expected`, the stored architecture must match expected.structure()
    (the seed is ignored); otherwise ConfigurationError.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"checkpoint {path} is not valid JSON: {e}") from e

    if not isinstance(payload, dict) or set(payload) != {"config", "tensors"}:
        raise ConfigurationError(f"checkpoint {path} must hold exactly 'config' and 'tensors'")
    try:
        config = ModelConfig.model_validate(payload["config"])
    except ValidationError as e:
        raise ConfigurationError(f"checkpoint {path} has an invalid config: {e}") from e

    if expected is not None and expected.structure() != config.structure():
        differing = sorted(
            key for key, value in expected.structure().items()
            if config.structure().get(key) != value
        )
        raise ConfigurationError(
            f"checkpoint {path} was trained with a different model configuration "
            f"(differs in: {', '.join(differing)})"
        )

    params = ParamSet()
    for name, tensor in payload["tensors"].items():
        shape = tuple(tensor.get("shape", ()))
        values = np.array(tensor.get("values", []), dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ConfigurationError(
                f"checkpoint tensor {name}: {values.size} values do not fill shape {shape}"
            )
        params.add(Param(name, values.reshape(shape)))

    check_params(config, params)
    logger.info("Loaded checkpoint %s (%s, %d tensors)", path, config.fusion.value, len(params))
    return config, params
