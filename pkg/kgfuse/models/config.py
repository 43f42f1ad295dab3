"""
Configuration models for models, training, ingestion and CLI runs
"""

import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from kgfuse.models.record import KnowledgeSource


class FusionVariant(str, Enum):
    """Fusion module placed between projection and classifier"""
    KGF = "KGF"
    CONCAT = "ConcatFusion"
    SELF_ATT = "SelfAttFusion"
    GCN = "GCN"
    INDEPENDENT_GAT = "IndependentGAT"


# Row order of the fusion comparison table
FUSION_TABLE_ORDER = [
    FusionVariant.CONCAT,
    FusionVariant.SELF_ATT,
    FusionVariant.GCN,
    FusionVariant.INDEPENDENT_GAT,
    FusionVariant.KGF,
]


class LabelSignal(str, Enum):
    """Which nodes of a synthetic record carry the class prototype"""
    GLOBALS = "globals"
    KNOWLEDGE_ONLY = "knowledge_only"


class ModelConfig(BaseModel):
    """Architecture of the fusion classifier"""
    model_config = ConfigDict(extra="forbid")

    d_t: int = Field(default=16, ge=1)
    d_v: int = Field(default=16, ge=1)
    d: int = Field(default=16, ge=1)
    num_heads: int = Field(default=4, ge=1)
    num_layers: int = Field(default=2, ge=1)
    d_hidden: int = Field(default=8, ge=1)
    d_classifier: int = Field(default=16, ge=1)
    num_classes: int = Field(default=5, ge=2)
    fusion: FusionVariant = FusionVariant.KGF
    use_global_concat: bool = True
    use_knowledge: bool = True
    knowledge_sources: List[KnowledgeSource] = Field(
        default_factory=lambda: list(KnowledgeSource)
    )
    concat_knowledge_block: bool = False
    leaky_slope: float = Field(default=0.2, gt=0.0, lt=1.0)
    seed: int = 0

    @field_validator("knowledge_sources")
    @classmethod
    def _unique_sources(cls, sources: List[KnowledgeSource]) -> List[KnowledgeSource]:
        if len(set(sources)) != len(sources):
            raise ValueError("knowledge_sources contains duplicates")
        # canonical order keeps configs that name the same subset equal
        return [source for source in KnowledgeSource if source in sources]

    @property
    def global_concat_active(self) -> bool:
        return self.fusion == FusionVariant.KGF and self.use_global_concat

    def structure(self) -> dict:
        """Fields that determine parameter shapes and forward semantics"""
        return self.model_dump(mode="json", exclude={"seed"})


class TrainConfig(BaseModel):
    """Mini-batch training schedule"""
    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(default=2e-5, ge=0.0)
    batch_size: int = Field(default=8, ge=1)
    epochs: int = Field(default=10, ge=1)
    seed: int = 0
    shuffle: bool = True
    early_stop_patience: Optional[int] = Field(default=None, ge=1)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(default=1e-8, gt=0.0)

    @field_validator("learning_rate")
    @classmethod
    def _finite_lr(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("learning_rate must be finite")
        return value

    @field_validator("betas")
    @classmethod
    def _betas_in_range(cls, betas: Tuple[float, float]) -> Tuple[float, float]:
        if not all(0.0 <= beta < 1.0 for beta in betas):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        return betas


class IngestConfig(BaseModel):
    """Knowledge filtering applied to every record after loading"""
    model_config = ConfigDict(extra="forbid")

    text_threshold: float = Field(default=0.3, ge=0.0, le=1.0)
    visual_threshold: float = Field(default=0.8, ge=0.0, le=1.0)
    max_per_source: int = Field(default=16, ge=0)


class KnowledgeCounts(BaseModel):
    """Signal-carrying knowledge items per record and source"""
    model_config = ConfigDict(extra="forbid")

    text_entities: int = Field(default=3, ge=0)
    key_phrases: int = Field(default=2, ge=0)
    visual_objects: int = Field(default=3, ge=0)


class SyntheticSpec(BaseModel):
    """Recipe for a labeled synthetic dataset"""
    model_config = ConfigDict(extra="forbid")

    seed: int = 7
    num_classes: int = Field(default=5, ge=2)
    records_per_class: int = Field(default=50, ge=1)
    d_t: int = Field(default=16, ge=1)
    d_v: int = Field(default=16, ge=1)
    knowledge_counts: KnowledgeCounts = Field(default_factory=KnowledgeCounts)
    noise_items_per_record: int = Field(default=2, ge=0)
    label_signal: LabelSignal = LabelSignal.GLOBALS
    noise_sigma: float = Field(default=0.3, ge=0.0)
    class_names: Optional[List[str]] = None

    @model_validator(mode="after")
    def _check_class_names(self) -> "SyntheticSpec":
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")
        return self


class GradCheckConfig(BaseModel):
    """Finite-difference verification settings"""
    model_config = ConfigDict(extra="forbid")

    step: float = Field(default=1e-5, ge=1e-6, le=1e-4)
    tol: float = Field(default=1e-4, gt=0.0)
    max_samples: int = Field(default=200, ge=1)
    seed: int = 0
    corrupt_tensor: Optional[str] = None
    corruption: float = 0.1


class RunConfig(BaseModel):
    """Everything one CLI invocation needs"""
    model_config = ConfigDict(extra="forbid")

    run_name: str = "default"
    data_dir: Optional[str] = None
    checkpoint: Optional[str] = None
    dump_graphs: bool = False
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ingest: IngestConfig = Field(default_factory=IngestConfig)
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)
    gradcheck: GradCheckConfig = Field(default_factory=GradCheckConfig)
