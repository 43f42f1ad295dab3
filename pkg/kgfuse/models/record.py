"""
Data models for claim-evidence knowledge records
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, StrictFloat, model_validator

FACTIFY_CLASS_NAMES = [
    "Support_Multimodal",
    "Support_Text",
    "Insufficient_Multimodal",
    "Insufficient_Text",
    "Refute",
]
MOCHEG_CLASS_NAMES = ["Supported", "Refuted", "NEI"]

# Embeddings are finite decimal doubles; quoted numbers are rejected
Vector = List[StrictFloat]


def default_class_names(num_classes: int) -> List[str]:
    """Label names for a class count, using the benchmark names where they exist"""
    if num_classes == len(FACTIFY_CLASS_NAMES):
        return list(FACTIFY_CLASS_NAMES)
    if num_classes == len(MOCHEG_CLASS_NAMES):
        return list(MOCHEG_CLASS_NAMES)
    return [f"class_{i}" for i in range(num_classes)]


class KnowledgeSource(str, Enum):
    """Extractor that produced a knowledge item"""
    TEXT_ENTITY = "text_entity"
    KEY_PHRASE = "key_phrase"
    VISUAL_OBJECT = "visual_object"


class KnowledgeItem(BaseModel):
    """One extracted entity, key phrase or detected object with its embedding"""
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)

    embedding: Vector
    score: StrictFloat = Field(ge=0.0, le=1.0)
    dedup_key: str
    source: KnowledgeSource


class KnowledgeRecord(BaseModel):
    """One claim-evidence pair: four global embeddings plus knowledge lists"""
    model_config = ConfigDict(extra="forbid", frozen=True, allow_inf_nan=False)

    id: str
    claim_text_emb: Vector
    claim_image_emb: Vector
    evidence_text_emb: Vector
    evidence_image_emb: Vector
    text_entities: List[KnowledgeItem] = []
    key_phrases: List[KnowledgeItem] = []
    visual_objects: List[KnowledgeItem] = []
    label: Optional[int] = None

    def knowledge_lists(self) -> Dict[KnowledgeSource, List[KnowledgeItem]]:
        return {
            KnowledgeSource.TEXT_ENTITY: self.text_entities,
            KnowledgeSource.KEY_PHRASE: self.key_phrases,
            KnowledgeSource.VISUAL_OBJECT: self.visual_objects,
        }

    def without_knowledge(self) -> "KnowledgeRecord":
        return self.model_copy(
            update={"text_entities": [], "key_phrases": [], "visual_objects": []}
        )


class DatasetHeader(BaseModel):
    """First line of a dataset file"""
    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(ge=2)
    d_t: int = Field(ge=1)
    d_v: int = Field(ge=1)
    class_names: List[str]

    @model_validator(mode="after")
    def _check_class_names(self) -> "DatasetHeader":
        if len(self.class_names) != self.num_classes:
            raise ValueError(
                f"class_names has {len(self.class_names)} entries, "
                f"expected num_classes={self.num_classes}"
            )
        return self


class Dataset(BaseModel):
    """A header plus its records"""
    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(ge=2)
    d_t: int = Field(ge=1)
    d_v: int = Field(ge=1)
    class_names: List[str]
    records: List[KnowledgeRecord] = []

    @model_validator(mode="after")
    def _check_class_names(self) -> "Dataset":
        if len(self.class_names) != self.num_classes:
            raise ValueError(
                f"class_names has {len(self.class_names)} entries, "
                f"expected num_classes={self.num_classes}"
            )
        return self

    @property
    def header(self) -> DatasetHeader:
        return DatasetHeader(
            num_classes=self.num_classes,
            d_t=self.d_t,
            d_v=self.d_v,
            class_names=list(self.class_names),
        )

    def with_records(self, records: List[KnowledgeRecord]) -> "Dataset":
        return self.model_copy(update={"records": list(records)})

    def labels(self) -> List[int]:
        return [record.label for record in self.records if record.label is not None]
