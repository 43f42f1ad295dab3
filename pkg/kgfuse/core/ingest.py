"""
Claim-evidence dataset ingestion

Loads and writes the JSON Lines dataset format, applies confidence
thresholds and deduplication to knowledge lists, and generates labeled
synthetic datasets for desk-scale experiments.
"""

import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from kgfuse.models.config import IngestConfig, LabelSignal, SyntheticSpec
from kgfuse.models.errors import DatasetValidationError, ParseError
from kgfuse.models.record import (
    Dataset,
    DatasetHeader,
    KnowledgeItem,
    KnowledgeRecord,
    KnowledgeSource,
    default_class_names,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

TEXT_SOURCES = (KnowledgeSource.TEXT_ENTITY, KnowledgeSource.KEY_PHRASE)
LIST_FIELDS = {
    KnowledgeSource.TEXT_ENTITY: "text_entities",
    KnowledgeSource.KEY_PHRASE: "key_phrases",
    KnowledgeSource.VISUAL_OBJECT: "visual_objects",
}


def load_dataset(path: PathLike) -> Dataset:
    """
    Parse a dataset file: one header object, then one record per line

    Raises ParseError (with the 1-based line number) for malformed lines,
    dimension mismatches and misplaced source tags, DatasetValidationError
    for out-of-range labels and duplicate ids.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()

    numbered = [(n, line) for n, line in enumerate(lines, start=1) if line.strip()]
    if not numbered:
        raise ParseError("empty dataset file (no header line)", line=1)

    header_line, header_text = numbered[0]
    try:
        header = DatasetHeader.model_validate(json.loads(header_text))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ParseError(f"invalid header: {e}", line=header_line) from e

    records: List[KnowledgeRecord] = []
    seen_ids: Dict[str, int] = {}
    for line_number, text in numbered[1:]:
        record = _parse_record(text, header, line_number)
        if record.id in seen_ids:
            raise DatasetValidationError(
                f"line {line_number}: duplicate record id {record.id!r} "
                f"(first seen on line {seen_ids[record.id]})"
            )
        seen_ids[record.id] = line_number
        records.append(record)

    logger.info("Loaded %d records from %s", len(records), path)
    return Dataset(
        num_classes=header.num_classes,
        d_t=header.d_t,
        d_v=header.d_v,
        class_names=header.class_names,
        records=records,
    )


def _parse_record(text: str, header: DatasetHeader, line_number: int) -> KnowledgeRecord:
    try:
        record = KnowledgeRecord.model_validate(json.loads(text))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ParseError(f"malformed record: {e}", line=line_number) from e

    expected = {
        "claim_text_emb": header.d_t,
        "evidence_text_emb": header.d_t,
        "claim_image_emb": header.d_v,
        "evidence_image_emb": header.d_v,
    }
    for field_name, dim in expected.items():
        actual = len(getattr(record, field_name))
        if actual != dim:
            raise ParseError(
                f"record {record.id!r}: {field_name} has {actual} values, expected {dim}",
                line=line_number,
            )

    for source, items in record.knowledge_lists().items():
        dim = header.d_t if source in TEXT_SOURCES else header.d_v
        for position, item in enumerate(items):
            if item.source != source:
                raise ParseError(
                    f"record {record.id!r}: {LIST_FIELDS[source]}[{position}] "
                    f"has source tag {item.source.value!r}",
                    line=line_number,
                )
            if len(item.embedding) != dim:
                raise ParseError(
                    f"record {record.id!r}: {LIST_FIELDS[source]}[{position}] "
                    f"embedding has {len(item.embedding)} values, expected {dim}",
                    line=line_number,
                )

    if record.label is not None and not 0 <= record.label < header.num_classes:
        raise DatasetValidationError(
            f"line {line_number}: record {record.id!r} label {record.label} "
            f"outside [0, {header.num_classes})"
        )
    return record


def dataset_to_jsonl(dataset: Dataset) -> str:
    """Serialize a dataset into the file format read by load_dataset"""
    lines = [json.dumps(dataset.header.model_dump(mode="json"))]
    for record in dataset.records:
        lines.append(json.dumps(record.model_dump(mode="json", exclude_none=True)))
    return "\n".join(lines) + "\n"


def dump_dataset(dataset: Dataset, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dataset_to_jsonl(dataset))
    logger.info("Wrote %d records to %s", len(dataset.records), path)


def _filter_items(
    items: Sequence[KnowledgeItem], threshold: float, limit: int
) -> List[KnowledgeItem]:
    seen = set()
    kept: List[KnowledgeItem] = []
    for item in items:
        if item.score < threshold or item.dedup_key in seen:
            continue
        seen.add(item.dedup_key)
        kept.append(item)
    return kept[:limit]


def filter_and_dedup(
    record: KnowledgeRecord,
    text_threshold: float = 0.3,
    visual_threshold: float = 0.8,
    max_per_source: int = 16,
) -> KnowledgeRecord:
    """
    Threshold, deduplicate and cap each knowledge list

    Text entities and key phrases use text_threshold, visual objects use
    visual_threshold. The first occurrence of a dedup_key wins; survivors
    keep their order. Globals and label are untouched.
    """
    for name, value in (("text_threshold", text_threshold), ("visual_threshold", visual_threshold)):
        if not 0.0 <= value <= 1.0:
            raise DatasetValidationError(f"{name} must lie in [0, 1], got {value}")
    if max_per_source < 0:
        raise DatasetValidationError(f"max_per_source must be >= 0, got {max_per_source}")

    return record.model_copy(
        update={
            "text_entities": _filter_items(
                record.text_entities, text_threshold, max_per_source
            ),
            "key_phrases": _filter_items(
                record.key_phrases, text_threshold, max_per_source
            ),
            "visual_objects": _filter_items(
                record.visual_objects, visual_threshold, max_per_source
            ),
        }
    )


def filter_dataset(dataset: Dataset, config: IngestConfig) -> Dataset:
    return dataset.with_records(
        [
            filter_and_dedup(
                record,
                config.text_threshold,
                config.visual_threshold,
                config.max_per_source,
            )
            for record in dataset.records
        ]
    )


def split_dataset(dataset: Dataset, seed: int) -> Tuple[Dataset, Dataset, Dataset]:
    """Seeded record-level 80/10/10 train/val/test split"""
    n = len(dataset.records)
    order = np.random.default_rng(seed).permutation(n)
    n_train = n * 8 // 10
    n_val = n // 10
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(
        dataset.with_records([dataset.records[i] for i in sorted(part)]) for part in parts
    )


class SyntheticDatasetGenerator:
    """
    Draws a labeled dataset around per-class prototypes

    Each class has one unit prototype per modality (orthonormal when the
    class count fits in the dimension). Signal-carrying embeddings are
    prototype plus Gaussian noise, renormalized; noise embeddings are random
    unit vectors.
    """

    def __init__(self, spec: SyntheticSpec) -> None:
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.text_prototypes = self._draw_prototypes(spec.d_t)
        self.visual_prototypes = self._draw_prototypes(spec.d_v)

    def _draw_prototypes(self, dim: int) -> np.ndarray:
        num_classes = self.spec.num_classes
        if num_classes <= dim:
            q, _ = np.linalg.qr(self.rng.standard_normal((dim, num_classes)))
            return q.T.copy()
        raw = self.rng.standard_normal((num_classes, dim))
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)

    def _unit(self, dim: int) -> np.ndarray:
        vector = self.rng.standard_normal(dim)
        return vector / np.linalg.norm(vector)

    def _around(self, prototype: np.ndarray) -> np.ndarray:
        vector = prototype + self.spec.noise_sigma * self.rng.standard_normal(prototype.size)
        return vector / np.linalg.norm(vector)

    def _item(
        self, embedding: np.ndarray, score: float, key: str, source: KnowledgeSource
    ) -> KnowledgeItem:
        return KnowledgeItem(
            embedding=embedding.tolist(),
            score=score,
            dedup_key=key,
            source=source,
        )

    def _record(self, index: int, label: int) -> KnowledgeRecord:
        spec = self.spec
        record_id = f"syn-{index:05d}"
        text_proto = self.text_prototypes[label]
        visual_proto = self.visual_prototypes[label]

        if spec.label_signal == LabelSignal.GLOBALS:
            globals_ = [self._around(text_proto), self._around(visual_proto),
                        self._around(text_proto), self._around(visual_proto)]
        else:
            globals_ = [self._unit(spec.d_t), self._unit(spec.d_v),
                        self._unit(spec.d_t), self._unit(spec.d_v)]

        lists: Dict[KnowledgeSource, List[KnowledgeItem]] = {
            source: [] for source in KnowledgeSource
        }
        counts = {
            KnowledgeSource.TEXT_ENTITY: spec.knowledge_counts.text_entities,
            KnowledgeSource.KEY_PHRASE: spec.knowledge_counts.key_phrases,
            KnowledgeSource.VISUAL_OBJECT: spec.knowledge_counts.visual_objects,
        }
        for source, count in counts.items():
            visual = source == KnowledgeSource.VISUAL_OBJECT
            prototype = visual_proto if visual else text_proto
            # signal items clear the default extraction thresholds (0.3 text, 0.8 visual)
            low = 0.85 if visual else 0.5
            for k in range(count):
                score = float(self.rng.uniform(low, 1.0))
                key = f"{record_id}:{source.value}:{k}"
                lists[source].append(self._item(self._around(prototype), score, key, source))

        sources = list(KnowledgeSource)
        for k in range(spec.noise_items_per_record):
            source = sources[int(self.rng.integers(len(sources)))]
            dim = spec.d_v if source == KnowledgeSource.VISUAL_OBJECT else spec.d_t
            score = float(self.rng.uniform(0.0, 1.0))
            key = f"{record_id}:noise:{k}"
            lists[source].append(self._item(self._unit(dim), score, key, source))

        return KnowledgeRecord(
            id=record_id,
            claim_text_emb=globals_[0].tolist(),
            claim_image_emb=globals_[1].tolist(),
            evidence_text_emb=globals_[2].tolist(),
            evidence_image_emb=globals_[3].tolist(),
            text_entities=lists[KnowledgeSource.TEXT_ENTITY],
            key_phrases=lists[KnowledgeSource.KEY_PHRASE],
            visual_objects=lists[KnowledgeSource.VISUAL_OBJECT],
            label=label,
        )

    def generate(self) -> Dataset:
        spec = self.spec
        records = []
        # classes interleaved so any prefix stays roughly balanced
        for i in range(spec.records_per_class):
            for label in range(spec.num_classes):
                records.append(self._record(len(records), label))
        class_names = spec.class_names or default_class_names(spec.num_classes)
        logger.info(
            "Generated %d synthetic records (%d classes, signal=%s)",
            len(records), spec.num_classes, spec.label_signal.value,
        )
        return Dataset(
            num_classes=spec.num_classes,
            d_t=spec.d_t,
            d_v=spec.d_v,
            class_names=list(class_names),
            records=records,
        )


def generate_synthetic(spec: Optional[SyntheticSpec] = None, **overrides) -> Dataset:
    """Seed-deterministic, label-balanced synthetic dataset"""
    if spec is None:
        spec = SyntheticSpec(**overrides)
    elif overrides:
        spec = SyntheticSpec.model_validate({**spec.model_dump(), **overrides})
    return SyntheticDatasetGenerator(spec).generate()
