"""
Experiment Service
Reproducible runs over a RunConfig: synthetic data generation, training,
evaluation, ablation and fusion comparisons, knowledge-source sweeps and
gradient verification
"""

import hashlib
import logging
import os
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from kgfuse.core.checkpoint import load_checkpoint, save_checkpoint
from kgfuse.core.graph import build_graph, graph_to_json
from kgfuse.core.ingest import (
    dump_dataset,
    filter_dataset,
    generate_synthetic,
    load_dataset,
    split_dataset,
)
from kgfuse.core.model import init_params, parameter_shapes, record_loss
from kgfuse.core.numerics import ParamSet, Tape, Tensor, grad_check
from kgfuse.core.report_renderer import ReportRenderer
from kgfuse.core.train_service import TrainingResult, TrainingService
from kgfuse.models.config import FUSION_TABLE_ORDER, FusionVariant, ModelConfig, RunConfig
from kgfuse.models.errors import ConfigurationError
from kgfuse.models.record import Dataset, KnowledgeItem, KnowledgeRecord, KnowledgeSource
from kgfuse.models.report import ComparisonReport, ComparisonRow, GradCheckReport, MetricsReport

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

SPLITS = ("train", "val", "test")

FUSION_NAMES: Dict[FusionVariant, str] = {
    FusionVariant.CONCAT: "Concat Fusion",
    FusionVariant.SELF_ATT: "Self-att Fusion",
    FusionVariant.GCN: "GCN",
    FusionVariant.INDEPENDENT_GAT: "Independent GAT",
    FusionVariant.KGF: "KGF",
}

FULL_MODEL = "KGF (full)"

# Knowledge subsets of the source sweep, widest first
SOURCE_SUBSETS: List[Tuple[str, Tuple[KnowledgeSource, ...]]] = [
    ("KP + Ent text + Ent image", tuple(KnowledgeSource)),
    ("KP + Ent text", (KnowledgeSource.KEY_PHRASE, KnowledgeSource.TEXT_ENTITY)),
    ("KP + Ent image", (KnowledgeSource.KEY_PHRASE, KnowledgeSource.VISUAL_OBJECT)),
    ("Ent text + Ent image", (KnowledgeSource.TEXT_ENTITY, KnowledgeSource.VISUAL_OBJECT)),
    ("KP", (KnowledgeSource.KEY_PHRASE,)),
    ("Ent text", (KnowledgeSource.TEXT_ENTITY,)),
    ("Ent image", (KnowledgeSource.VISUAL_OBJECT,)),
]

# Shape of the random record used for gradient verification
GRADCHECK_DIMS = {"d_t": 8, "d_v": 8, "d": 8, "d_hidden": 4, "num_classes": 5}
GRADCHECK_COUNTS = {
    KnowledgeSource.TEXT_ENTITY: 3,
    KnowledgeSource.KEY_PHRASE: 2,
    KnowledgeSource.VISUAL_OBJECT: 2,
}


def derive_config(base: ModelConfig, **changes: Any) -> ModelConfig:
    """Validated copy of a model config with some fields replaced"""
    return ModelConfig.model_validate({**base.model_dump(), **changes})


def split_hash(dataset: Dataset) -> str:
    """sha256 over the ordered record ids"""
    digest = hashlib.sha256()
    for record in dataset.records:
        digest.update(record.id.encode("utf-8"))
        digest.update(b"\n")
    return digest.hexdigest()


def random_gradcheck_record(seed: int) -> KnowledgeRecord:
    rng = np.random.default_rng(seed)
    d_t, d_v = GRADCHECK_DIMS["d_t"], GRADCHECK_DIMS["d_v"]

    def vector(dim: int) -> List[float]:
        return rng.standard_normal(dim).tolist()

    lists: Dict[KnowledgeSource, List[KnowledgeItem]] = {}
    for source, count in GRADCHECK_COUNTS.items():
        dim = d_v if source == KnowledgeSource.VISUAL_OBJECT else d_t
        lists[source] = [
            KnowledgeItem(
                embedding=vector(dim),
                score=1.0,
                dedup_key=f"{source.value}:{k}",
                source=source,
            )
            for k in range(count)
        ]
    return KnowledgeRecord(
        id="gradcheck",
        claim_text_emb=vector(d_t),
        claim_image_emb=vector(d_v),
        evidence_text_emb=vector(d_t),
        evidence_image_emb=vector(d_v),
        text_entities=lists[KnowledgeSource.TEXT_ENTITY],
        key_phrases=lists[KnowledgeSource.KEY_PHRASE],
        visual_objects=lists[KnowledgeSource.VISUAL_OBJECT],
        label=int(rng.integers(GRADCHECK_DIMS["num_classes"])),
    )


class ExperimentService:
    """Service that runs one RunConfig's commands and writes their artifacts"""

    def __init__(
        self,
        config: RunConfig,
        out_dir: PathLike,
        renderer: Optional[ReportRenderer] = None,
    ) -> None:
        self.config = config
        self.out_dir = Path(out_dir)
        self.data_dir = Path(config.data_dir) if config.data_dir else self.out_dir
        self.renderer = renderer or ReportRenderer()

    @property
    def checkpoint_path(self) -> Path:
        if self.config.checkpoint:
            return Path(self.config.checkpoint)
        return self.out_dir / "checkpoint.json"

    def generate(self) -> Dict[str, int]:
        """Write train/val/test JSON Lines files; returns record counts per split"""
        dataset = generate_synthetic(self.config.synthetic)
        parts = split_dataset(dataset, self.config.synthetic.seed)
        counts = {}
        for name, part in zip(SPLITS, parts):
            dump_dataset(part, self.data_dir / f"{name}.jsonl")
            counts[name] = len(part.records)

        if self.config.dump_graphs:
            path = self.data_dir / "graphs.jsonl"
            with open(path, "w", encoding="utf-8", newline="\n") as f:
                for record in parts[2].records:
                    f.write(graph_to_json(build_graph(record)) + "\n")
            logger.info("Wrote %d test graphs to %s", len(parts[2].records), path)
        return counts

    def load_splits(self) -> Tuple[Dataset, Dataset, Dataset]:
        """Load and filter the three splits, checking them against the model config"""
        model = self.config.model
        splits = []
        for name in SPLITS:
            raw = load_dataset(self.data_dir / f"{name}.jsonl")
            dataset = filter_dataset(raw, self.config.ingest)
            found = (dataset.d_t, dataset.d_v, dataset.num_classes)
            if found != (model.d_t, model.d_v, model.num_classes):
                raise ConfigurationError(
                    f"{name} split has d_t={dataset.d_t}, d_v={dataset.d_v}, "
                    f"num_classes={dataset.num_classes}; model expects d_t={model.d_t}, "
                    f"d_v={model.d_v}, num_classes={model.num_classes}"
                )
            splits.append(dataset)
        return tuple(splits)

    def _fit(
        self, model_config: ModelConfig, train: Dataset, val: Dataset
    ) -> Tuple[TrainingService, TrainingResult]:
        service = TrainingService(model_config, self.config.train)
        params = init_params(model_config)
        return service, service.train(train, params, validation=val)

    def train(self) -> MetricsReport:
        """Train on train, validate per epoch, save the checkpoint and score the test split"""
        train, val, test = self.load_splits()
        service, result = self._fit(self.config.model, train, val)
        save_checkpoint(self.checkpoint_path, self.config.model, result.params)
        self.renderer.write_trace(result.trace, self.out_dir)
        report = service.evaluate(result.params, test)
        self.renderer.write_metrics(report, self.out_dir, "metrics")
        return report

    def evaluate(self) -> MetricsReport:
        _, _, test = self.load_splits()
        model_config, params = load_checkpoint(self.checkpoint_path, expected=self.config.model)
        report = TrainingService(model_config, self.config.train).evaluate(params, test)
        self.renderer.write_metrics(report, self.out_dir, "eval")
        return report

    def run_variants(
        self,
        title: str,
        variants: Sequence[Tuple[str, ModelConfig]],
        baseline: Optional[str] = None,
    ) -> ComparisonReport:
        """Train every variant from the same seed and score all on the same test split"""
        train, val, test = self.load_splits()
        rows = []
        for name, model_config in variants:
            logger.info("%s: training %s", title, name)
            service, result = self._fit(model_config, train, val)
            report = service.evaluate(result.params, test)
            rows.append(
                ComparisonRow(
                    name=name, weighted_f1=report.weighted_f1, accuracy=report.accuracy
                )
            )
        return ComparisonReport(
            title=title,
            rows=rows,
            test_split_hash=split_hash(test),
            num_test_records=len(test.records),
            seed=self.config.model.seed,
            baseline=baseline,
        )

    def ablate(self) -> ComparisonReport:
        base = derive_config(self.config.model, fusion=FusionVariant.KGF)
        variants = [
            (FULL_MODEL, base),
            ("w/o Multi-Knowledge", derive_config(base, use_knowledge=False)),
            (
                "w/o Graph Fusion",
                derive_config(
                    base, fusion=FusionVariant.CONCAT, concat_knowledge_block=True
                ),
            ),
            ("w/o Global", derive_config(base, use_global_concat=False)),
        ]
        report = self.run_variants("Ablation", variants, baseline=FULL_MODEL)
        self.renderer.write_comparison(report, self.out_dir, "ablation")
        return report

    def compare(self) -> ComparisonReport:
        variants = [
            (FUSION_NAMES[fusion], derive_config(self.config.model, fusion=fusion))
            for fusion in FUSION_TABLE_ORDER
        ]
        baseline = FUSION_NAMES[FusionVariant.KGF]
        report = self.run_variants("Fusion comparison", variants, baseline=baseline)
        self.renderer.write_comparison(report, self.out_dir, "compare")
        return report

    def sources(self) -> ComparisonReport:
        base = derive_config(self.config.model, fusion=FusionVariant.KGF, use_knowledge=True)
        variants = [
            (name, derive_config(base, knowledge_sources=list(subset)))
            for name, subset in SOURCE_SUBSETS
        ]
        report = self.run_variants("Knowledge sources", variants, baseline=SOURCE_SUBSETS[0][0])
        self.renderer.write_comparison(report, self.out_dir, "sources")
        return report

    def _gradient_hook(self) -> Optional[Callable[[str, np.ndarray], np.ndarray]]:
        settings = self.config.gradcheck
        if settings.corrupt_tensor is None:
            return None

        def corrupt(name: str, grad: np.ndarray) -> np.ndarray:
            if name != settings.corrupt_tensor:
                return grad
            return grad * (1.0 + settings.corruption)

        return corrupt

    def gradcheck(
        self, variants: Sequence[FusionVariant] = tuple(FUSION_TABLE_ORDER)
    ) -> List[GradCheckReport]:
        """Full-model gradient check of every fusion variant on one random record"""
        settings = self.config.gradcheck
        configs = [
            derive_config(self.config.model, fusion=fusion, **GRADCHECK_DIMS)
            for fusion in variants
        ]
        if settings.corrupt_tensor is not None:
            known = {
                name for model_config in configs for name in parameter_shapes(model_config)
            }
            if settings.corrupt_tensor not in known:
                raise ConfigurationError(
                    f"corrupt_tensor {settings.corrupt_tensor!r} names no parameter"
                )

        record = random_gradcheck_record(settings.seed)
        graph = build_graph(record)
        hook = self._gradient_hook()
        reports = []
        for fusion, model_config in zip(variants, configs):
            params = init_params(model_config)

            def loss(
                tape: Tape,
                model_config: ModelConfig = model_config,
                params: ParamSet = params,
            ) -> Tensor:
                return record_loss(graph, record.label, params, model_config, tape)

            report = grad_check(
                loss,
                params,
                step=settings.step,
                tol=settings.tol,
                max_samples=settings.max_samples,
                seed=settings.seed,
                gradient_hook=hook,
                label=FUSION_NAMES[fusion],
            )
            logger.info(
                "gradcheck %s: max rel err %.3e (%s)",
                report.label, report.max_rel_error, "pass" if report.passed else "FAIL",
            )
            reports.append(report)
        self.renderer.write_gradcheck(reports, self.out_dir)
        return reports
