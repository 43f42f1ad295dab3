"""
Training and evaluation service
Mini-batch cross-entropy training with Adam, plus accuracy / weighted-F1 evaluation
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support

from kgfuse.core.graph import build_graph
from kgfuse.core.model import check_params, forward, init_params, record_loss
from kgfuse.core.numerics import AdamOptimizer, ParamSet, Tape, scale
from kgfuse.models.config import ModelConfig, TrainConfig
from kgfuse.models.errors import ConfigurationError, DatasetValidationError, NumericError
from kgfuse.models.record import Dataset, default_class_names
from kgfuse.models.report import EpochTrace, MetricsReport

logger = logging.getLogger(__name__)


def compute_metrics(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    num_classes: int,
    class_names: Optional[List[str]] = None,
) -> MetricsReport:
    """
    Accuracy, per-class F1 (0/0 counted as 0) and support-weighted F1

    Classes absent from both truth and prediction get F1 0 and support 0.
    """
    if len(y_true) == 0:
        raise DatasetValidationError("cannot compute metrics over zero records")
    if len(y_true) != len(y_pred):
        raise DatasetValidationError(f"{len(y_true)} labels but {len(y_pred)} predictions")

    labels = list(range(num_classes))
    _, _, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=labels, average=None, zero_division=0
    )
    confusion = confusion_matrix(y_true, y_pred, labels=labels)
    total = int(support.sum())
    weighted = float(np.dot(support, f1) / total) if total else 0.0
    return MetricsReport(
        accuracy=float(np.trace(confusion)) / len(y_true),
        per_class_f1=[float(x) for x in f1],
        weighted_f1=weighted,
        confusion=confusion.astype(int).tolist(),
        support=[int(x) for x in support],
        class_names=list(class_names or default_class_names(num_classes)),
    )


@dataclass
class TrainingResult:
    """Trained parameters and the per-epoch trace"""
    params: ParamSet
    trace: List[EpochTrace] = field(default_factory=list)
    best_epoch: Optional[int] = None


class TrainingService:
    """Service for training and evaluating one model configuration"""

    def __init__(
        self, model_config: ModelConfig, train_config: Optional[TrainConfig] = None
    ) -> None:
        self.model_config = model_config
        self.train_config = train_config or TrainConfig()

    def _check_labeled(self, dataset: Dataset, purpose: str) -> None:
        if not dataset.records:
            raise DatasetValidationError(f"cannot {purpose} on an empty dataset")
        if dataset.num_classes != self.model_config.num_classes:
            raise ConfigurationError(
                f"dataset has {dataset.num_classes} classes, "
                f"model expects {self.model_config.num_classes}"
            )
        missing = [r.id for r in dataset.records if r.label is None]
        if missing:
            raise DatasetValidationError(
                f"cannot {purpose}: {len(missing)} records have no label (first: {missing[0]!r})"
            )

    def train(
        self,
        dataset: Dataset,
        params: Optional[ParamSet] = None,
        validation: Optional[Dataset] = None,
    ) -> TrainingResult:
        """
        Fit params on dataset (in place) and return them with the trace

        Each batch averages record losses, back-propagates, then takes one
        Adam step. Validation metrics are computed per epoch when a
        non-empty validation set is given.
        """
        config = self.train_config
        self._check_labeled(dataset, "train")
        graphs = [build_graph(record) for record in dataset.records]
        labels = dataset.labels()
        params = params if params is not None else init_params(self.model_config)
        check_params(self.model_config, params)

        has_validation = validation is not None and len(validation.records) > 0
        patience = config.early_stop_patience if has_validation else None
        if config.early_stop_patience is not None and not has_validation:
            logger.warning("early_stop_patience ignored: no validation records")

        optimizer = AdamOptimizer(params, config.learning_rate, config.betas, config.eps)
        rng = np.random.default_rng(config.seed)
        n = len(graphs)
        result = TrainingResult(params=params)
        best_f1 = -1.0
        best_params: Optional[ParamSet] = None
        stale = 0

        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n) if config.shuffle else np.arange(n)
            total_loss = 0.0
            for batch_number, start in enumerate(range(0, n, config.batch_size)):
                batch = order[start:start + config.batch_size]
                params.zero_grads()
                batch_loss = 0.0
                try:
                    for i in batch:
                        tape = Tape()
                        loss = record_loss(graphs[i], labels[i], params, self.model_config, tape)
                        tape.backward(scale(loss, 1.0 / len(batch)))
                        batch_loss += loss.item()
                    optimizer.step()
                except NumericError as e:
                    raise NumericError(f"epoch {epoch}, batch {batch_number}: {e}") from e
                total_loss += batch_loss
                logger.debug(
                    "epoch %d batch %d: mean loss %.6f",
                    epoch,
                    batch_number,
                    batch_loss / len(batch),
                )

            row = EpochTrace(epoch=epoch, mean_loss=total_loss / n)
            if has_validation:
                report = self.evaluate(params, validation)
                row.val_accuracy = report.accuracy
                row.val_weighted_f1 = report.weighted_f1
            result.trace.append(row)
            logger.info(
                "epoch %d/%d: loss %.6f val_acc %s val_wf1 %s",
                epoch, config.epochs, row.mean_loss,
                "-" if row.val_accuracy is None else f"{row.val_accuracy:.4f}",
                "-" if row.val_weighted_f1 is None else f"{row.val_weighted_f1:.4f}",
            )

            if patience is None:
                continue
            if row.val_weighted_f1 > best_f1:
                best_f1 = row.val_weighted_f1
                best_params = params.copy()
                result.best_epoch = epoch
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    logger.info(
                        "early stop after epoch %d (best epoch %d)", epoch, result.best_epoch
                    )
                    break

        if best_params is not None:
            for param in params:
                param.value[...] = best_params[param.name].value
        params.zero_grads()
        return result

    def predict(self, params: ParamSet, dataset: Dataset) -> List[int]:
        """Argmax class per record; labels are not required"""
        check_params(self.model_config, params)
        return [forward(build_graph(r), params, self.model_config).label for r in dataset.records]

    def evaluate(self, params: ParamSet, dataset: Dataset) -> MetricsReport:
        """Argmax predictions scored against labels; params are not touched"""
        self._check_labeled(dataset, "evaluate")
        predictions = self.predict(params, dataset)
        return compute_metrics(
            dataset.labels(), predictions, dataset.num_classes, dataset.class_names
        )

