"""
Result models for evaluation, training traces, comparisons and gradient checks
"""

from typing import List, Optional

from pydantic import BaseModel


class MetricsReport(BaseModel):
    """Classification metrics over one evaluated split"""
    accuracy: float
    per_class_f1: List[float]
    weighted_f1: float
    confusion: List[List[int]]
    support: List[int]
    class_names: List[str] = []

    @property
    def num_evaluated(self) -> int:
        return sum(sum(row) for row in self.confusion)


class EpochTrace(BaseModel):
    """One row of the training trace"""
    epoch: int
    mean_loss: float
    val_accuracy: Optional[float] = None
    val_weighted_f1: Optional[float] = None


class ComparisonRow(BaseModel):
    """One variant's test metrics"""
    name: str
    weighted_f1: float
    accuracy: float


class ComparisonReport(BaseModel):
    """Variants trained and evaluated on a shared split and seed"""
    title: str
    rows: List[ComparisonRow]
    test_split_hash: str
    num_test_records: int
    seed: int
    baseline: Optional[str] = None


class GradCheckResult(BaseModel):
    """Finite-difference comparison for one parameter tensor"""
    name: str
    checked: int
    skipped: int
    max_rel_error: float
    passed: bool


class GradCheckReport(BaseModel):
    """Per-tensor results of one gradient check"""
    results: List[GradCheckResult]
    tol: float
    label: str = ""

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    @property
    def max_rel_error(self) -> float:
        return max((result.max_rel_error for result in self.results), default=0.0)

    @property
    def failing_tensors(self) -> List[str]:
        return [result.name for result in self.results if not result.passed]
