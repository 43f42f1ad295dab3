"""
Dense float64 tensors with reverse-mode differentiation

Operations record themselves on the Tape of their inputs; Tape.backward
walks the record in reverse and accumulates gradients into watched Params.
Also home to the Adam optimizer and the finite-difference gradient check.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from kgfuse.models.errors import (
    ConfigurationError,
    DegenerateInputError,
    DeterminismError,
    DimensionError,
    LabelIndexError,
    NumericError,
)
from kgfuse.models.report import GradCheckReport, GradCheckResult

logger = logging.getLogger(__name__)

NORM_EPSILON = 1e-12
PROB_FLOOR = 1e-12

Gradients = Tuple[Optional[np.ndarray], ...]
BackwardFn = Callable[[np.ndarray], Gradients]


class Tensor:
    """Immutable float64 array, optionally tracked by a Tape"""

    __slots__ = ("data", "tape", "requires_grad")

    def __init__(
        self,
        data: npt.ArrayLike,
        tape: Optional["Tape"] = None,
        requires_grad: bool = False,
    ) -> None:
        array = np.array(data, dtype=np.float64)
        array.setflags(write=False)
        self.data = array
        self.tape = tape
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class Param:
    """Trainable tensor with its accumulated gradient"""
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.value = np.array(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


class ParamSet:
    """Ordered collection of named parameters"""

    def __init__(self, params: Sequence[Param] = ()) -> None:
        self._params: Dict[str, Param] = {}
        for param in params:
            self.add(param)

    def add(self, param: Param) -> Param:
        if param.name in self._params:
            raise ConfigurationError(f"duplicate parameter name: {param.name}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Param:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigurationError(f"unknown parameter: {name}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Param]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def zero_grads(self) -> None:
        for param in self:
            param.zero_grad()

    def copy(self) -> "ParamSet":
        return ParamSet([Param(p.name, p.value.copy()) for p in self])


@dataclass
class TapeEntry:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Recording of primitive operations for one forward pass"""

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self._watched: Dict[str, Tuple[Param, Tensor]] = {}

    def watch(self, param: Param) -> Tensor:
        """Leaf tensor holding a snapshot of param; backward feeds param.grad"""
        if param.name in self._watched:
            return self._watched[param.name][1]
        leaf = Tensor(param.value, tape=self, requires_grad=True)
        self._watched[param.name] = (param, leaf)
        return leaf

    def record(
        self, op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn
    ) -> Tensor:
        requires_grad = any(t.requires_grad for t in inputs)
        out = Tensor(data, tape=self, requires_grad=requires_grad)
        if requires_grad:
            self.entries.append(TapeEntry(op, tuple(inputs), out, backward))
        return out

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ConfigurationError("loss was not recorded on this tape")
        if not loss.requires_grad:
            return

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            upstream = grads.pop(id(entry.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(entry.inputs, entry.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad

        for param, leaf in self._watched.values():
            grad = grads.get(id(leaf))
            if grad is not None:
                param.grad += grad


def constant(data: npt.ArrayLike) -> Tensor:
    return Tensor(data)


def _emit(
    op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn
) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    for tensor in inputs:
        if tensor.tape is not None:
            return tensor.tape.record(op, inputs, data, backward)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_finite(op: str, *tensors: Tensor) -> None:
    for tensor in tensors:
        if not np.all(np.isfinite(tensor.data)):
            raise NumericError(f"{op} received non-finite input")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(grad: np.ndarray) -> Gradients:
        return grad @ b_data.T, a_data.T @ grad

    return _emit("matmul", (a, b), a_data @ b_data, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"add shape mismatch: {a.shape} + {b.shape}") from None
    a_shape, b_shape = a.shape, b.shape

    def backward(grad: np.ndarray) -> Gradients:
        return _unbroadcast(grad, a_shape), _unbroadcast(grad, b_shape)

    return _emit("add", (a, b), a.data + b.data, backward)


def scale(x: Tensor, factor: float) -> Tensor:
    def backward(grad: np.ndarray) -> Gradients:
        return (grad * factor,)

    return _emit("scale", (x,), x.data * factor, backward)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0

    def backward(grad: np.ndarray) -> Gradients:
        return (grad * active,)

    return _emit("relu", (x,), np.where(active, x.data, 0.0), backward)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """max(x, slope*x); the subgradient at exactly 0 is slope"""
    if not 0.0 < slope < 1.0:
        raise ConfigurationError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    _check_finite("leaky_relu", x)
    positive = x.data > 0
    local = np.where(positive, 1.0, slope)

    def backward(grad: np.ndarray) -> Gradients:
        return (grad * local,)

    return _emit("leaky_relu", (x,), x.data * local, backward)


def softmax(logits: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax over the last axis; entries where mask is False come out exactly 0"""
    _check_finite("softmax", logits)
    z = logits.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise DimensionError(f"softmax mask shape {mask.shape} != logits shape {z.shape}")
        if not np.all(mask.any(axis=-1)):
            raise DegenerateInputError("softmax over an all-masked row")
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    if mask is not None:
        weights = np.where(mask, weights, 0.0)
    probs = weights / weights.sum(axis=-1, keepdims=True)

    def backward(grad: np.ndarray) -> Gradients:
        return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (logits,), probs, backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise DimensionError("concat of zero tensors")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat shape mismatch on axis {axis}: {shapes}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(grad: np.ndarray) -> Gradients:
        return tuple(np.split(grad, bounds, axis=axis))

    return _emit("concat", tuple(tensors), data, backward)


def take_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise DimensionError(f"row index out of range for shape {x.shape}")
    shape = x.shape

    def backward(grad: np.ndarray) -> Gradients:
        full = np.zeros(shape)
        np.add.at(full, index, grad)
        return (full,)

    return _emit("take_rows", (x,), x.data[index], backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {x.shape}")

    def backward(grad: np.ndarray) -> Gradients:
        return (grad.T,)

    return _emit("transpose", (x,), x.data.T, backward)


def mean_rows(x: Tensor) -> Tensor:
    """Column means as a 1 x d row"""
    rows = x.shape[0]
    if rows == 0:
        raise DegenerateInputError("mean over zero rows")

    def backward(grad: np.ndarray) -> Gradients:
        return (np.broadcast_to(grad / rows, x.shape).copy(),)

    return _emit("mean_rows", (x,), x.data.mean(axis=0, keepdims=True), backward)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def backward(grad: np.ndarray) -> Gradients:
        return (np.full(shape, float(grad)),)

    return _emit("sum_all", (x,), np.array(x.data.sum()), backward)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """
    Cross-entropy of softmax(logits) against label, capped at -ln(1e-12)

    Gradient is probs - onehot below the cap and zero once the cap applies.
    """
    _check_finite("softmax_cross_entropy", logits)
    z = logits.data.reshape(-1)
    if not 0 <= label < z.size:
        raise LabelIndexError(f"label {label} outside [0, {z.size})")
    shifted = z - z.max()
    log_norm = math.log(np.exp(shifted).sum())
    probs = np.exp(shifted - log_norm)
    exact = log_norm - shifted[label]
    cap = -math.log(PROB_FLOOR)
    clamped = exact > cap
    loss = cap if clamped else exact
    onehot = np.zeros_like(probs)
    onehot[label] = 1.0
    shape = logits.shape

    def backward(grad: np.ndarray) -> Gradients:
        if clamped:
            # the capped loss is flat in the logits
            return (np.zeros(shape),)
        return (((probs - onehot) * float(grad)).reshape(shape),)

    return _emit("softmax_cross_entropy", (logits,), np.array(loss), backward)


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-ln(max(probs[label], 1e-12)) for an already normalized distribution"""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if not 0 <= label < probs.size:
        raise LabelIndexError(f"label {label} outside [0, {probs.size})")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise DegenerateInputError(f"probabilities sum to {probs.sum()}, not 1")
    return -math.log(max(float(probs[label]), PROB_FLOOR))


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """
    u.v / (|u||v|), or 0 when either norm is below 1e-12

    Both vectors are divided by their largest magnitude first, so the norms
    and the dot product stay finite for any finite input.
    """
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.size != v.size:
        raise DimensionError(f"cosine_similarity length mismatch: {u.size} vs {v.size}")
    if u.size == 0:
        raise DimensionError("cosine_similarity of empty vectors")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NumericError("cosine_similarity of non-finite vector")

    scale_u = float(np.max(np.abs(u)))
    scale_v = float(np.max(np.abs(v)))
    if scale_u == 0.0 or scale_v == 0.0:
        return 0.0
    unit_u = u / scale_u
    unit_v = v / scale_v
    norm_u = float(np.linalg.norm(unit_u))
    norm_v = float(np.linalg.norm(unit_v))
    if scale_u * norm_u < NORM_EPSILON or scale_v * norm_v < NORM_EPSILON:
        return 0.0
    value = float(np.dot(unit_u, unit_v)) / (norm_u * norm_v)
    if not math.isfinite(value):
        raise NumericError(f"cosine_similarity produced {value}")
    # roundoff can leave |value| a few ulps above 1
    return min(1.0, max(-1.0, value))


class AdamOptimizer:
    """Bias-corrected Adam; moments persist across steps"""

    def __init__(
        self,
        params: ParamSet,
        lr: float,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, self.m, self.v, self.lr, self.betas, self.eps, self.t)


def adam_step(
    params: ParamSet,
    m: Dict[str, np.ndarray],
    v: Dict[str, np.ndarray],
    lr: float,
    betas: Tuple[float, float],
    eps: float,
    t: int,
) -> None:
    """One in-place Adam update at step t (t >= 1)"""
    if t < 1:
        raise ConfigurationError(f"adam step count must be >= 1, got {t}")
    for param in params:
        if not np.all(np.isfinite(param.grad)):
            raise NumericError(f"non-finite gradient for parameter {param.name}")
    beta1, beta2 = betas
    for param in params:
        grad = param.grad
        m[param.name] = beta1 * m[param.name] + (1.0 - beta1) * grad
        v[param.name] = beta2 * v[param.name] + (1.0 - beta2) * grad * grad
        m_hat = m[param.name] / (1.0 - beta1**t)
        v_hat = v[param.name] / (1.0 - beta2**t)
        param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


GradientHook = Callable[[str, np.ndarray], np.ndarray]


def grad_check(
    forward: Callable[[Tape], Tensor],
    params: ParamSet,
    step: float = 1e-5,
    tol: float = 1e-4,
    max_samples: int = 200,
    seed: int = 0,
    gradient_hook: Optional[GradientHook] = None,
    label: str = "",
    negligible: float = 1e-8,
    abs_floor: float = 1e-6,
) -> GradCheckReport:
    """
    Compare reverse-mode gradients against central differences

    forward builds a scalar loss on the tape it is given, reading parameters
    through tape.watch. Up to max_samples elements per tensor are drawn with
    a seeded generator. Elements whose analytic and numeric gradients are both
    below `negligible` are skipped; the relative error denominator is floored
    at `abs_floor`.
    """
    if not 1e-6 <= step <= 1e-4:
        raise ConfigurationError(f"gradient check step must lie in [1e-6, 1e-4], got {step}")

    def evaluate() -> float:
        return forward(Tape()).item()

    baseline = evaluate()
    if evaluate() != baseline:
        raise DeterminismError("forward returned different values on identical inputs")

    params.zero_grads()
    tape = Tape()
    tape.backward(forward(tape))

    rng = np.random.default_rng(seed)
    results: List[GradCheckResult] = []
    for param in params:
        analytic = param.grad.copy()
        if gradient_hook is not None:
            analytic = gradient_hook(param.name, analytic)
        analytic = analytic.reshape(-1)
        flat = param.value.reshape(-1)
        count = min(flat.size, max_samples)
        sample = np.sort(rng.choice(flat.size, size=count, replace=False))

        max_err = 0.0
        skipped = 0
        for index in sample:
            original = flat[index]
            flat[index] = original + step
            f_plus = evaluate()
            flat[index] = original - step
            f_minus = evaluate()
            flat[index] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            exact = float(analytic[index])
            if abs(exact) < negligible and abs(numeric) < negligible:
                skipped += 1
                continue
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), abs_floor)
            max_err = max(max_err, err)

        result = GradCheckResult(
            name=param.name,
            checked=int(count - skipped),
            skipped=skipped,
            max_rel_error=max_err,
            passed=max_err < tol,
        )
        logger.debug("grad check %s %s: max rel err %.3e", label, param.name, max_err)
        results.append(result)

    params.zero_grads()
    return GradCheckReport(results=results, tol=tol, label=label)
