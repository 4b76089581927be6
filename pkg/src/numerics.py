"""
מנוע טנזורים צפוף עם גזירה לאחור (reverse-mode) עבור כל הארכיטקטורות

כל הערכים נשמרים כ-float64. פעולה שאחד מקלטיה דורש גרדיאנט נרשמת בגרף,
ו-backward בונה ממנו Tape בסדר טופולוגי ועובר עליו פעם אחת לאחור.
"""
import itertools
import logging
import os
import zlib
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

_DEBUG = os.getenv("HYPERDISTILL_DEBUG", "0") == "1"
_node_ids = itertools.count()
_multiply_counter: ContextVar[Optional["MultiplyCounter"]] = ContextVar("multiply_counter", default=None)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]


class DimensionError(ValueError):
    """אי-התאמה בממדים, ציר לא חוקי או loss שאינו סקלר"""


class NumericalError(ArithmeticError):
    """ערכים לא סופיים (NaN/Inf)"""


class OptimizerError(NumericalError):
    """גרדיאנטים לא סופיים בשלב האופטימיזציה"""


def set_debug(enabled: bool) -> None:
    """הפעלת בדיקת NaN/Inf אחרי כל פעולה"""
    global _DEBUG
    _DEBUG = enabled


def debug_enabled() -> bool:
    return _DEBUG


def seed_stream(seed: int, name: str) -> np.random.Generator:
    """מחולל אקראיות בעל שם שנגזר מהזרע הראשי"""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def derive_seed(seed: int, name: str) -> int:
    return int(seed_stream(seed, name).integers(0, 2**31 - 1))


@dataclass
class MultiplyCounter:
    """מונה כפלים של matmul, לאימות ספירת ה-FLOPs האנליטית"""
    multiplies: int = 0

    def add(self, count: int) -> None:
        self.multiplies += count


@contextmanager
def count_multiplies() -> Iterator[MultiplyCounter]:
    counter = MultiplyCounter()
    token = _multiply_counter.set(counter)
    try:
        yield counter
    finally:
        _multiply_counter.reset(token)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """טנזור צפוף עם גרדיאנט אופציונלי"""

    __slots__ = ("data", "requires_grad", "grad", "id", "op", "parents", "backward_fn")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.id = next(_node_ids)
        self.op = "leaf"
        self.parents: Tuple["Tensor", ...] = ()
        self.backward_fn: Optional[BackwardFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        return self.data.ravel()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.id = next(_node_ids)
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.parents = ()
        out.backward_fn = None
    if _DEBUG and not np.all(np.isfinite(data)):
        raise NumericalError(f"Non-finite values produced by {op} (shape {data.shape})")
    return out


def _broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...]) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"Incompatible shapes {a} and {b}") from None


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """סכימת גרדיאנט חזרה לצורת הקלט אחרי broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# פעולות איבר-איבר

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _result(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def scale(x: ArrayLike, factor: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,), "exp")


def power(x: ArrayLike, exponent: float) -> Tensor:
    x = as_tensor(x)
    y = np.power(x.data, exponent)
    return _result(y, (x,), lambda g: (g * exponent * np.power(x.data, exponent - 1.0),), "power")


def clip(x: ArrayLike, low: float, high: float) -> Tensor:
    """חיתוך לטווח; הגרדיאנט עובר רק בתוך הטווח"""
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)
    return _result(np.clip(x.data, low, high), (x,), lambda g: (g * inside,), "clip")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
}


def elementwise(op: str, *inputs) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"Unknown elementwise op: {op}") from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# מכפלת מטריצות

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """מכפלת מטריצות עם batch אופציונלי בממדים המובילים"""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul requires matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    batch = _broadcast_shape(a.shape[:-2], b.shape[:-2])

    counter = _multiply_counter.get()
    if counter is not None:
        counter.add(int(np.prod(batch, dtype=np.int64)) * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def backward(g: np.ndarray):
        grad_a = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        grad_b = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return grad_a, grad_b

    return _result(a.data @ b.data, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# צמצומים ושינויי צורה

def _check_axis(x: Tensor, axis: Optional[int]) -> None:
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"Axis {axis} out of range for shape {x.shape}")


def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    _check_axis(x, axis)
    return _result(
        x.data.sum(axis=axis, keepdims=keepdims), (x,),
        lambda g: (_expand_reduced(g, x.shape, axis, keepdims),),
        "sum",
    )


def reduce_mean(x: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    _check_axis(x, axis)
    count = x.size if axis is None else x.shape[axis]
    return _result(
        x.data.mean(axis=axis, keepdims=keepdims), (x,),
        lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,),
        "mean",
    )


def reshape(x: ArrayLike, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"Cannot reshape {x.shape} into {tuple(shape)}") from None
    return _result(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def take(x: ArrayLike, index) -> Tensor:
    """אינדוקס (חיתוך או מערך אינדקסים); הגרדיאנט מצטבר עם np.add.at"""
    x = as_tensor(x)
    parts = index if isinstance(index, tuple) else (index,)
    advanced = any(isinstance(part, (list, np.ndarray)) for part in parts)

    def backward(g: np.ndarray):
        grad = np.zeros_like(x.data)
        if advanced:
            np.add.at(grad, index, g)
        else:
            grad[index] = g
        return (grad,)

    return _result(np.array(x.data[index]), (x,), backward, "take")


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"Cannot concatenate shapes {[t.shape for t in tensors]}: {e}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(data, tensors, lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


# ---------------------------------------------------------------------------
# softmax, layernorm, dropout

def softmax_rows(x: ArrayLike) -> Tensor:
    """softmax לאורך הציר האחרון, עם חיסור המקסימום לכל שורה"""
    x = as_tensor(x)
    shifted = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = shifted / shifted.sum(axis=-1, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), "softmax")


def layernorm(x: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-5) -> Tensor:
    x = as_tensor(x)
    centered = x - reduce_mean(x, axis=-1, keepdims=True)
    variance = reduce_mean(centered * centered, axis=-1, keepdims=True)
    normalized = centered * power(variance + eps, -0.5)
    return normalized * gain + bias


def dropout(x: ArrayLike, p: float, train: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """dropout הפוך: שורדים מוכפלים ב-1/(1-p) באימון, זהות בהערכה"""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"Dropout probability must satisfy 0 <= p < 1, got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("Dropout in train mode requires a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(mask))


# ---------------------------------------------------------------------------
# גזירה לאחור

class Tape:
    """רשימת הצמתים בסדר טופולוגי (כל צומת אחרי קלטיו)"""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.id in visited:
                continue
            visited.add(node.id)
            stack.append((node, True))
            for parent in reversed(node.parents):
                if parent.requires_grad and parent.id not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def run_backward(self, seed: np.ndarray) -> Dict[Tensor, np.ndarray]:
        grads: Dict[int, np.ndarray] = {self.nodes[-1].id: seed}
        leaves: Dict[Tensor, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.backward_fn is None:
                leaves[node] = np.array(g)
                continue
            for parent, parent_grad in zip(node.parents, node.backward_fn(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                previous = grads.get(parent.id)
                grads[parent.id] = parent_grad if previous is None else previous + parent_grad
        return leaves


def backward(loss: Tensor) -> Dict[Tensor, np.ndarray]:
    """גרדיאנטים של loss סקלרי לכל עלה שדורש גרדיאנט"""
    if loss.size != 1:
        raise DimensionError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    leaves = Tape.from_output(loss).run_backward(np.ones_like(loss.data))
    for leaf, grad in leaves.items():
        leaf.grad = grad
    return leaves


def named_gradients(params: Dict[str, Tensor], grad_map: Dict[Tensor, np.ndarray]) -> Dict[str, np.ndarray]:
    """מיפוי גרדיאנטים לשמות הפרמטרים; פרמטר שלא השתתף מקבל אפסים"""
    return {name: grad_map.get(t, np.zeros_like(t.data)) for name, t in params.items()}


# ---------------------------------------------------------------------------
# אופטימיזציה

@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def _check_finite(grads: Dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"Non-finite gradient for parameter '{name}'")


def adam_step(
    params: Dict[str, Tensor],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float = 3e-4,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """צעד Adam עם תיקון הטיה; מעדכן את הפרמטרים במקום"""
    _check_finite(grads)
    beta1, beta2 = betas
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name in sorted(params):
        if name not in grads:
            continue
        param, g = params[name], grads[name]
        if g.shape != param.shape:
            raise DimensionError(f"Gradient shape {g.shape} does not match parameter '{name}' {param.shape}")
        m = state.m.get(name, np.zeros_like(param.data))
        v = state.v.get(name, np.zeros_like(param.data))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        param.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return state


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(grads[name] ** 2)) for name in sorted(grads))))


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """הכפלת כל הגרדיאנטים ב-min(1, max_norm/||g||)"""
    _check_finite(grads)
    norm = global_norm(grads)
    factor = 1.0 if norm <= max_norm or norm == 0.0 else max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


# ---------------------------------------------------------------------------
# כלי בדיקה

def numerical_gradient(fn: Callable[[], float], tensor: Tensor, h: float = 1e-6) -> np.ndarray:
    """גרדיאנט בהפרשים מרכזיים, על ידי הזזת ערכי הטנזור במקום"""
    grad = np.zeros_like(tensor.data)
    flat, flat_grad = tensor.data.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = fn()
        flat[i] = original - h
        lower = fn()
        flat[i] = original
        flat_grad[i] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """שגיאה יחסית בנורמת מקסימום: max|a-n| / max(max|a|, max|n|)"""
    scale_ = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-12)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale_
