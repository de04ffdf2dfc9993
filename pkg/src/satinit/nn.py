"""Small fully-connected ReLU classifier with a 2-wide linear output.

Weights for layer ``l`` have shape ``(width[l], width[l+1])`` so a layer
computes ``W.T @ x + b``.  Parameters live either in float64 numpy arrays
or in object arrays of :class:`fractions.Fraction` (the exact domain used
to check solver models).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

FLOAT = "float64"
EXACT = "exact"

PROB_CLAMP = 1e-7


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.hidden_widths:
            raise ValueError("at least one hidden layer is required")
        if any(h < 1 for h in self.hidden_widths):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_widths}")
        if self.output_dim != 2:
            raise ValueError("output_dim is fixed to 2")

    @classmethod
    def parse(cls, spec: str) -> "Architecture":
        """Parse ``n-h1-...-2`` (e.g. ``784-10-2``)."""
        try:
            widths = [int(p) for p in spec.strip().split("-")]
        except ValueError:
            raise ValueError(f"bad architecture spec {spec!r}") from None
        if len(widths) < 3:
            raise ValueError(f"architecture {spec!r} needs input, hidden and output widths")
        if widths[-1] != 2:
            raise ValueError(f"architecture {spec!r} must end in 2")
        return cls(widths[0], tuple(widths[1:-1]))

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return [(w[l], w[l + 1]) for l in range(self.n_layers)]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in self.layer_shapes())

    def spec(self) -> str:
        return "-".join(str(w) for w in self.widths)

    def __str__(self):
        return self.spec()


@dataclass
class ParamSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    domain: str = FLOAT
    arch: Architecture = field(init=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be nonempty lists of equal length")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {l}: weight {w.shape} does not match bias {b.shape}")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {l}: expects {w.shape[0]} inputs but layer {l - 1} "
                    f"produces {self.weights[l - 1].shape[1]}")
        widths = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]
        self.arch = Architecture(widths[0], tuple(widths[1:-1]), widths[-1])
        if self.domain not in (FLOAT, EXACT):
            raise ValueError(f"unknown number domain {self.domain!r}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "ParamSet":
        return ParamSet([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.domain)

    def to_float(self) -> "ParamSet":
        if self.domain == FLOAT:
            return self.copy()
        return ParamSet([w.astype(np.float64) for w in self.weights],
                        [b.astype(np.float64) for b in self.biases], FLOAT)

    def to_exact(self) -> "ParamSet":
        def conv(a):
            out = np.empty(a.shape, dtype=object)
            for idx, v in np.ndenumerate(a):
                out[idx] = Fraction(v)
            return out
        return ParamSet([conv(w) for w in self.weights], [conv(b) for b in self.biases], EXACT)

    def allclose(self, other: "ParamSet", atol=0.0) -> bool:
        return all(a.shape == b.shape and np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=0, atol=atol)
                   for a, b in zip(self.arrays(), other.arrays()))


def _zeros(shape, domain):
    if domain == FLOAT:
        return np.zeros(shape)
    out = np.empty(shape, dtype=object)
    out.fill(Fraction(0))
    return out


def zero_init(arch: Architecture, domain: str = FLOAT) -> ParamSet:
    shapes = arch.layer_shapes()
    return ParamSet([_zeros(s, domain) for s in shapes], [_zeros(s[1], domain) for s in shapes], domain)


def glorot_init(arch: Architecture, seed: int) -> ParamSet:
    """Glorot-uniform weights, zero biases; a pure function of ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in arch.layer_shapes():
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ParamSet(weights, biases, FLOAT)


def relu(x):
    if isinstance(x, np.ndarray):
        return np.maximum(x, 0.0)
    return x if x > 0 else 0 * x


def _check_input(params: ParamSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.weights[0].shape[0]:
        raise ShapeError(f"layer 0: input has {x.shape[-1]} components, expected {params.weights[0].shape[0]}")
    return x


def forward(params: ParamSet, x) -> np.ndarray:
    """Logits for one input vector (or a batch as rows)."""
    if params.domain != FLOAT:
        raise ValueError("forward needs float64 parameters; use solver.eval_exact for exact ones")
    h = _check_input(params, x)
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if l < last:
            h = np.maximum(h, 0.0)
    return h


def activation_pattern(params: ParamSet, x) -> tuple[tuple[bool, ...], ...]:
    h = _check_input(params, x)
    pattern = []
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        z = h @ w + b
        pattern.append(tuple(bool(v) for v in z > 0))
        h = np.maximum(z, 0.0)
    return tuple(pattern)


def predict(logits) -> int:
    # class 0 needs a strict win; ties go to class 1
    return 0 if logits[0] > logits[1] else 1


def predict_batch(logits: np.ndarray) -> np.ndarray:
    return np.where(logits[:, 0] > logits[:, 1], 0, 1)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def bce_loss(p, y):
    """Binary cross-entropy where ``p`` is the predicted probability of class 1."""
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


def loss(params: ParamSet, xs, ys) -> float:
    """Mean softmax cross-entropy over a batch."""
    logits = forward(params, np.atleast_2d(xs))
    p1 = softmax(logits)[:, 1]
    return float(np.mean(bce_loss(p1, np.asarray(ys, dtype=np.float64))))


def backward(params: ParamSet, xs, ys) -> ParamSet:
    """Mean gradient of the softmax cross-entropy loss over a batch.

    ``xs`` is an (B, n) array and ``ys`` holds class indices.  The ReLU
    subgradient at 0 is 0.  The probability clamp used by :func:`bce_loss`
    is not differentiated through.
    """
    xs = np.atleast_2d(_check_input(params, xs))
    ys = np.asarray(ys, dtype=np.int64).reshape(-1)
    if xs.shape[0] == 0 or xs.shape[0] != ys.shape[0]:
        raise ShapeError(f"batch has {xs.shape[0]} inputs and {ys.shape[0]} labels")
    batch = xs.shape[0]

    acts = [xs]
    pre = []
    h = xs
    last = params.n_layers - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if l < last else z
        acts.append(h)

    delta = softmax(acts[-1])
    delta[np.arange(batch), ys] -= 1.0
    delta /= batch

    gw = [None] * params.n_layers
    gb = [None] * params.n_layers
    for l in range(last, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ params.weights[l].T) * (pre[l - 1] > 0)
    return ParamSet(gw, gb, FLOAT)


def sgd_step(params: ParamSet, grads: ParamSet, lr: float) -> ParamSet:
    for a, g in zip(params.arrays(), grads.arrays()):
        if a.shape != g.shape:
            raise ShapeError(f"parameter shape {a.shape} does not match gradient {g.shape}")
    return ParamSet([w - lr * g for w, g in zip(params.weights, grads.weights)],
                    [b - lr * g for b, g in zip(params.biases, grads.biases)], params.domain)


# -- serialization -----------------------------------------------------------

PARAMS_MAGIC = "satinit-params"
PARAMS_VERSION = "v1"


def _fmt(v) -> str:
    return format(float(v), ".17g")


def dump_params(params: ParamSet) -> str:
    lines = [f"{PARAMS_MAGIC} {PARAMS_VERSION} {params.arch.spec()}"]
    for l, w in enumerate(params.weights):
        for (i, j), v in np.ndenumerate(w):
            lines.append(f"w {l} {i} {j} {_fmt(v)}")
    for l, b in enumerate(params.biases):
        for i, v in enumerate(b):
            lines.append(f"b {l} {i} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def load_params(text: str) -> ParamSet:
    lines = text.splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 3 or head[0] != PARAMS_MAGIC:
        raise ValueError("not a satinit params file")
    if head[1] != PARAMS_VERSION:
        raise ValueError(f"unsupported params version {head[1]!r}")
    params = zero_init(Architecture.parse(head[2]))
    seen = 0
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "w" and len(parts) == 5:
                l, i, j = map(int, parts[1:4])
                params.weights[l][i, j] = float(parts[4])
            elif parts[0] == "b" and len(parts) == 4:
                l, i = map(int, parts[1:3])
                params.biases[l][i] = float(parts[3])
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise ValueError(f"line {lineno}: bad params record {line!r}") from None
        seen += 1
    if seen != params.arch.n_params:
        raise ValueError(f"params file has {seen} records, architecture needs {params.arch.n_params}")
    return params


def from_lists(weights: Iterable[Sequence[Sequence]], biases: Iterable[Sequence], domain: str = FLOAT) -> ParamSet:
    """Build a ParamSet from nested lists; handy for hand-written examples."""
    if domain == FLOAT:
        return ParamSet([np.array(w, dtype=np.float64) for w in weights],
                        [np.array(b, dtype=np.float64) for b in biases], FLOAT)

    def conv(rows):
        a = np.array(rows, dtype=object)
        for idx, v in np.ndenumerate(a):
            a[idx] = Fraction(v)
        return a
    return ParamSet([conv(w) for w in weights], [conv(b) for b in biases], EXACT)
