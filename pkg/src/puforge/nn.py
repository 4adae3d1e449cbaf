"""Small dense ReLU scorer with hand-written backprop, SGD with momentum and EMA mirroring."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, ParseError, ShapeError

MODEL_HEADER = "puforge-model v1"


@dataclass
class ModelParams:
    """Weights of a feed-forward scorer g: R^d -> R.

    ``weights[i]`` has shape ``(layer_dims[i], layer_dims[i + 1])`` so a batch
    is propagated as ``h @ W + b``.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        dims = [int(d) for d in self.layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ShapeError(f"invalid layer_dims {dims}")
        if dims[-1] != 1:
            raise ShapeError("final layer must output a single score")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("number of parameter arrays does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ShapeError(f"layer {i}: got W{w.shape} b{b.shape} for dims {dims[i]}->{dims[i + 1]}")
        self.layer_dims = dims

    @property
    def input_dim(self):
        return self.layer_dims[0]

    def params(self):
        """All parameter arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self):
        return ModelParams(list(self.layer_dims), [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases], self.activation)

    def is_finite(self):
        return all(np.all(np.isfinite(p)) for p in self.params())


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def __add__(self, other):
        return GradientSet([a + b for a, b in zip(self.weights, other.weights)],
                           [a + b for a, b in zip(self.biases, other.biases)])


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")


def init_model(layer_dims, seed=None, rng=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, seeded."""
    if rng is None:
        rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ModelParams(list(layer_dims), weights, biases)


def zero_model(layer_dims):
    return ModelParams(list(layer_dims),
                       [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])],
                       [np.zeros(b) for b in layer_dims[1:]])


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=float)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ShapeError(f"batch of shape {batch.shape} does not match input dim {model.input_dim}")
    return batch


def _activations(model, batch):
    acts = [batch]
    h = batch
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return acts


def forward(model, batch):
    """Scores g(x) for every row of ``batch``."""
    batch = _check_batch(model, batch)
    return _activations(model, batch)[-1][:, 0]


def forward_cached(model, batch):
    """Scores plus the layer activations, reusable by :func:`backward`."""
    batch = _check_batch(model, batch)
    acts = _activations(model, batch)
    return acts[-1][:, 0], acts


def backward(model, batch, upstream_grad, cache=None):
    """Gradient of sum_i upstream_grad[i] * g(x_i) with respect to every parameter."""
    batch = _check_batch(model, batch)
    upstream_grad = np.asarray(upstream_grad, dtype=float)
    if upstream_grad.shape != (batch.shape[0],):
        raise ShapeError(f"upstream grad shape {upstream_grad.shape} for {batch.shape[0]} samples")
    acts = _activations(model, batch) if cache is None else cache
    n_layers = len(model.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = upstream_grad[:, None]
    for i in range(n_layers - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return GradientSet(gw, gb)


def new_optimizer(model, learning_rate, momentum):
    return OptimizerState(learning_rate, momentum, [np.zeros_like(p) for p in model.params()])


def sgd_step(model, opt, grads):
    """v <- momentum * v + g ; theta <- theta - lr * v. Updates in place and returns both."""
    arrays = grads.arrays()
    params = model.params()
    if len(arrays) != len(params) or len(opt.velocity) != len(params):
        raise ShapeError("gradient/optimizer layout does not match model")
    for g, p in zip(arrays, params):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    for v, g, p in zip(opt.velocity, arrays, params):
        v *= opt.momentum
        v += g
        p -= opt.learning_rate * v
    return model, opt


def ema_update(teacher, student, beta):
    """Theta <- (1 - beta) * Theta + beta * theta, in place."""
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"EMA rate must lie in (0, 1], got {beta}")
    if teacher.layer_dims != student.layer_dims:
        raise ShapeError("teacher and student architectures differ")
    for t, s in zip(teacher.params(), student.params()):
        if beta == 1.0:
            t[...] = s
        else:
            t *= 1.0 - beta
            t += beta * s
    return teacher


def flatten(model):
    return np.concatenate([p.ravel() for p in model.params()])


def unflatten_into(model, vector):
    offset = 0
    for p in model.params():
        p[...] = vector[offset:offset + p.size].reshape(p.shape)
        offset += p.size
    return model


def grad_check(model, loss_fn, batch, eps=1e-5):
    """Largest |analytic - central difference| / max(1, |analytic|) over all parameters.

    ``loss_fn(scores)`` must return ``(loss, dloss_dscores)``.
    """
    if not eps > 0:
        raise ConfigError("finite-difference step must be positive")
    batch = _check_batch(model, batch)
    _, dscores = loss_fn(forward(model, batch))
    analytic = np.concatenate([a.ravel() for a in backward(model, batch, dscores).arrays()])
    probe = model.copy()
    theta = flatten(model)
    worst = 0.0
    for k in range(theta.size):
        bumped = theta.copy()
        bumped[k] = theta[k] + eps
        up = loss_fn(forward(unflatten_into(probe, bumped), batch))[0]
        bumped[k] = theta[k] - eps
        down = loss_fn(forward(unflatten_into(probe, bumped), batch))[0]
        numeric = (up - down) / (2 * eps)
        worst = max(worst, abs(analytic[k] - numeric) / max(1.0, abs(analytic[k])))
    return worst


def save_model(model, path):
    lines = [MODEL_HEADER, " ".join(str(d) for d in model.layer_dims)]
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(f"layer {i}")
        for row in w:
            lines.append(",".join(format(v, ".17g") for v in row))
        lines.append(",".join(format(v, ".17g") for v in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise ParseError(f"expected header {MODEL_HEADER!r}", 1)
    if len(lines) < 2:
        raise ParseError("missing layer_dims", 2)
    try:
        dims = [int(tok) for tok in lines[1].split()]
    except ValueError:
        raise ParseError("layer_dims must be integers", 2) from None
    pos = 2
    weights, biases = [], []

    def row(expected):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError("unexpected end of file", pos + 1)
        try:
            vals = [float(tok) for tok in lines[pos].split(",")]
        except ValueError:
            raise ParseError("non-numeric value", pos + 1) from None
        if len(vals) != expected:
            raise ParseError(f"expected {expected} values, got {len(vals)}", pos + 1)
        pos += 1
        return vals

    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if pos >= len(lines) or lines[pos].strip() != f"layer {i}":
            raise ParseError(f"expected 'layer {i}'", pos + 1)
        pos += 1
        weights.append(np.array([row(fan_out) for _ in range(fan_in)]).reshape(fan_in, fan_out))
        biases.append(np.array(row(fan_out)))
    return ModelParams(dims, weights, biases)
