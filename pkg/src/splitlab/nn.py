"""Minimal deterministic dense-network engine.

Float64 tensors, sequential dense/relu/sigmoid stacks, manual forward and
backward passes, and binary cross-entropy. Compute is always 64-bit; the
4-byte wire width used for communication accounting lives in `accounting`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ProtocolError, ValidationError

Tensor = np.ndarray

DENSE = "dense"
RELU = "relu"
SIGMOID = "sigmoid"
LAYER_KINDS = (DENSE, RELU, SIGMOID)

PREDICTION_CLAMP = 1e-12


def as_tensor(values) -> Tensor:
    """Coerce to a float64 array (the engine's universal value carrier)."""
    return np.asarray(values, dtype=np.float64)


def check_finite(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t)):
        raise ValidationError(f"{what} contains non-finite values")
    return t


@dataclass
class LayerSpec:
    """Shape description of one layer.

    Dense layers carry in_dim/out_dim. Activation layers are parameter-free;
    their dims are filled in with the running width when a model is built so
    per-layer cost formulas can read them.
    """

    kind: str
    in_dim: int | None = None
    out_dim: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.kind == DENSE:
            if not self.in_dim or not self.out_dim or self.in_dim < 1 or self.out_dim < 1:
                raise ValidationError("dense layer needs positive in_dim and out_dim")


class Layer:
    """A LayerSpec with attached parameters and a mutation version counter.

    `version` increments on every parameter update; forward caches snapshot it
    so backward against since-mutated parameters raises a ProtocolError.
    """

    def __init__(self, spec: LayerSpec, weights: Tensor | None = None, bias: Tensor | None = None):
        self.spec = spec
        self.weights = weights
        self.bias = bias
        self.version = 0
        if spec.kind == DENSE:
            if weights is None or bias is None:
                raise ValidationError("dense layer requires weights and bias")
            if weights.shape != (spec.in_dim, spec.out_dim) or bias.shape != (spec.out_dim,):
                raise DimensionError(
                    f"dense parameters {weights.shape}/{bias.shape} do not match "
                    f"spec ({spec.in_dim},{spec.out_dim})"
                )
        elif weights is not None or bias is not None:
            raise ValidationError(f"{spec.kind} layer carries no parameters")

    @property
    def kind(self) -> str:
        return self.spec.kind

    def params(self) -> dict[str, Tensor]:
        if self.kind == DENSE:
            return {"weights": self.weights, "bias": self.bias}
        return {}

    def param_count(self) -> int:
        return sum(p.size for p in self.params().values())

    def set_params(self, values: dict[str, Tensor]) -> None:
        """Overwrite parameters in place (bumps the version)."""
        for name, value in values.items():
            current = getattr(self, name)
            if current.shape != value.shape:
                raise DimensionError(f"{name} shape {value.shape} != {current.shape}")
            current[...] = value
        if values:
            self.version += 1

    def clone(self) -> "Layer":
        if self.kind == DENSE:
            return Layer(self.spec, self.weights.copy(), self.bias.copy())
        return Layer(self.spec)


class SequentialModel:
    """Ordered layer stack with compatible widths."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)
        self._annotate_widths()

    def _annotate_widths(self) -> None:
        width = None
        for i, layer in enumerate(self.layers):
            if layer.kind == DENSE:
                if width is not None and layer.spec.in_dim != width:
                    raise DimensionError(
                        f"in_dim {layer.spec.in_dim} incompatible with running width {width}",
                        layer_index=i,
                    )
                width = layer.spec.out_dim
            else:
                if layer.spec.in_dim is not None:
                    if width is not None and layer.spec.in_dim != width:
                        raise DimensionError(
                            f"activation width {layer.spec.in_dim} != running width {width}",
                            layer_index=i,
                        )
                    width = layer.spec.in_dim
                elif width is None:
                    raise DimensionError(
                        "activation layer with unresolvable width", layer_index=i
                    )
                layer.spec.in_dim = layer.spec.out_dim = width

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    @property
    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def clone(self) -> "SequentialModel":
        return SequentialModel([layer.clone() for layer in self.layers])

    def param_vector(self) -> Tensor:
        """All parameters flattened in layer order (empty for param-free stacks)."""
        chunks = [p.ravel() for layer in self.layers for p in layer.params().values()]
        if not chunks:
            return np.empty(0, dtype=np.float64)
        return np.concatenate(chunks)

    def load_param_vector(self, vector: Tensor) -> None:
        offset = 0
        for layer in self.layers:
            updates = {}
            for name, p in layer.params().items():
                updates[name] = vector[offset : offset + p.size].reshape(p.shape)
                offset += p.size
            if updates:
                layer.set_params(updates)
        if offset != vector.size:
            raise DimensionError(f"vector of {vector.size} values, model holds {offset}")

    def checksum(self) -> str:
        h = hashlib.sha256()
        for layer in self.layers:
            for p in layer.params().values():
                h.update(p.tobytes())
        return h.hexdigest()

    def architecture_fingerprint(self) -> str:
        h = hashlib.sha256()
        for spec in self.specs():
            h.update(f"{spec.kind}:{spec.in_dim}:{spec.out_dim};".encode())
        return h.hexdigest()[:16]


def glorot_uniform_init(in_dim: int, out_dim: int, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    bias = rng.uniform(-bound, bound, size=(out_dim,))
    return weights, bias


def dense(in_dim: int, out_dim: int, rng: np.random.Generator) -> Layer:
    weights, bias = glorot_uniform_init(in_dim, out_dim, rng)
    return Layer(LayerSpec(DENSE, in_dim, out_dim), weights, bias)


def mlp(feature_dim: int, hidden_dims: list[int], seed) -> SequentialModel:
    """Binary-classifier MLP: dense/relu blocks, then dense(.., 1) + sigmoid."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    width = feature_dim
    for h in hidden_dims:
        layers.append(dense(width, h, rng))
        layers.append(Layer(LayerSpec(RELU)))
        width = h
    layers.append(dense(width, 1, rng))
    layers.append(Layer(LayerSpec(SIGMOID)))
    return SequentialModel(layers)


@dataclass
class ForwardCache:
    """Per-layer saved values plus the parameter versions they were built on."""

    saved: list[Tensor]
    versions: tuple[int, ...]
    batch: int


def forward(model: SequentialModel, x: Tensor) -> tuple[Tensor, ForwardCache]:
    """Run the stack; returns output and the cache needed for backward.

    Pure in the model parameters. Rejects empty batches and width mismatches.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"expected [batch, features] input, got shape {x.shape}")
    if x.shape[0] < 1:
        raise ValidationError("empty batch")
    saved: list[Tensor] = []
    out = x
    for i, layer in enumerate(model.layers):
        if out.shape[1] != layer.spec.in_dim:
            raise DimensionError(
                f"input width {out.shape[1]} != expected {layer.spec.in_dim}", layer_index=i
            )
        if layer.kind == DENSE:
            saved.append(out)
            out = out @ layer.weights + layer.bias
        elif layer.kind == RELU:
            saved.append(out)
            out = np.maximum(out, 0.0)
        else:
            out = 1.0 / (1.0 + np.exp(-out))
            saved.append(out)
    check_finite(out, "forward output")
    versions = tuple(layer.version for layer in model.layers)
    return out, ForwardCache(saved, versions, x.shape[0])


def backward(
    model: SequentialModel, cache: ForwardCache, output_grad: Tensor
) -> tuple[list[dict[str, Tensor]], Tensor]:
    """Backpropagate `output_grad` through the stack.

    Returns per-layer parameter gradients (empty dict for activation layers)
    and the gradient with respect to the stack input.
    """
    current_versions = tuple(layer.version for layer in model.layers)
    if current_versions != cache.versions:
        raise ProtocolError("stale forward cache: parameters changed since forward")
    g = as_tensor(output_grad)
    if g.shape != (cache.batch, model.output_dim):
        raise DimensionError(
            f"output grad shape {g.shape} != ({cache.batch}, {model.output_dim})"
        )
    param_grads: list[dict[str, Tensor]] = [{} for _ in model.layers]
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if layer.kind == DENSE:
            x = cache.saved[i]
            param_grads[i] = {"weights": x.T @ g, "bias": g.sum(axis=0)}
            g = g @ layer.weights.T
        elif layer.kind == RELU:
            g = g * (cache.saved[i] > 0.0)
        else:
            y = cache.saved[i]
            g = g * y * (1.0 - y)
    check_finite(g, "input gradient")
    return param_grads, g


def bce_loss(predictions: Tensor, labels: Tensor) -> tuple[float, Tensor]:
    """Mean binary cross-entropy and its gradient w.r.t. the predictions.

    Predictions are clamped to [1e-12, 1 - 1e-12] before the logs; the
    gradient is taken through the clamped values.
    """
    p = as_tensor(predictions)
    y = as_tensor(labels)
    if p.shape != y.shape:
        raise DimensionError(f"predictions {p.shape} vs labels {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("labels must be exactly 0 or 1")
    p = np.clip(p, PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
    grad = (-y / p + (1.0 - y) / (1.0 - p)) / p.size
    return loss, grad
