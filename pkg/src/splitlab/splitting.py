"""Model splitting and the per-batch cut-layer message exchange.

Two topologies: label-sharing ("ls") keeps the first `cut_index` layers on
the client and everything else (including the loss) on the server, so labels
travel with the activations. The U-shaped topology ("nls") also keeps the
last `tail_len` layers on the client, so the loss is computed client-side and
labels never cross the cut.
"""

from __future__ import annotations

from dataclasses import dataclass

from .accounting import (
    BYTES_PER_ELEMENT,
    PHASE_EVAL,
    PHASE_TRAIN,
    TO_CLIENT,
    TO_SERVER,
    TrafficLedger,
)
from .errors import ProtocolError, ValidationError
from .nn import SequentialModel, Tensor, backward, bce_loss, forward
from .optim import Optimizer

LS = "ls"
NLS = "nls"

ACTIVATION = "activation"
GRADIENT = "gradient"
LABELS = "labels"


@dataclass
class SplitSpec:
    topology: str
    cut_index: int
    tail_len: int = 0

    def __post_init__(self):
        if self.topology not in (LS, NLS):
            raise ValidationError(f"unknown topology {self.topology!r}")
        if self.topology == LS and self.tail_len:
            raise ValidationError("tail_len only applies to the nls topology")
        if self.topology == NLS and self.tail_len < 1:
            raise ValidationError("nls topology needs tail_len >= 1")

    def validate_for(self, num_layers: int) -> None:
        if not 1 <= self.cut_index <= num_layers - 1:
            raise ValidationError(
                f"cut_index {self.cut_index} out of range [1, {num_layers - 1}]"
            )
        if self.topology == NLS and self.cut_index + self.tail_len >= num_layers:
            raise ValidationError(
                f"cut_index + tail_len must be < {num_layers}, "
                f"got {self.cut_index} + {self.tail_len}"
            )


@dataclass
class CutMessage:
    direction: str
    payload_kind: str
    tensor: Tensor
    byte_size: int


@dataclass
class SplitModel:
    """Client/server segments sharing the original model's parameter arrays."""

    spec: SplitSpec
    client_head: SequentialModel
    server_body: SequentialModel
    client_tail: SequentialModel | None

    @property
    def up_width(self) -> int:
        """Width of the activation sent client -> server."""
        return self.client_head.output_dim

    @property
    def down_width(self) -> int | None:
        """Width of the server output sent back down (nls only)."""
        return self.server_body.output_dim if self.spec.topology == NLS else None

    @property
    def client_param_count(self) -> int:
        tail = self.client_tail.param_count if self.client_tail is not None else 0
        return self.client_head.param_count + tail

    def all_layers(self):
        layers = list(self.client_head.layers) + list(self.server_body.layers)
        if self.client_tail is not None:
            layers += list(self.client_tail.layers)
        return layers


def split_model(model: SequentialModel, spec: SplitSpec) -> SplitModel:
    """Partition the layer list; segments alias the original Layer objects."""
    spec.validate_for(model.num_layers)
    cut = spec.cut_index
    if spec.topology == LS:
        head = SequentialModel(model.layers[:cut])
        body = SequentialModel(model.layers[cut:])
        tail = None
    else:
        tail_start = model.num_layers - spec.tail_len
        head = SequentialModel(model.layers[:cut])
        body = SequentialModel(model.layers[cut:tail_start])
        tail = SequentialModel(model.layers[tail_start:])
    return SplitModel(spec, head, body, tail)


@dataclass
class SegmentOptimizers:
    """Per-client head (and tail) optimizers plus the shared body optimizer."""

    head: Optimizer
    body: Optimizer
    tail: Optimizer | None = None


def _send(
    split: SplitModel,
    ledger: TrafficLedger,
    phase: str,
    direction: str,
    kind: str,
    tensor: Tensor,
) -> CutMessage:
    if split.spec.topology == NLS and kind == LABELS:
        raise ProtocolError("labels must never cross the cut in the nls topology")
    ledger.record(phase, direction, kind, tensor.size)
    return CutMessage(direction, kind, tensor, tensor.size * BYTES_PER_ELEMENT)


def ls_train_batch(
    split: SplitModel,
    batch: Tensor,
    labels: Tensor,
    opts: SegmentOptimizers,
    ledger: TrafficLedger,
) -> float:
    """One label-sharing training batch: 3 payloads (activation up, labels up,
    gradient down), one optimizer step per segment."""
    if split.spec.topology != LS:
        raise ValidationError("ls_train_batch requires the ls topology")
    before = ledger.payload_count()

    activation, head_cache = forward(split.client_head, batch)
    up = _send(split, ledger, PHASE_TRAIN, TO_SERVER, ACTIVATION, activation)
    labels_msg = _send(split, ledger, PHASE_TRAIN, TO_SERVER, LABELS, labels)

    predictions, body_cache = forward(split.server_body, up.tensor)
    loss, dpred = bce_loss(predictions, labels_msg.tensor)
    body_grads, cut_grad = backward(split.server_body, body_cache, dpred)
    opts.body.step(body_grads)
    down = _send(split, ledger, PHASE_TRAIN, TO_CLIENT, GRADIENT, cut_grad)

    head_grads, _ = backward(split.client_head, head_cache, down.tensor)
    opts.head.step(head_grads)

    if ledger.payload_count() - before != 3:
        raise ProtocolError("ls training batch must emit exactly 3 payloads")
    return loss


def nls_train_batch(
    split: SplitModel,
    batch: Tensor,
    labels: Tensor,
    opts: SegmentOptimizers,
    ledger: TrafficLedger,
) -> float:
    """One U-shaped training batch: 4 payloads (activation up/down, gradient
    up/down); loss stays on the client and labels are never transmitted."""
    if split.spec.topology != NLS:
        raise ValidationError("nls_train_batch requires the nls topology")
    if opts.tail is None:
        raise ValidationError("nls training needs a tail optimizer")
    before = ledger.payload_count()

    activation, head_cache = forward(split.client_head, batch)
    up = _send(split, ledger, PHASE_TRAIN, TO_SERVER, ACTIVATION, activation)

    body_out, body_cache = forward(split.server_body, up.tensor)
    down = _send(split, ledger, PHASE_TRAIN, TO_CLIENT, ACTIVATION, body_out)

    predictions, tail_cache = forward(split.client_tail, down.tensor)
    loss, dpred = bce_loss(predictions, labels)
    tail_grads, body_out_grad = backward(split.client_tail, tail_cache, dpred)
    opts.tail.step(tail_grads)
    grad_up = _send(split, ledger, PHASE_TRAIN, TO_SERVER, GRADIENT, body_out_grad)

    body_grads, cut_grad = backward(split.server_body, body_cache, grad_up.tensor)
    opts.body.step(body_grads)
    grad_down = _send(split, ledger, PHASE_TRAIN, TO_CLIENT, GRADIENT, cut_grad)

    head_grads, _ = backward(split.client_head, head_cache, grad_down.tensor)
    opts.head.step(head_grads)

    if ledger.payload_count() - before != 4:
        raise ProtocolError("nls training batch must emit exactly 4 payloads")
    return loss


def eval_forward(split: SplitModel, batch: Tensor, ledger: TrafficLedger) -> Tensor:
    """Forward-only pass for validation/test: activation payloads only."""
    activation, _ = forward(split.client_head, batch)
    up = _send(split, ledger, PHASE_EVAL, TO_SERVER, ACTIVATION, activation)
    body_out, _ = forward(split.server_body, up.tensor)
    if split.spec.topology == LS:
        return body_out
    down = _send(split, ledger, PHASE_EVAL, TO_CLIENT, ACTIVATION, body_out)
    predictions, _ = forward(split.client_tail, down.tensor)
    return predictions
