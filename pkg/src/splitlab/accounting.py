"""Communication, compute, and wall-clock metering.

Bytes are always counted at 4 bytes per tensor element (the wire is 32-bit
even though compute is 64-bit). FLOPs are analytic per-layer counts, not
measured; backward is the standard 2x-forward approximation.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .errors import ValidationError
from .methods import check_method, family, topology
from .nn import DENSE, RELU, LayerSpec, SequentialModel

BYTES_PER_ELEMENT = 4

PHASE_TRAIN = "train"
PHASE_EVAL = "eval"
PHASE_MODEL_SYNC = "model_sync"
PHASES = (PHASE_TRAIN, PHASE_EVAL, PHASE_MODEL_SYNC)

TO_SERVER = "client_to_server"
TO_CLIENT = "server_to_client"


@dataclass(frozen=True)
class LedgerEntry:
    phase: str
    direction: str
    payload_kind: str
    n_bytes: int


class TrafficLedger:
    """Append-only byte meter, bucketed by phase / direction / payload kind."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def record(self, phase: str, direction: str, payload_kind: str, n_elements: int) -> int:
        if phase not in PHASES:
            raise ValidationError(f"unknown ledger phase {phase!r}")
        n_bytes = int(n_elements) * BYTES_PER_ELEMENT
        self.entries.append(LedgerEntry(phase, direction, payload_kind, n_bytes))
        return n_bytes

    def total_bytes(self) -> int:
        return sum(e.n_bytes for e in self.entries)

    def bytes_by_phase(self) -> dict[str, int]:
        out = {phase: 0 for phase in PHASES}
        for e in self.entries:
            out[e.phase] += e.n_bytes
        return out

    def bytes_by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for e in self.entries:
            out[e.payload_kind] = out.get(e.payload_kind, 0) + e.n_bytes
        return out

    def payload_count(self, phase: str | None = None) -> int:
        return sum(1 for e in self.entries if phase is None or e.phase == phase)

    def kinds(self) -> set[str]:
        return {e.payload_kind for e in self.entries}

    def snapshot(self) -> dict[str, int]:
        return self.bytes_by_phase()


class FlopCounter:
    """Floating-point-operation tallies split by party.

    Model-averaging work is kept in its own bucket so the headline
    server/client totals stay comparable with the centralized run.
    """

    def __init__(self):
        self.server_flops = 0
        self.per_client_flops: dict[int, int] = {}
        self.averaging_flops = 0

    def add_server(self, flops: int) -> None:
        self.server_flops += int(flops)

    def add_client(self, client_id: int, flops: int) -> None:
        self.per_client_flops[client_id] = self.per_client_flops.get(client_id, 0) + int(flops)

    def add_averaging(self, flops: int) -> None:
        self.averaging_flops += int(flops)

    def total_client_flops(self) -> int:
        return sum(self.per_client_flops.values())

    def avg_client_flops(self) -> float:
        if not self.per_client_flops:
            return 0.0
        return self.total_client_flops() / len(self.per_client_flops)

    def snapshot(self) -> dict[str, float]:
        return {
            "server": self.server_flops,
            "total_client": self.total_client_flops(),
            "avg_client": self.avg_client_flops(),
            "averaging": self.averaging_flops,
        }


@dataclass
class EpochReport:
    """One epoch's wall time plus metering snapshots (cumulative at epoch end)."""

    epoch: int
    wall_clock_seconds: float
    bytes_by_phase: dict[str, int] = field(default_factory=dict)
    flops: dict[str, float] = field(default_factory=dict)

    CSV_COLUMNS = (
        "epoch",
        "wall_clock_seconds",
        "bytes_train",
        "bytes_eval",
        "bytes_model_sync",
        "flops_server",
        "flops_avg_client",
        "flops_averaging",
    )

    def csv_row(self) -> list:
        return [
            self.epoch,
            self.wall_clock_seconds,
            self.bytes_by_phase.get(PHASE_TRAIN, 0),
            self.bytes_by_phase.get(PHASE_EVAL, 0),
            self.bytes_by_phase.get(PHASE_MODEL_SYNC, 0),
            self.flops.get("server", 0),
            self.flops.get("avg_client", 0.0),
            self.flops.get("averaging", 0),
        ]


class Timer:
    def __init__(self):
        self.seconds = 0.0


@contextmanager
def timer():
    """Monotonic wall-clock scope: `with timer() as t: ...; t.seconds`."""
    t = Timer()
    start = time.perf_counter()
    try:
        yield t
    finally:
        t.seconds = time.perf_counter() - start


def flops_forward(spec: LayerSpec, batch: int) -> int:
    """Forward cost of one layer on a batch.

    Dense: one multiply-add per weight (2 flops) plus the bias add.
    Activations: 1 flop/element for relu, 4 for sigmoid.
    """
    if batch < 1:
        raise ValidationError("batch must be >= 1")
    if spec.kind == DENSE:
        return 2 * spec.in_dim * spec.out_dim * batch + spec.out_dim * batch
    width = spec.in_dim
    if width is None:
        raise ValidationError("activation layer width not annotated")
    per_element = 1 if spec.kind == RELU else 4
    return per_element * batch * width


def flops_backward(spec: LayerSpec, batch: int) -> int:
    """Backward cost, counted as twice the forward cost."""
    return 2 * flops_forward(spec, batch)


def model_forward_flops(model: SequentialModel, batch: int) -> int:
    return sum(flops_forward(layer.spec, batch) for layer in model.layers)


def model_backward_flops(model: SequentialModel, batch: int) -> int:
    return sum(flops_backward(layer.spec, batch) for layer in model.layers)


def model_train_flops(model: SequentialModel, batch: int) -> int:
    """One training batch: forward plus backward (3x forward total)."""
    return model_forward_flops(model, batch) + model_backward_flops(model, batch)


def flops_average_models(param_count: int, n_models: int) -> int:
    """Weighted average of n parameter sets: n multiply-adds plus one divide
    per parameter -> (2n + 1) * param_count."""
    if n_models < 1:
        raise ValidationError("n_models must be >= 1")
    return (2 * n_models + 1) * param_count


def closed_form_epoch_bytes(
    method: str,
    *,
    train_sizes: list[int],
    val_sizes: list[int],
    param_count: int | None = None,
    client_segment_params: int | None = None,
    up_width: int | None = None,
    down_width: int | None = None,
    local_epochs: int = 1,
) -> int:
    """Analytic bytes moved in one epoch (one round for round-based methods).

    Must match the measured TrafficLedger integer-exactly; the protocol tests
    hold the two routes against each other.

    Per training sample a label-sharing split moves cut activations up,
    labels up, and cut gradients down; the U-shaped split moves activations
    up+down and gradients up+down and never moves labels. Validation moves
    activations only. Federated learning and the SplitFedv2 client sync move
    whole parameter segments down and up once per client.
    """
    check_method(method)
    fam = family(method)
    topo = topology(method)
    n = len(train_sizes)
    if len(val_sizes) != n:
        raise ValidationError("train_sizes and val_sizes must align")

    if fam == "centralized":
        return 0
    if fam == "fl":
        if param_count is None:
            raise ValidationError("fl needs param_count")
        return 2 * n * param_count * BYTES_PER_ELEMENT

    if up_width is None or (topo == "nls" and down_width is None):
        raise ValidationError(f"{method} needs cut widths")
    e = local_epochs if fam == "sflv3" else 1
    total = 0
    for n_i, v_i in zip(train_sizes, val_sizes):
        if topo == "ls":
            train_elems = e * n_i * (2 * up_width + 1)
            eval_elems = v_i * up_width
        else:
            train_elems = e * n_i * 2 * (up_width + down_width)
            eval_elems = v_i * (up_width + down_width)
        total += (train_elems + eval_elems) * BYTES_PER_ELEMENT
    if fam == "sflv2":
        if client_segment_params is None:
            raise ValidationError("sflv2 needs client_segment_params")
        total += 2 * n * client_segment_params * BYTES_PER_ELEMENT
    return total
