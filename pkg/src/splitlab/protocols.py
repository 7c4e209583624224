"""Training procedures over simulated clients.

Six families share one engine: a centralized baseline, federated averaging,
split learning under whole-dataset (ac) and round-robin mini-batch (am)
schedules, SplitFedv2 (split learning plus end-of-epoch client-segment
averaging), and SplitFedv3 (per-client segments, one shared server segment
updated once per round with an aggregated gradient).

All loops are deterministic given (seed, config, data): clients are visited
in ascending id order, and every cross-client reduction is performed in
ascending id order regardless of processing order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import datakit
from .accounting import (
    PHASE_EVAL,
    PHASE_MODEL_SYNC,
    PHASE_TRAIN,
    TO_CLIENT,
    TO_SERVER,
    EpochReport,
    FlopCounter,
    TrafficLedger,
    flops_average_models,
    model_forward_flops,
    model_train_flops,
    timer,
)
from .config import MetricsReport
from .errors import ProtocolError, ValidationError
from .metrics import ScoredPredictions, summarize
from .nn import SequentialModel, Tensor, backward, bce_loss, forward
from .optim import Optimizer, OptimizerConfig
from .splitting import (
    ACTIVATION,
    GRADIENT,
    LABELS,
    LS,
    SegmentOptimizers,
    SplitModel,
    SplitSpec,
    eval_forward,
    ls_train_batch,
    nls_train_batch,
    split_model,
)


@dataclass
class ClientState:
    """One virtual client: its data partition plus whatever model parts it owns."""

    client_id: int
    data: datakit.ClientSplit
    head: SequentialModel | None = None
    tail: SequentialModel | None = None
    split: SplitModel | None = None
    model: SequentialModel | None = None
    head_opt: Optimizer | None = None
    tail_opt: Optimizer | None = None
    pending: "_RoundWorkspace | None" = None

    @property
    def sample_count(self) -> int:
        return len(self.data.train)


@dataclass
class ServerState:
    body: SequentialModel
    opt: Optimizer
    round_index: int = 0


@dataclass
class RoundPlan:
    """Which clients take part in a round, in processing order, and the
    number of local passes each makes over its data."""

    participating: tuple[int, ...]
    local_epochs: int = 1

    def __post_init__(self):
        if len(set(self.participating)) != len(self.participating):
            raise ValidationError("round plan repeats a client")
        if self.local_epochs < 1:
            raise ValidationError("local_epochs must be >= 1")

    @property
    def n_t(self) -> int:
        return len(self.participating)


@dataclass
class Checkpoint:
    """Best-validation snapshot of every parameter segment."""

    epoch: int
    validation_loss: float
    params: dict[str, np.ndarray]
    architecture: str

    def save(self, path) -> None:
        manifest = json.dumps(
            {
                "epoch": self.epoch,
                "validation_loss": self.validation_loss,
                "architecture": self.architecture,
                "segments": sorted(self.params),
            }
        )
        np.savez(path, __manifest__=np.array(manifest), **self.params)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path) as data:
            manifest = json.loads(str(data["__manifest__"]))
            params = {k: data[k] for k in data.files if k != "__manifest__"}
        if sorted(params) != manifest["segments"]:
            raise ValidationError(f"{path}: segment list does not match manifest")
        return cls(manifest["epoch"], manifest["validation_loss"], params, manifest["architecture"])


@dataclass
class ProtocolOutcome:
    """Everything a training run leaves behind."""

    method: str
    report: MetricsReport
    checkpoint: Checkpoint | None
    epoch_reports: list[EpochReport]
    clients: list[ClientState] = field(default_factory=list)
    server: ServerState | None = None
    model: SequentialModel | None = None
    pooled_data: datakit.ClientSplit | None = None
    named_segments: dict[str, SequentialModel] = field(default_factory=dict)

    def restore_best(self) -> None:
        if self.checkpoint is None:
            return
        for name, model in self.named_segments.items():
            model.load_param_vector(self.checkpoint.params[name])


# ---------------------------------------------------------------------------
# setup


def make_split_clients(
    base_model: SequentialModel,
    spec: SplitSpec,
    partitions: dict[int, datakit.ClientSplit],
    opt_cfg: OptimizerConfig,
) -> tuple[list[ClientState], ServerState]:
    """Give every client its own copy of the head (and tail) segments; the
    server body is one shared object aliasing the base model's layers."""
    base_split = split_model(base_model, spec)
    server = ServerState(base_split.server_body, Optimizer(base_split.server_body, opt_cfg))
    clients = []
    for cid in sorted(partitions):
        head = base_split.client_head.clone()
        tail = base_split.client_tail.clone() if base_split.client_tail is not None else None
        clients.append(
            ClientState(
                client_id=cid,
                data=partitions[cid],
                head=head,
                tail=tail,
                split=SplitModel(spec, head, server.body, tail),
                head_opt=Optimizer(head, opt_cfg),
                tail_opt=Optimizer(tail, opt_cfg) if tail is not None else None,
            )
        )
    return clients, server


def make_fl_clients(
    base_model: SequentialModel, partitions: dict[int, datakit.ClientSplit]
) -> list[ClientState]:
    return [
        ClientState(client_id=cid, data=partitions[cid], model=base_model.clone())
        for cid in sorted(partitions)
    ]


def _named_split_segments(clients, server) -> dict[str, SequentialModel]:
    named = {"server.body": server.body}
    for c in clients:
        named[f"client{c.client_id}.head"] = c.head
        if c.tail is not None:
            named[f"client{c.client_id}.tail"] = c.tail
    return named


# ---------------------------------------------------------------------------
# shared pieces


def _full_train_batch(model, opt, x, y, add_flops) -> float:
    preds, cache = forward(model, x)
    loss, dpred = bce_loss(preds, y)
    grads, _ = backward(model, cache, dpred)
    opt.step(grads)
    add_flops(model_train_flops(model, x.shape[0]))
    return loss


def _full_eval_loss(model, dataset, add_flops) -> float:
    preds, _ = forward(model, dataset.features)
    add_flops(model_forward_flops(model, len(dataset)))
    return bce_loss(preds, dataset.labels)[0]


def _split_val_loss(clients, ledger, flops) -> float:
    """Sample-weighted pooled validation loss, routed through each client's
    own segments (eval traffic is metered)."""
    total, count = 0.0, 0
    for c in clients:
        v = c.data.val
        preds = eval_forward(c.split, v.features, ledger)
        client_flops = model_forward_flops(c.head, len(v))
        if c.tail is not None:
            client_flops += model_forward_flops(c.tail, len(v))
        flops.add_client(c.client_id, client_flops)
        flops.add_server(model_forward_flops(c.split.server_body, len(v)))
        total += bce_loss(preds, v.labels)[0] * len(v)
        count += len(v)
    return total / count


def _maybe_checkpoint(current, epoch, val_loss, named_segments) -> Checkpoint:
    if current is not None and val_loss >= current.validation_loss:
        return current
    params = {name: model.param_vector().copy() for name, model in named_segments.items()}
    arch = "|".join(
        f"{name}:{model.architecture_fingerprint()}" for name, model in sorted(named_segments.items())
    )
    return Checkpoint(epoch, val_loss, params, arch)


def _build_report(method, seed, epochs, ledger, flops, epoch_reports, checkpoint) -> MetricsReport:
    by_phase = ledger.bytes_by_phase()
    wall = (
        sum(r.wall_clock_seconds for r in epoch_reports) / len(epoch_reports)
        if epoch_reports
        else 0.0
    )
    return MetricsReport(
        method=method,
        seed=seed,
        epochs=epochs,
        wall_s_per_epoch=wall,
        bytes_train=by_phase[PHASE_TRAIN],
        bytes_eval=by_phase[PHASE_EVAL],
        bytes_model_sync=by_phase[PHASE_MODEL_SYNC],
        flops_server=flops.server_flops,
        flops_avg_client=flops.avg_client_flops(),
        flops_averaging=flops.averaging_flops,
        best_epoch=checkpoint.epoch if checkpoint is not None else -1,
    )


# ---------------------------------------------------------------------------
# centralized baseline


def train_centralized(
    model: SequentialModel,
    data: datakit.ClientSplit,
    *,
    epochs: int,
    batch_size: int,
    opt_cfg: OptimizerConfig,
    seed: int,
    ledger: TrafficLedger | None = None,
    flops: FlopCounter | None = None,
    method: str = "centralized",
) -> ProtocolOutcome:
    """Plain mini-batch training; all compute is booked to the server."""
    if data is None or len(data.train) < 1:
        raise ValidationError("centralized training needs a non-empty dataset")
    if epochs < 0:
        raise ValidationError("epochs must be >= 0")
    ledger = ledger if ledger is not None else TrafficLedger()
    flops = flops if flops is not None else FlopCounter()
    opt = Optimizer(model, opt_cfg)
    named = {"model": model}
    checkpoint = None
    epoch_reports = []
    for epoch in range(epochs):
        with timer() as t:
            for x, y in datakit.batches(data.train, batch_size, seed, epoch):
                _full_train_batch(model, opt, x, y, flops.add_server)
            val_loss = _full_eval_loss(model, data.val, flops.add_server)
            checkpoint = _maybe_checkpoint(checkpoint, epoch, val_loss, named)
        epoch_reports.append(EpochReport(epoch, t.seconds, ledger.snapshot(), flops.snapshot()))
    report = _build_report(method, seed, epochs, ledger, flops, epoch_reports, checkpoint)
    return ProtocolOutcome(
        method=method,
        report=report,
        checkpoint=checkpoint,
        epoch_reports=epoch_reports,
        model=model,
        pooled_data=data,
        named_segments=named,
    )


# ---------------------------------------------------------------------------
# federated averaging


def federated_average(
    models: list[SequentialModel], weights: list[int | float]
) -> SequentialModel:
    """Sample-count-weighted parameter mean.

    Evaluated in delta form around the first model, p0 + sum_i a_i (p_i - p0),
    so averaging identical models reproduces them bit-exactly.
    """
    if not models or len(models) != len(weights):
        raise ValidationError("need one weight per model")
    if any(w <= 0 for w in weights):
        raise ValidationError("weights must be positive")
    specs0 = [(s.kind, s.in_dim, s.out_dim) for s in models[0].specs()]
    for m in models[1:]:
        if [(s.kind, s.in_dim, s.out_dim) for s in m.specs()] != specs0:
            raise ValidationError("models are not structurally identical")
    total = float(sum(weights))
    base = models[0].param_vector()
    acc = base.copy()
    for m, w in zip(models[1:], weights[1:]):
        acc += (w / total) * (m.param_vector() - base)
    out = models[0].clone()
    out.load_param_vector(acc)
    return out


def _overwrite_params(target: SequentialModel, source: SequentialModel) -> None:
    target.load_param_vector(source.param_vector())


def train_federated(
    clients: list[ClientState],
    global_model: SequentialModel,
    *,
    epochs: int,
    batch_size: int,
    opt_cfg: OptimizerConfig,
    seed: int,
    ledger: TrafficLedger,
    flops: FlopCounter,
    method: str = "fl",
) -> ProtocolOutcome:
    """One federated round per epoch: broadcast the global model, train one
    local epoch per client, upload, average weighted by sample counts.

    Client work is parallel across parties, so the epoch wall clock is the
    slowest client plus the averaging step. Local optimizer state is fresh
    each round (the broadcast invalidates stale moments).
    """
    if not clients:
        raise ValidationError("need at least one client")
    param_count = global_model.param_count
    named = {"model": global_model}
    checkpoint = None
    epoch_reports = []
    for epoch in range(epochs):
        train_times, val_times = [], []
        for c in clients:
            ledger.record(PHASE_MODEL_SYNC, TO_CLIENT, "model", param_count)
            _overwrite_params(c.model, global_model)
            opt = Optimizer(c.model, opt_cfg)
            with timer() as t:
                for x, y in datakit.batches(c.data.train, batch_size, seed, epoch):
                    _full_train_batch(
                        c.model, opt, x, y, lambda f, cid=c.client_id: flops.add_client(cid, f)
                    )
            train_times.append(t.seconds)
            ledger.record(PHASE_MODEL_SYNC, TO_SERVER, "model", param_count)
        with timer() as t_avg:
            averaged = federated_average([c.model for c in clients], [c.sample_count for c in clients])
            _overwrite_params(global_model, averaged)
            flops.add_averaging(flops_average_models(param_count, len(clients)))
        total, count = 0.0, 0
        for c in clients:
            with timer() as t:
                total += _full_eval_loss(
                    global_model,
                    c.data.val,
                    lambda f, cid=c.client_id: flops.add_client(cid, f),
                ) * len(c.data.val)
                count += len(c.data.val)
            val_times.append(t.seconds)
        val_loss = total / count
        checkpoint = _maybe_checkpoint(checkpoint, epoch, val_loss, named)
        wall = max(train_times) + t_avg.seconds + max(val_times)
        epoch_reports.append(EpochReport(epoch, wall, ledger.snapshot(), flops.snapshot()))
    report = _build_report(method, seed, epochs, ledger, flops, epoch_reports, checkpoint)
    return ProtocolOutcome(
        method=method,
        report=report,
        checkpoint=checkpoint,
        epoch_reports=epoch_reports,
        clients=clients,
        model=global_model,
        named_segments=named,
    )


# ---------------------------------------------------------------------------
# batch schedules


def schedule_ac(batch_counts) -> list[tuple[int, int]]:
    """Whole-dataset schedule: all of client 0's batches, then client 1's, ...
    (ascending client id)."""
    out = []
    for cid in sorted(batch_counts):
        out.extend((cid, b) for b in range(batch_counts[cid]))
    return out


def schedule_am(batch_counts) -> list[tuple[int, int]]:
    """Round-robin over clients at mini-batch granularity; a client that runs
    out of batches sits out for the rest of the epoch."""
    queue = [cid for cid in sorted(batch_counts) if batch_counts[cid] > 0]
    progress = {cid: 0 for cid in queue}
    out = []
    while queue:
        next_queue = []
        for cid in queue:
            out.append((cid, progress[cid]))
            progress[cid] += 1
            if progress[cid] < batch_counts[cid]:
                next_queue.append(cid)
        queue = next_queue
    return out


_SCHEDULES = {"ac": schedule_ac, "am": schedule_am}


# ---------------------------------------------------------------------------
# split learning (and SplitFedv2 on top of it)


def _split_train_one_batch(client, server, x, y, ledger, flops) -> float:
    opts = SegmentOptimizers(head=client.head_opt, body=server.opt, tail=client.tail_opt)
    b = x.shape[0]
    if client.split.spec.topology == LS:
        loss = ls_train_batch(client.split, x, y, opts, ledger)
        client_flops = model_train_flops(client.head, b)
    else:
        loss = nls_train_batch(client.split, x, y, opts, ledger)
        client_flops = model_train_flops(client.head, b) + model_train_flops(client.tail, b)
    flops.add_client(client.client_id, client_flops)
    flops.add_server(model_train_flops(server.body, b))
    return loss


def _sync_client_segments(clients, ledger, flops) -> None:
    """SplitFedv2 end-of-epoch sync: average client segments weighted by
    sample count and redistribute; segments travel up and down once per
    client, booked in the model_sync category."""
    weights = [c.sample_count for c in clients]
    seg_params = clients[0].split.client_param_count
    n = len(clients)
    for c in clients:
        ledger.record(PHASE_MODEL_SYNC, TO_SERVER, "model", seg_params)
    avg_head = federated_average([c.head for c in clients], weights)
    flops.add_averaging(flops_average_models(clients[0].head.param_count, n))
    avg_tail = None
    if clients[0].tail is not None:
        avg_tail = federated_average([c.tail for c in clients], weights)
        flops.add_averaging(flops_average_models(clients[0].tail.param_count, n))
    for c in clients:
        _overwrite_params(c.head, avg_head)
        if avg_tail is not None:
            _overwrite_params(c.tail, avg_tail)
        ledger.record(PHASE_MODEL_SYNC, TO_CLIENT, "model", seg_params)


def _train_split_loop(
    clients,
    server,
    *,
    schedule: str,
    epochs: int,
    batch_size: int,
    seed: int,
    ledger: TrafficLedger,
    flops: FlopCounter,
    sync_each_epoch: bool,
    method: str,
) -> ProtocolOutcome:
    if not clients:
        raise ValidationError("need at least one client")
    if schedule not in _SCHEDULES:
        raise ValidationError(f"unknown schedule {schedule!r}")
    by_id = {c.client_id: c for c in clients}
    named = _named_split_segments(clients, server)
    checkpoint = None
    epoch_reports = []
    for epoch in range(epochs):
        with timer() as t:
            client_batches = {
                c.client_id: datakit.batches(c.data.train, batch_size, seed, epoch)
                for c in clients
            }
            counts = {cid: len(b) for cid, b in client_batches.items()}
            for cid, b_idx in _SCHEDULES[schedule](counts):
                if cid not in by_id:
                    raise ProtocolError(f"schedule references unknown client {cid}")
                x, y = client_batches[cid][b_idx]
                _split_train_one_batch(by_id[cid], server, x, y, ledger, flops)
            if sync_each_epoch:
                _sync_client_segments(clients, ledger, flops)
            val_loss = _split_val_loss(clients, ledger, flops)
            checkpoint = _maybe_checkpoint(checkpoint, epoch, val_loss, named)
        epoch_reports.append(EpochReport(epoch, t.seconds, ledger.snapshot(), flops.snapshot()))
    report = _build_report(method, seed, epochs, ledger, flops, epoch_reports, checkpoint)
    return ProtocolOutcome(
        method=method,
        report=report,
        checkpoint=checkpoint,
        epoch_reports=epoch_reports,
        clients=clients,
        server=server,
        named_segments=named,
    )


def train_split(
    clients,
    server,
    *,
    schedule: str,
    epochs: int,
    batch_size: int,
    seed: int,
    ledger: TrafficLedger,
    flops: FlopCounter,
    method: str = "sl",
) -> ProtocolOutcome:
    """Split learning: one shared server body, per-client heads (and tails),
    no weight synchronization between clients."""
    return _train_split_loop(
        clients,
        server,
        schedule=schedule,
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        ledger=ledger,
        flops=flops,
        sync_each_epoch=False,
        method=method,
    )


def train_sflv2(
    clients,
    server,
    *,
    epochs: int,
    batch_size: int,
    seed: int,
    ledger: TrafficLedger,
    flops: FlopCounter,
    method: str = "sflv2",
) -> ProtocolOutcome:
    """Split learning with the whole-dataset schedule plus end-of-epoch
    federated averaging of the client segments."""
    return _train_split_loop(
        clients,
        server,
        schedule="ac",
        epochs=epochs,
        batch_size=batch_size,
        seed=seed,
        ledger=ledger,
        flops=flops,
        sync_each_epoch=True,
        method=method,
    )


# ---------------------------------------------------------------------------
# SplitFedv3: frozen shared body during the round, one aggregated update


@dataclass
class _RoundWorkspace:
    caches: list
    row_counts: list[int]
    batch_labels: list[Tensor]


@dataclass
class ForwardPayload:
    client_id: int
    activations: Tensor
    labels: Tensor | None  # None under nls: labels never leave the client


def sflv3_client_forward_prop(
    client: ClientState,
    local_epochs: int,
    *,
    batch_size: int,
    seed: int,
    round_index: int,
    ledger: TrafficLedger,
    flops: FlopCounter,
) -> ForwardPayload:
    """Run E local passes over the client's batches through the head only,
    concatenating cut activations (and labels, when they may be shared).
    Forward caches are retained for the later backprop phase."""
    if local_epochs < 1:
        raise ValidationError("local_epochs must be >= 1")
    topology = client.split.spec.topology
    acts, labels, caches, rows = [], [], [], []
    for e in range(local_epochs):
        epoch_key = round_index * local_epochs + e
        for x, y in datakit.batches(client.data.train, batch_size, seed, epoch_key):
            a, cache = forward(client.head, x)
            flops.add_client(client.client_id, model_forward_flops(client.head, x.shape[0]))
            acts.append(a)
            labels.append(y)
            caches.append(cache)
            rows.append(x.shape[0])
    activations = np.concatenate(acts, axis=0)
    stacked_labels = np.concatenate(labels, axis=0)
    client.pending = _RoundWorkspace(caches, rows, labels)
    ledger.record(PHASE_TRAIN, TO_SERVER, ACTIVATION, activations.size)
    if topology == LS:
        ledger.record(PHASE_TRAIN, TO_SERVER, LABELS, stacked_labels.size)
        return ForwardPayload(client.client_id, activations, stacked_labels)
    return ForwardPayload(client.client_id, activations, None)


def _nls_tail_round(client, server_out, ledger, flops) -> tuple[Tensor, float]:
    """U-shaped variant of the server-side loss: the whole round's server
    output goes down to the client, the tail computes one loss over it, and
    the tail-input gradient goes back up. One tail optimizer step per round."""
    ledger.record(PHASE_TRAIN, TO_CLIENT, ACTIVATION, server_out.size)
    all_labels = np.concatenate(client.pending.batch_labels, axis=0)
    preds, tail_cache = forward(client.tail, server_out)
    loss, dpred = bce_loss(preds, all_labels)
    tail_grads, out_grad = backward(client.tail, tail_cache, dpred)
    client.tail_opt.step(tail_grads)
    flops.add_client(client.client_id, model_train_flops(client.tail, server_out.shape[0]))
    ledger.record(PHASE_TRAIN, TO_SERVER, GRADIENT, out_grad.size)
    return out_grad, loss


def sflv3_main_server_train(
    server: ServerState,
    payloads: list[ForwardPayload],
    clients_by_id: dict[int, ClientState],
    plan: RoundPlan,
    n_total: int,
    *,
    ledger: TrafficLedger,
    flops: FlopCounter,
) -> dict[int, Tensor]:
    """Process every client's concatenated activations against the frozen
    server body, return each client's activation gradient, then apply one
    server update from the sample-count-weighted mean of the per-client
    gradients scaled by (participants / total clients).

    The reduction runs in ascending client id order, so the result does not
    depend on payload processing order.
    """
    participating = set(plan.participating)
    grads_by_client: dict[int, list[dict[str, Tensor]]] = {}
    d_activations: dict[int, Tensor] = {}
    for payload in payloads:
        cid = payload.client_id
        if cid not in participating:
            raise ProtocolError(f"payload from non-participating client {cid}")
        if cid in grads_by_client:
            raise ProtocolError(f"duplicate payload from client {cid}")
        client = clients_by_id[cid]
        rows = payload.activations.shape[0]
        out, body_cache = forward(server.body, payload.activations)
        flops.add_server(model_forward_flops(server.body, rows))
        if client.split.spec.topology == LS:
            _, dout = bce_loss(out, payload.labels)
        else:
            dout, _ = _nls_tail_round(client, out, ledger, flops)
        body_grads, d_act = backward(server.body, body_cache, dout)
        flops.add_server(2 * model_forward_flops(server.body, rows))
        grads_by_client[cid] = body_grads
        d_activations[cid] = d_act
        ledger.record(PHASE_TRAIN, TO_CLIENT, GRADIENT, d_act.size)

    total_weight = float(sum(clients_by_id[cid].sample_count for cid in grads_by_client))
    scale = plan.n_t / n_total
    agg: list[dict[str, Tensor]] | None = None
    for cid in sorted(grads_by_client):
        alpha = clients_by_id[cid].sample_count / total_weight
        layer_grads = grads_by_client[cid]
        if agg is None:
            agg = [{k: alpha * g for k, g in lg.items()} for lg in layer_grads]
        else:
            for acc, lg in zip(agg, layer_grads):
                for k, g in lg.items():
                    acc[k] += alpha * g
    agg = [{k: scale * g for k, g in lg.items()} for lg in agg]
    server.opt.step(agg)
    flops.add_averaging(flops_average_models(server.body.param_count, len(grads_by_client)))
    server.round_index += 1
    return d_activations


def sflv3_client_backprop(
    client: ClientState, d_activation: Tensor, *, flops: FlopCounter
) -> None:
    """Split the round's activation gradient back into per-batch slices and
    apply one head optimizer step per batch.

    All per-batch gradients are taken at the round-start head weights (the
    weights the activations and their gradients were computed against); the
    optimizer steps are then applied sequentially in batch order.
    """
    if client.pending is None:
        raise ProtocolError("no retained forward caches for this round")
    rows = client.pending.row_counts
    if d_activation.shape[0] != sum(rows):
        raise ProtocolError(
            f"gradient rows {d_activation.shape[0]} != concatenated activations {sum(rows)}"
        )
    per_batch_grads = []
    offset = 0
    for cache, r in zip(client.pending.caches, rows):
        head_grads, _ = backward(client.head, cache, d_activation[offset : offset + r])
        flops.add_client(client.client_id, 2 * model_forward_flops(client.head, r))
        per_batch_grads.append(head_grads)
        offset += r
    for head_grads in per_batch_grads:
        client.head_opt.step(head_grads)
    client.pending = None


def train_sflv3(
    clients,
    server,
    *,
    rounds: int,
    local_epochs: int,
    batch_size: int,
    seed: int,
    ledger: TrafficLedger,
    flops: FlopCounter,
    method: str = "sflv3",
    client_order: tuple[int, ...] | None = None,
    reset_server_optimizer: bool = False,
) -> ProtocolOutcome:
    """Round-based training: client segments stay unique (never averaged);
    the shared server body receives one aggregated update per round."""
    if not clients:
        raise ValidationError("need at least one client")
    by_id = {c.client_id: c for c in clients}
    order = tuple(client_order) if client_order is not None else tuple(sorted(by_id))
    if set(order) - set(by_id):
        raise ValidationError("client_order references unknown clients")
    plan = RoundPlan(participating=order, local_epochs=local_epochs)
    opt_cfg = server.opt.cfg
    named = _named_split_segments(clients, server)
    checkpoint = None
    epoch_reports = []
    for t_round in range(rounds):
        if reset_server_optimizer:
            server.opt = Optimizer(server.body, opt_cfg)
        fwd_times, bwd_times = [], []
        payloads = []
        for cid in order:
            with timer() as t:
                payloads.append(
                    sflv3_client_forward_prop(
                        by_id[cid],
                        plan.local_epochs,
                        batch_size=batch_size,
                        seed=seed,
                        round_index=t_round,
                        ledger=ledger,
                        flops=flops,
                    )
                )
            fwd_times.append(t.seconds)
        with timer() as t_server:
            d_acts = sflv3_main_server_train(
                server, payloads, by_id, plan, len(clients), ledger=ledger, flops=flops
            )
        for cid in order:
            with timer() as t:
                sflv3_client_backprop(by_id[cid], d_acts[cid], flops=flops)
            bwd_times.append(t.seconds)
        with timer() as t_val:
            val_loss = _split_val_loss(clients, ledger, flops)
            checkpoint = _maybe_checkpoint(checkpoint, t_round, val_loss, named)
        wall = max(fwd_times) + t_server.seconds + max(bwd_times) + t_val.seconds
        epoch_reports.append(EpochReport(t_round, wall, ledger.snapshot(), flops.snapshot()))
    report = _build_report(method, seed, rounds, ledger, flops, epoch_reports, checkpoint)
    return ProtocolOutcome(
        method=method,
        report=report,
        checkpoint=checkpoint,
        epoch_reports=epoch_reports,
        clients=clients,
        server=server,
        named_segments=named,
    )


# ---------------------------------------------------------------------------
# evaluation


def routed_scores(outcome: ProtocolOutcome, which: str = "test") -> ScoredPredictions:
    """Pool predictions over every client's partition, each sample routed
    through the segments owned by the client holding its source."""
    scratch = TrafficLedger()  # post-training measurement: not metered
    scores, labels = [], []
    if outcome.clients:
        for c in outcome.clients:
            ds = getattr(c.data, which)
            if np.any(ds.source_ids != c.client_id):
                bad = int(ds.source_ids[ds.source_ids != c.client_id][0])
                raise ValidationError(f"sample with source {bad} routed to client {c.client_id}")
            if c.split is not None:
                preds = eval_forward(c.split, ds.features, scratch)
            else:
                preds, _ = forward(outcome.model, ds.features)
            scores.append(preds[:, 0])
            labels.append(ds.labels[:, 0])
    else:
        ds = getattr(outcome.pooled_data, which)
        preds, _ = forward(outcome.model, ds.features)
        scores.append(preds[:, 0])
        labels.append(ds.labels[:, 0])
    return ScoredPredictions(np.concatenate(scores), np.concatenate(labels))


def evaluate(
    outcome: ProtocolOutcome, *, threshold: float = 0.5, restore_best: bool = True
) -> MetricsReport:
    """Score the best-validation model on the test partitions and fill the
    metric fields of the outcome's report."""
    if restore_best:
        outcome.restore_best()
    preds = routed_scores(outcome, "test")
    preds.threshold = threshold
    results = summarize(preds)
    outcome.report.auroc = results["auroc"]
    outcome.report.auprc = results["auprc"]
    outcome.report.f1 = results["f1"]
    outcome.report.kappa = results["kappa"]
    return outcome.report
