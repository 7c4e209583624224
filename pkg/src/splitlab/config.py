"""Experiment configuration (TOML-backed) and the result-row schema."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .datakit import DEFAULT_EVAL_PREVALENCE, DEFAULT_SOURCE_WEIGHTS, DEFAULT_TRAIN_PREVALENCE
from .errors import ValidationError
from .methods import METHODS, needs_split, topology
from .optim import OptimizerConfig

CSV_COLUMNS = (
    "method",
    "seed",
    "auroc",
    "auprc",
    "f1",
    "kappa",
    "epochs",
    "wall_s_per_epoch",
    "bytes_train",
    "bytes_eval",
    "bytes_model_sync",
    "flops_server",
    "flops_avg_client",
    "flops_averaging",
    "best_epoch",
)

# Columns whose values may differ between reruns of the same config.
NONDETERMINISTIC_COLUMNS = ("wall_s_per_epoch",)


@dataclass
class MetricsReport:
    """One result row: classification metrics plus cost accounting."""

    method: str
    seed: int
    auroc: float | None = None
    auprc: float | None = None
    f1: float | None = None
    kappa: float | None = None
    epochs: int = 0
    wall_s_per_epoch: float = 0.0
    bytes_train: int = 0
    bytes_eval: int = 0
    bytes_model_sync: int = 0
    flops_server: int = 0
    flops_avg_client: float = 0.0
    flops_averaging: int = 0
    best_epoch: int = -1

    def csv_row(self) -> list[str]:
        values = []
        for name in CSV_COLUMNS:
            v = getattr(self, name)
            if v is None:
                raise ValidationError(f"report field {name} not populated")
            values.append(repr(float(v)) if isinstance(v, float) else str(v))
        return values


@dataclass
class SyntheticDataSpec:
    n_features: int = 16
    class_separation: float = 3.0
    source_shift: float = 1.0

    def validate(self) -> None:
        if self.n_features < 1:
            raise ValidationError("data.synthetic.n_features: must be >= 1")
        if self.class_separation < 0 or self.source_shift < 0:
            raise ValidationError("data.synthetic: separation and shift must be >= 0")


@dataclass
class PartitionSpec:
    total_train: int = 2000
    val_per_client: int = 100
    test_per_client: int = 100
    train_prevalence: float = DEFAULT_TRAIN_PREVALENCE
    eval_prevalence: float = DEFAULT_EVAL_PREVALENCE
    source_weights: tuple[int, ...] = DEFAULT_SOURCE_WEIGHTS

    def validate(self) -> None:
        if self.total_train < len(self.source_weights):
            raise ValidationError("partition.total_train: too small for the client count")
        if self.val_per_client < 1 or self.test_per_client < 1:
            raise ValidationError("partition: val/test sizes must be >= 1")
        for name in ("train_prevalence", "eval_prevalence"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValidationError(f"partition.{name}: must lie in (0, 1)")
        if any(w <= 0 for w in self.source_weights):
            raise ValidationError("partition.source_weights: must be positive")


@dataclass
class ExperimentConfig:
    seed: int = 42
    methods: tuple[str, ...] = METHODS
    epochs: int = 10
    local_epochs: int = 1
    batch_size: int = 64
    hidden_dims: tuple[int, ...] = (8,)
    cut_index: int | None = None
    tail_len: int | None = None
    threshold: float = 0.5
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    synthetic: SyntheticDataSpec | None = field(default_factory=SyntheticDataSpec)
    csv_path: str | None = None
    partition: PartitionSpec = field(default_factory=PartitionSpec)

    def validate(self) -> None:
        if not self.methods:
            raise ValidationError("experiment.methods: at least one method required")
        for m in self.methods:
            if m not in METHODS:
                raise ValidationError(f"experiment.methods: unknown method {m!r}")
        if self.epochs < 1:
            raise ValidationError("experiment.epochs: must be >= 1")
        if self.local_epochs < 1:
            raise ValidationError("experiment.local_epochs: must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("experiment.batch_size: must be >= 1")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValidationError("model.hidden_dims: positive dims required")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError("experiment.threshold: must lie in (0, 1)")
        for m in self.methods:
            if needs_split(m):
                if self.cut_index is None:
                    raise ValidationError(f"model.split.cut_index: required for method {m}")
                if topology(m) == "nls" and self.tail_len is None:
                    raise ValidationError(f"model.split.tail_len: required for method {m}")
        if self.synthetic is None and self.csv_path is None:
            raise ValidationError("data: either [data.synthetic] or data.csv_path required")
        if self.synthetic is not None:
            self.synthetic.validate()
        self.partition.validate()


def _take(table: dict, cls, context: str, **overrides):
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in table.items():
        if key not in known:
            raise ValidationError(f"{context}.{key}: unknown field")
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"{context}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file.

    Layout: [experiment] seed/methods/epochs/local_epochs/batch_size/threshold,
    [model] hidden_dims, [model.split] cut_index/tail_len, [optimizer],
    [data.synthetic] or [data] csv_path, [partition].
    """
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read config ({exc})") from None
    with fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: invalid TOML ({exc})") from None

    experiment = raw.get("experiment", {})
    model = dict(raw.get("model", {}))
    split = model.pop("split", {})
    data = dict(raw.get("data", {}))
    synthetic_raw = data.pop("synthetic", None)

    cfg_kwargs = {}
    for key in ("seed", "methods", "epochs", "local_epochs", "batch_size", "threshold"):
        if key in experiment:
            value = experiment[key]
            cfg_kwargs[key] = tuple(value) if isinstance(value, list) else value
    unknown = set(experiment) - {"seed", "methods", "epochs", "local_epochs", "batch_size", "threshold"}
    if unknown:
        raise ValidationError(f"experiment.{sorted(unknown)[0]}: unknown field")
    if "hidden_dims" in model:
        cfg_kwargs["hidden_dims"] = tuple(model.pop("hidden_dims"))
    if model:
        raise ValidationError(f"model.{sorted(model)[0]}: unknown field")
    for key in ("cut_index", "tail_len"):
        if key in split:
            cfg_kwargs[key] = split.pop(key)
    if split:
        raise ValidationError(f"model.split.{sorted(split)[0]}: unknown field")

    cfg_kwargs["optimizer"] = _take(raw.get("optimizer", {}), OptimizerConfig, "optimizer")
    cfg_kwargs["synthetic"] = (
        _take(synthetic_raw, SyntheticDataSpec, "data.synthetic")
        if synthetic_raw is not None
        else None
    )
    if "csv_path" in data:
        cfg_kwargs["csv_path"] = data.pop("csv_path")
    if data:
        raise ValidationError(f"data.{sorted(data)[0]}: unknown field")
    cfg_kwargs["partition"] = _take(raw.get("partition", {}), PartitionSpec, "partition")

    known_tables = {"experiment", "model", "optimizer", "data", "partition"}
    extra = set(raw) - known_tables
    if extra:
        raise ValidationError(f"[{sorted(extra)[0]}]: unknown table")

    try:
        cfg = ExperimentConfig(**cfg_kwargs)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None
    cfg.validate()
    return cfg
