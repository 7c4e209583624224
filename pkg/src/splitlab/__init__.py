"""Desk-scale laboratory for split and federated training protocols."""

from .accounting import (
    FlopCounter,
    TrafficLedger,
    closed_form_epoch_bytes,
    flops_average_models,
    flops_backward,
    flops_forward,
    timer,
)
from .config import ExperimentConfig, MetricsReport, load_config
from .datakit import Dataset, PartitionPlan, batches, generate_synthetic, load_csv, partition
from .errors import DimensionError, ProtocolError, UndefinedMetricError, ValidationError
from .metrics import ScoredPredictions, auprc, auroc, f1_and_kappa
from .nn import SequentialModel, bce_loss, forward, backward, mlp
from .optim import AdamState, Optimizer, OptimizerConfig, adam_step
from .protocols import (
    Checkpoint,
    evaluate,
    federated_average,
    schedule_ac,
    schedule_am,
    train_centralized,
    train_federated,
    train_sflv2,
    train_sflv3,
    train_split,
)
from .splitting import SplitModel, SplitSpec, eval_forward, split_model

__version__ = "0.1.0"
