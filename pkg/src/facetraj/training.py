"""Seeded mini-batch training loop with per-epoch loss logging."""
from __future__ import annotations

import ctypes
import ctypes.util
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ftdn, nncore
from .errors import InputError
from .rng import Xoshiro256, derive_seed
from .traj import SampleSet

_BATCH_STREAM = 0xBA7C
_M_TRIM_THRESHOLD, _M_MMAP_THRESHOLD = -1, -3


def _keep_freed_memory():
    """Stop glibc from returning large freed blocks to the kernel.

    Each step allocates and frees tens of MB of activations; with the default
    thresholds those pages are unmapped and faulted back in on every step.
    """
    try:
        mallopt = ctypes.CDLL(ctypes.util.find_library("c")).mallopt
    except (OSError, AttributeError, TypeError):
        return
    mallopt(_M_MMAP_THRESHOLD, 1 << 30)
    mallopt(_M_TRIM_THRESHOLD, 1 << 30)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 7
    use_time_gat: bool = True
    use_space_gat: bool = True
    use_gru: bool = True
    threshold: float = 0.5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InputError("epochs must be >= 0 and batch_size >= 1")
        if not (self.lr >= 0 and math.isfinite(self.lr)):
            raise InputError("learning rate must be a finite non-negative number")

    @property
    def flags(self) -> ftdn.Flags:
        return ftdn.Flags(self.use_time_gat, self.use_space_gat, self.use_gru)


def config_hash(config) -> str:
    """Short SHA-256 of the canonical JSON form of a config (dataclass or dict)."""
    d = asdict(config) if hasattr(config, "__dataclass_fields__") else dict(config)
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EpochLog:
    epoch: int
    loss: float
    bce: float
    mse: float
    val_accuracy: float | None = None


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_epoch: int
    history: list = field(default_factory=list)
    opt_state: nncore.AdamState | None = None


def epoch_order(n, seed, epoch) -> np.ndarray:
    """Sample order for one epoch, drawn from a stream keyed by (seed, epoch)."""
    return Xoshiro256(derive_seed(seed, _BATCH_STREAM, epoch)).permutation(n)


def trainable(sset: SampleSet) -> SampleSet:
    """Labeled samples not reserved for evaluation."""
    return sset.subset(np.flatnonzero((sset.labels >= 0) & ~sset.eval_only))


def sample_accuracy(params, sset: SampleSet, flags, threshold=0.5) -> float:
    probs = ftdn.predict_proba(params, sset.x, flags)
    pred = (probs >= threshold).astype(np.int64)
    return float(np.mean(pred == sset.labels)) if len(sset) else float("nan")


def train(train_set: SampleSet, cfg: TrainConfig, val_set: SampleSet | None = None, params=None,
          on_epoch=None) -> TrainResult:
    """Train FTDN with Adam; keep the parameters of the best validation epoch.

    Without a validation set the final parameters are also the best ones.
    ``on_epoch(log)`` is called after every epoch.
    """
    data = trainable(train_set)
    if len(data) == 0:
        raise InputError("no labeled training samples")
    params = ftdn.init_params(cfg.seed) if params is None else {k: np.array(v) for k, v in params.items()}
    _keep_freed_memory()
    flags = cfg.flags
    opt = nncore.AdamState()
    x, y = data.x, data.labels.astype(np.float64)
    history = []
    best = {k: v.copy() for k, v in params.items()}
    best_epoch, best_acc = 0, -1.0
    for epoch in range(1, cfg.epochs + 1):
        order = epoch_order(len(data), cfg.seed, epoch)
        sums = [[], [], []]
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            losses = ftdn.train_step(params, opt, x[idx], y[idx], cfg.lr, flags)
            for acc, v in zip(sums, losses):
                acc.append(v * len(idx))
        n = len(order)
        log = EpochLog(epoch, math.fsum(sums[0]) / n, math.fsum(sums[1]) / n, math.fsum(sums[2]) / n)
        if val_set is not None and len(val_set):
            log.val_accuracy = sample_accuracy(params, val_set, flags, cfg.threshold)
            if log.val_accuracy > best_acc:
                best_acc, best_epoch = log.val_accuracy, epoch
                best = {k: v.copy() for k, v in params.items()}
        history.append(log)
        if on_epoch is not None:
            on_epoch(log)
    if val_set is None or not len(val_set) or cfg.epochs == 0:
        best = {k: v.copy() for k, v in params.items()}
        best_epoch = cfg.epochs
    return TrainResult(params, best, best_epoch, history, opt)
