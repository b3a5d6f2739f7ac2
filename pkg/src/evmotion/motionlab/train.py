"""Teacher and student training loops."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EvMotionError, InputError, NumericError
from . import layers as L
from .net import ToyNet
from .optim import TrainConfig, init_state, lr_at, sgd_step

LOG_FIELDS = ("iteration", "ce_loss", "distill_loss", "lr", "accuracy", "feature_gap")


@dataclass
class LogRecord:
    iteration: int
    ce_loss: float
    distill_loss: float
    lr: float
    accuracy: float
    feature_gap: float = float("nan")

    def to_line(self):
        return " ".join(f"{k}={getattr(self, k)!r}" for k in LOG_FIELDS)

    @classmethod
    def from_line(cls, line):
        kv = dict(item.split("=", 1) for item in line.split())
        return cls(int(kv["iteration"]), *(float(kv[k]) for k in LOG_FIELDS[1:]))


@dataclass
class TrainResult:
    net: ToyNet
    accuracy: float
    log: list = field(default_factory=list)
    gap_start: float = float("nan")
    gap_end: float = float("nan")
    teacher_checksum_before: str = ""
    teacher_checksum_after: str = ""


def write_log(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(r.to_line() + "\n" for r in records))
    return path


def read_log(path):
    return [LogRecord.from_line(line) for line in Path(path).read_text().splitlines() if line.strip()]


def batch_indices(rng, n, batch_size):
    """Endless minibatches; each epoch is a fresh permutation (the only RNG draws in training)."""
    batch_size = min(batch_size, n)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield perm[start:start + batch_size]


def _forward_chunks(net, x, chunk=256):
    logits, feats = [], []
    for i in range(0, len(x), chunk):
        lg, f, _ = net.forward(x[i:i + chunk])
        logits.append(lg)
        feats.append(f)
    return np.concatenate(logits), np.concatenate(feats)


def evaluate(net: ToyNet, x, y):
    """Classification accuracy of ``net`` on inputs ``x`` (event clips only for a student)."""
    y = np.asarray(y)
    if len(y) == 0:
        raise InputError("cannot evaluate on an empty set")
    logits, _ = _forward_chunks(net, x)
    return float(np.mean(np.argmax(logits, axis=1) == y))


def feature_gap(student, teacher, x_student, x_teacher):
    """Mean over samples of ``||f_student - f_teacher||``."""
    _, fe = _forward_chunks(student, x_student)
    _, ff = _forward_chunks(teacher, x_teacher)
    return float(np.mean(np.linalg.norm(fe - ff, axis=1)))


def _check_data(net, x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise InputError("training set is empty")
    if len(x) != len(y):
        raise InputError(f"{len(x)} inputs but {len(y)} labels")
    if y.min() < 0 or y.max() >= net.config.n_classes:
        raise InputError(f"labels must lie in [0, {net.config.n_classes})")
    return x, y


def _fit(net, x, y, cfg: TrainConfig, teacher=None, x_teacher=None):
    if net.frozen:
        raise InputError("cannot train a frozen network")
    rng = np.random.default_rng(cfg.seed)
    state = init_state(net.params)
    batches = batch_indices(rng, len(x), cfg.batch_size)
    # the teacher is frozen, so its features are computed once
    f_teacher_all = _forward_chunks(teacher, x_teacher)[1] if teacher is not None else None
    log = []
    last = cfg.iterations - 1
    for it in range(cfg.iterations):
        idx = next(batches)
        # overflow shows up as a non-finite loss below; no need for numpy's warnings too
        with np.errstate(over="ignore", invalid="ignore"):
            logits, feat, cache = net.forward(x[idx])
            ce, d_logits = L.cross_entropy(logits, y[idx])
            dist, d_feat, gap = 0.0, None, float("nan")
            if teacher is not None:
                f_teacher = f_teacher_all[idx]
                dist, d_feat = L.distill_loss(feat, f_teacher, cfg.alpha, cfg.distill_reduction)
                gap = float(np.mean(np.linalg.norm(feat - f_teacher, axis=1)))
        if not np.isfinite(ce + dist):
            raise NumericError("training diverged (non-finite loss)", iteration=it)
        if it % cfg.log_every == 0 or it == last:
            acc = float(np.mean(np.argmax(logits, axis=1) == y[idx]))
            log.append(LogRecord(it, ce, dist, lr_at(it, cfg), acc, gap))
        with np.errstate(over="ignore", invalid="ignore"):
            grads = net.backward(cache, d_logits, d_feat)
        try:
            sgd_step(net.params, grads, state, cfg, step=it)
        except NumericError as exc:
            raise NumericError("training diverged (non-finite gradient)", iteration=it) from exc
    return log


def train_classifier(net: ToyNet, x, y, cfg: TrainConfig) -> TrainResult:
    """Plain cross-entropy training with SGD + momentum + weight decay."""
    x, y = _check_data(net, x, y)
    log = _fit(net, x, y, cfg)
    return TrainResult(net, evaluate(net, x, y), log)


def train_teacher(net: ToyNet, x_flow, y, cfg: TrainConfig) -> TrainResult:
    """Train the flow-modality network with cross-entropy. Freeze it before distilling."""
    return train_classifier(net, x_flow, y, cfg)


def train_student_distilled(student: ToyNet, teacher: ToyNet, x_events, x_flow, y, cfg: TrainConfig) -> TrainResult:
    """Train ``student`` on event clips with cross-entropy plus feature distillation.

    ``teacher`` must be frozen; it only supplies features for the paired flow
    clips and its parameters are checksummed before and after.
    """
    if not teacher.frozen:
        raise InputError("teacher must be frozen before distillation")
    if student.config.feature_dim != teacher.config.feature_dim:
        raise InputError(f"feature tap sizes differ: student {student.config.feature_dim}, "
                         f"teacher {teacher.config.feature_dim}")
    x_events, y = _check_data(student, x_events, y)
    x_flow = np.asarray(x_flow, dtype=np.float64)
    if len(x_flow) != len(x_events):
        raise InputError(f"{len(x_events)} event clips but {len(x_flow)} flow clips")
    before = teacher.checksum()
    gap_start = feature_gap(student, teacher, x_events, x_flow)
    log = _fit(student, x_events, y, cfg, teacher=teacher, x_teacher=x_flow)
    gap_end = feature_gap(student, teacher, x_events, x_flow)
    after = teacher.checksum()
    if after != before:
        raise EvMotionError("teacher parameters changed during distillation")
    return TrainResult(student, evaluate(student, x_events, y), log, gap_start, gap_end, before, after)
