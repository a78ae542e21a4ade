"""Training loop, evaluation metrics, checkpoints and the gradient check harness."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .gru import PARAM_NAMES, GruParams, build_inputs, sequence_backward, sequence_forward
from .heads import HeadParams, head_scores, l2_svm_loss, predict, softmax_head_loss
from .nn import AdamState, adam_step
from .preprocess import EncodedDataset

log = logging.getLogger(__name__)

HEADS = ("svm", "softmax")
HEAD_PARAM_NAMES = ("head_W", "head_b")
ALL_PARAM_NAMES = PARAM_NAMES + HEAD_PARAM_NAMES


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class CompatibilityError(ValueError):
    pass


# --------------------------------------------------------------------------- config

@dataclass
class TrainConfig:
    batch_size: int = 256
    cell_size: int = 256
    dropout_keep: float = 0.85
    epochs: int = 5
    learning_rate: float = 1e-5
    svm_C: float | None = 0.5
    head: str = "svm"
    seed: int = 0
    shuffle: bool = False

    def problems(self) -> list[str]:
        out = []
        for name in ("batch_size", "cell_size"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) <= 0:
                out.append(f"{name} must be a positive integer")
        if not isinstance(self.epochs, int) or self.epochs < 0:
            out.append("epochs must be a non-negative integer")
        if not 0.0 < self.dropout_keep <= 1.0:
            out.append("dropout_rate (keep probability) must lie in (0, 1]")
        if not self.learning_rate > 0:
            out.append("learning_rate must be positive")
        if self.head not in HEADS:
            out.append(f"head must be one of {HEADS}")
        elif self.head == "svm":
            if self.svm_C is None:
                out.append("svm head requires svm_c")
            elif not self.svm_C > 0:
                out.append("svm_c must be positive")
        if not isinstance(self.seed, int) or self.seed < 0:
            out.append("seed must be a non-negative integer")
        return out

    def validate(self) -> "TrainConfig":
        errs = self.problems()
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    @property
    def penalty(self) -> float:
        return self.svm_C if self.head == "svm" else 1.0


# "dropout_rate" in config files is really the keep probability.
_CONFIG_KEYS = {
    "batch_size": ("batch_size", int),
    "cell_size": ("cell_size", int),
    "dropout_rate": ("dropout_keep", float),
    "epochs": ("epochs", int),
    "learning_rate": ("learning_rate", float),
    "svm_c": ("svm_C", float),
    "head": ("head", str),
    "seed": ("seed", int),
    "shuffle": ("shuffle", lambda s: s.lower() in ("1", "true", "yes", "on")),
}


def parse_config(text: str, head: str | None = None) -> TrainConfig:
    """Parse ``key = value`` lines. Unset ``svm_c`` stays ``None``.

    ``head`` overrides any ``head`` key in the file. A softmax config that sets
    ``svm_c`` only draws a warning; the value is dropped.
    """
    values: dict = {"svm_C": None}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        attr, conv = _CONFIG_KEYS[key]
        try:
            values[attr] = conv(value)
        except ValueError:
            raise ConfigError(f"config line {lineno}: bad value {value!r} for {key}") from None
    if head is not None:
        values["head"] = head
    cfg = TrainConfig(**values)
    if cfg.head == "softmax" and cfg.svm_C is not None:
        warnings.warn("svm_c is not used by the softmax head; ignoring it", stacklevel=2)
        cfg.svm_C = None
    return cfg.validate()


def load_config(path, head: str | None = None) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    return parse_config(text, head)


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for key, (attr, _) in _CONFIG_KEYS.items():
        v = getattr(cfg, attr)
        if v is None:
            continue
        lines.append(f"{key} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- metrics

def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


@dataclass(frozen=True)
class ConfusionReport:
    """Binary confusion counts with intrusion (label 1) as the positive class.

    Rates whose denominator is zero are NaN.
    """
    tp: int
    tn: int
    fp: int
    fn: int
    scope: str = "per_epoch"

    @classmethod
    def from_predictions(cls, y_true, y_pred, scope="per_epoch") -> "ConfusionReport":
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        return cls(int(np.sum((y_true == 1) & (y_pred == 1))),
                   int(np.sum((y_true == 0) & (y_pred == 0))),
                   int(np.sum((y_true == 0) & (y_pred == 1))),
                   int(np.sum((y_true == 1) & (y_pred == 0))), scope)

    def __add__(self, other: "ConfusionReport") -> "ConfusionReport":
        return ConfusionReport(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn, self.scope)

    def scaled(self, k: int, scope="accumulated") -> "ConfusionReport":
        return ConfusionReport(self.tp * k, self.tn * k, self.fp * k, self.fn * k, scope)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def tpr(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def fnr(self):
        return _ratio(self.fn, self.tp + self.fn)

    @property
    def tnr(self):
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def fpr(self):
        return _ratio(self.fp, self.tn + self.fp)

    @property
    def accuracy(self):
        return _ratio(self.tp + self.tn, self.total)

    def as_row(self) -> dict:
        return {"scope": self.scope, "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
                "accuracy": self.accuracy, "tpr": self.tpr, "tnr": self.tnr,
                "fpr": self.fpr, "fnr": self.fnr}


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return "-"
    return format(float(x), ".12g")


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    report: ConfusionReport
    cumulative: ConfusionReport
    wall_time_s: float = 0.0

    @property
    def accuracy(self):
        return self.report.accuracy


METRIC_COLUMNS = ("epoch", "loss", "accuracy", "tp", "tn", "fp", "fn", "tpr", "tnr", "fpr",
                  "fnr", "wall_time_s", "cum_tp", "cum_tn", "cum_fp", "cum_fn")


def metrics_to_text(rows: list[EpochMetrics]) -> str:
    out = ["\t".join(METRIC_COLUMNS)]
    for m in rows:
        r, c = m.report, m.cumulative
        vals = (m.epoch, m.loss, r.accuracy, r.tp, r.tn, r.fp, r.fn, r.tpr, r.tnr, r.fpr, r.fnr,
                m.wall_time_s, c.tp, c.tn, c.fp, c.fn)
        out.append("\t".join(fmt(v) for v in vals))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- network

def network_loss(gru: GruParams, head: HeadParams, kind: str, X, labels, keep_prob=1.0,
                 mode="eval", rng=None, backend=None, need_grads=True):
    """Forward the full network and (optionally) backpropagate.

    Returns ``(loss, scores, grads)`` with ``grads`` keyed like
    ``ALL_PARAM_NAMES`` plus ``"x"`` for the input gradient.
    """
    h, trace = sequence_forward(X, gru, keep_prob, mode, rng, backend)
    scores = head_scores(h, head).scores
    if kind == "svm":
        loss, dscores, dW_reg = l2_svm_loss(scores, labels, head)
    elif kind == "softmax":
        loss, dscores = softmax_head_loss(scores, labels)
        dW_reg = 0.0
    else:
        raise ValueError(f"unknown head {kind!r}")
    if not need_grads:
        return loss, scores, None
    grads = {"head_W": dscores.T @ h + dW_reg, "head_b": dscores.sum(axis=0)}
    dh = dscores @ head.weights
    ggrads, dX = sequence_backward(trace, dh, gru, backend)
    grads.update(ggrads.as_dict())
    grads["x"] = dX
    return loss, scores, grads


# --------------------------------------------------------------------------- checkpoint

@dataclass
class Checkpoint:
    gru: GruParams
    head: HeadParams
    config: TrainConfig
    adam: AdamState
    epoch: int = 0
    stats_digest: str = ""
    widths: tuple[int, ...] = ()

    def params(self) -> dict[str, np.ndarray]:
        d = self.gru.as_dict()
        d.update(self.head.as_dict())
        return d


CKPT_MAGIC = b"GRUSVMCK"
CKPT_VERSION = 1


def checkpoint_to_bytes(ck: Checkpoint) -> bytes:
    """Versioned little-endian container: magic, version, JSON header, float64 arrays, SHA-256."""
    arrays = [(k, v) for k, v in ck.params().items()]
    arrays += [(f"adam_m/{k}", ck.adam.m[k]) for k in ALL_PARAM_NAMES if k in ck.adam.m]
    arrays += [(f"adam_v/{k}", ck.adam.v[k]) for k in ALL_PARAM_NAMES if k in ck.adam.v]
    header = {
        "config": asdict(ck.config),
        "epoch": ck.epoch,
        "stats_digest": ck.stats_digest,
        "widths": list(ck.widths),
        "adam": {"t": ck.adam.t, "beta1": ck.adam.beta1, "beta2": ck.adam.beta2,
                 "eps": ck.adam.eps},
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in arrays],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hb)) + hb
    body += b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for _, v in arrays)
    return body + hashlib.sha256(body).digest()


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < len(CKPT_MAGIC) + 8 + 32 or not data.startswith(CKPT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic or truncated)")
    body, tag = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != tag:
        raise CheckpointError("checkpoint is corrupt or truncated (checksum mismatch)")
    version, hlen = struct.unpack_from("<II", body, len(CKPT_MAGIC))
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = len(CKPT_MAGIC) + 8
    header = json.loads(body[off:off + hlen])
    off += hlen
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) * 8
        if off + n > len(body):
            raise CheckpointError("checkpoint payload shorter than its header declares")
        arrays[spec["name"]] = np.frombuffer(body, dtype="<f8", count=n // 8,
                                             offset=off).astype(np.float64).reshape(shape)
        off += n
    if off != len(body):
        raise CheckpointError("checkpoint has trailing bytes")
    known = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in header["config"].items() if k in known})
    try:
        gru = GruParams(*(arrays[k] for k in PARAM_NAMES))
        head = HeadParams(arrays["head_W"], arrays["head_b"], cfg.penalty)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint parameters invalid: {e}") from None
    if gru.cell_size != cfg.cell_size or head.cell_size != cfg.cell_size:
        raise CheckpointError(
            f"checkpoint cell_size {cfg.cell_size} disagrees with stored parameter shapes")
    a = header["adam"]
    adam = AdamState(a["beta1"], a["beta2"], a["eps"], a["t"])
    for k in ALL_PARAM_NAMES:
        if f"adam_m/{k}" in arrays:
            adam.m[k] = arrays[f"adam_m/{k}"]
            adam.v[k] = arrays[f"adam_v/{k}"]
    return Checkpoint(gru, head, cfg, adam, header["epoch"], header["stats_digest"],
                      tuple(header["widths"]))


def save_checkpoint(ck: Checkpoint, path):
    path = Path(path)
    data = checkpoint_to_bytes(ck)
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        tmp.write_bytes(data)
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
    return checkpoint_from_bytes(data)


def check_compatible(ck: Checkpoint, data: EncodedDataset):
    if ck.gru.input_width != data.input_width:
        raise CompatibilityError(
            f"checkpoint expects input width {ck.gru.input_width}, data has {data.input_width}")
    if ck.widths and tuple(ck.widths) != tuple(data.widths):
        raise CompatibilityError("checkpoint and data group widths differ")
    if ck.stats_digest and data.stats_digest and ck.stats_digest != data.stats_digest:
        raise CompatibilityError(
            "data was encoded with different preprocessing stats than the checkpoint")


# --------------------------------------------------------------------------- training

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[EpochMetrics] = field(default_factory=list)
    samples_per_epoch: int = 0


def _streams(seed: int):
    init, drop, order = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(drop),
            np.random.default_rng(order))


def init_checkpoint(data: EncodedDataset, cfg: TrainConfig) -> Checkpoint:
    init_rng, _, _ = _streams(cfg.seed)
    gru = GruParams.init(cfg.cell_size, data.input_width, init_rng)
    head = HeadParams.init(cfg.cell_size, init_rng, cfg.penalty)
    params = {**gru.as_dict(), **head.as_dict()}
    return Checkpoint(gru, head, cfg, AdamState.for_params(params), 0, data.stats_digest,
                      tuple(data.widths))


def train(data: EncodedDataset, cfg: TrainConfig, clock=None, backend=None) -> TrainResult:
    """Minibatch Adam training.

    The data is truncated to ``batch_size * (N // batch_size)`` samples per
    epoch. Batches run in file order unless ``cfg.shuffle``. Per-epoch metrics
    come from the training forward passes (dropout active). ``clock`` (e.g.
    ``time.perf_counter``) fills ``wall_time_s``; without it the column is 0
    so logs stay byte-reproducible.
    """
    cfg.validate()
    if len(data) == 0:
        raise ValueError("empty training dataset")
    n_used = cfg.batch_size * (len(data) // cfg.batch_size)
    if n_used == 0:
        raise ValueError(f"dataset of {len(data)} samples is smaller than batch_size {cfg.batch_size}")
    ck = init_checkpoint(data, cfg)
    _, drop_rng, order_rng = _streams(cfg.seed)
    params = ck.params()
    result = TrainResult(ck, [], n_used)
    cumulative = ConfusionReport(0, 0, 0, 0, "accumulated")
    for epoch in range(1, cfg.epochs + 1):
        t0 = clock() if clock else 0.0
        order = order_rng.permutation(len(data))[:n_used] if cfg.shuffle else np.arange(n_used)
        report = ConfusionReport(0, 0, 0, 0)
        loss_sum = 0.0
        for start in range(0, n_used, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            X = build_inputs(data.indices[idx], data.widths)
            y = data.labels[idx]
            loss, scores, grads = network_loss(ck.gru, ck.head, cfg.head, X, y,
                                               cfg.dropout_keep, "train", drop_rng, backend)
            adam_step(params, grads, ck.adam, cfg.learning_rate)
            loss_sum += loss
            report = report + ConfusionReport.from_predictions(y, predict(scores))
        cumulative = cumulative + report
        ck.epoch = epoch
        m = EpochMetrics(epoch, loss_sum / (n_used // cfg.batch_size), report, cumulative,
                         (clock() - t0) if clock else 0.0)
        log.info("epoch %d loss %.6g accuracy %.4f", epoch, m.loss, m.accuracy)
        result.log.append(m)
    return result


@dataclass
class EvalResult:
    report: ConfusionReport
    accumulated: ConfusionReport
    loss: float
    n_samples: int
    wall_time_s: float = 0.0


def evaluate(data: EncodedDataset, ck: Checkpoint, passes: int = 1, truncate: bool = False,
             batch_size: int = 1024, clock=None, backend=None) -> EvalResult:
    """Eval-mode forward passes (no dropout) over ``data``.

    ``report`` holds one pass; ``accumulated`` sums all ``passes`` passes.
    ``truncate`` drops the tail that does not fill a training-size batch.
    """
    check_compatible(ck, data)
    if passes < 1:
        raise ValueError("passes must be >= 1")
    t0 = clock() if clock else 0.0
    n = len(data)
    if truncate:
        n = ck.config.batch_size * (n // ck.config.batch_size)
    reg = 0.5 * float((ck.head.weights ** 2).sum()) if ck.config.head == "svm" else 0.0
    accumulated = ConfusionReport(0, 0, 0, 0, "accumulated")
    for _ in range(passes):
        report = ConfusionReport(0, 0, 0, 0)
        data_loss = 0.0
        for start in range(0, n, batch_size):
            sl = slice(start, min(start + batch_size, n))
            X = build_inputs(data.indices[sl], data.widths)
            y = data.labels[sl]
            loss, scores, _ = network_loss(ck.gru, ck.head, ck.config.head, X, y,
                                           backend=backend, need_grads=False)
            data_loss += (loss - reg) * len(y)
            report = report + ConfusionReport.from_predictions(y, predict(scores))
        accumulated = accumulated + report
    mean_loss = data_loss / n + reg if n else math.nan
    elapsed = (clock() - t0) if clock else 0.0
    return EvalResult(report, accumulated, mean_loss, n, elapsed)


def report_to_text(res: EvalResult) -> str:
    cols = ("scope", "predictions", "loss", "accuracy", "tp", "tn", "fp", "fn",
            "tpr", "tnr", "fpr", "fnr")
    out = ["\t".join(cols)]
    for r in (res.report, res.accumulated):
        row = r.as_row()
        vals = [r.total, res.loss] + [row[c] for c in cols[3:]]
        out.append("\t".join([r.scope] + [fmt(v) for v in vals]))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- comparison

COMPARE_ROWS = (
    "No. of data points -- Training",
    "No. of data points -- Testing",
    "Epochs",
    "Accuracy -- Training",
    "Accuracy -- Testing",
    "Loss -- Training",
    "Loss -- Testing",
    "Run time -- Training",
    "Run time -- Testing",
    "No. of false positives -- Training",
    "No. of false positives -- Testing",
    "No. of false negatives -- Training",
    "No. of false negatives -- Testing",
    "No. of false positives per epoch -- Training",
    "No. of false positives per epoch -- Testing",
    "No. of false negatives per epoch -- Training",
    "No. of false negatives per epoch -- Testing",
    "True positive rate -- Training",
    "True negative rate -- Training",
    "False positive rate -- Training",
    "False negative rate -- Training",
    "True positive rate -- Testing",
    "True negative rate -- Testing",
    "False positive rate -- Testing",
    "False negative rate -- Testing",
)


def compare_column(train_data, test_data, cfg: TrainConfig, clock=None, backend=None):
    """Train one model and evaluate it; returns ``(column values, TrainResult, EvalResult)``.

    Training-side FP/FN are summed over epochs, testing-side over ``epochs``
    evaluation passes; the per-epoch rows give the single-pass counts.
    """
    tr = train(train_data, cfg, clock, backend)
    ev = evaluate(test_data, tr.checkpoint, passes=max(cfg.epochs, 1), truncate=True,
                  clock=clock, backend=backend)
    last = tr.log[-1] if tr.log else None
    rt = last.report if last else ConfusionReport(0, 0, 0, 0)
    cum = last.cumulative if last else ConfusionReport(0, 0, 0, 0)
    train_time = sum(m.wall_time_s for m in tr.log) if clock else None
    col = {
        "No. of data points -- Training": tr.samples_per_epoch,
        "No. of data points -- Testing": ev.n_samples,
        "Epochs": cfg.epochs,
        "Accuracy -- Training": rt.accuracy,
        "Accuracy -- Testing": ev.report.accuracy,
        "Loss -- Training": last.loss if last else None,
        "Loss -- Testing": ev.loss,
        "Run time -- Training": train_time,
        "Run time -- Testing": ev.wall_time_s if clock else None,
        "No. of false positives -- Training": cum.fp,
        "No. of false positives -- Testing": ev.accumulated.fp,
        "No. of false negatives -- Training": cum.fn,
        "No. of false negatives -- Testing": ev.accumulated.fn,
        "No. of false positives per epoch -- Training": rt.fp,
        "No. of false positives per epoch -- Testing": ev.report.fp,
        "No. of false negatives per epoch -- Training": rt.fn,
        "No. of false negatives per epoch -- Testing": ev.report.fn,
        "True positive rate -- Training": rt.tpr,
        "True negative rate -- Training": rt.tnr,
        "False positive rate -- Training": rt.fpr,
        "False negative rate -- Training": rt.fnr,
        "True positive rate -- Testing": ev.report.tpr,
        "True negative rate -- Testing": ev.report.tnr,
        "False positive rate -- Testing": ev.report.fpr,
        "False negative rate -- Testing": ev.report.fnr,
    }
    return col, tr, ev


def compare_table(columns: dict[str, dict]) -> str:
    names = list(columns)
    out = ["\t".join(["Parameter"] + names)]
    for row in COMPARE_ROWS:
        out.append("\t".join([row] + [fmt(columns[n][row]) for n in names]))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_trial: list[float]
    worst_param: str = ""


def rel_error(a, n, floor: float = 1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries that are zero analytically (and so only carry
    finite-difference round-off) from dividing by ~0.
    """
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(cell_size: int = 8, seq_len: int = 5, input_width: int = 10,
                   trials: int = 8, head: str = "svm", batch: int = 4, seed: int = 0,
                   step: float = 1e-5, keep_prob: float = 0.8, C: float = 0.5,
                   backend=None) -> GradCheckReport:
    """Compare analytic full-network gradients with central differences.

    Every trial draws fresh parameters, dense random inputs, labels and one
    dropout mask, then checks all GRU/head parameters and the inputs.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if cell_size > 16 or seq_len > 8:
        raise ValueError("gradient check limited to cell_size <= 16 and seq_len <= 8")
    root = np.random.SeedSequence(seed)
    per_trial = []
    worst, worst_name = 0.0, ""
    for ts in root.spawn(trials):
        rng = np.random.default_rng(ts)
        gru = GruParams.init(cell_size, input_width, rng, scale=0.5)
        for b in (gru.b_z, gru.b_r, gru.b_h):
            b[:] = rng.uniform(-0.5, 0.5, cell_size)
        hp = HeadParams(rng.uniform(-1, 1, (2, cell_size)), rng.uniform(-0.5, 0.5, 2), C)
        X = rng.normal(size=(batch, seq_len, input_width))
        y = rng.integers(0, 2, batch)
        mask_seed = int(rng.integers(2**32))

        def f(x=X):
            return network_loss(gru, hp, head, x, y, keep_prob, "train",
                                np.random.default_rng(mask_seed), backend, need_grads=False)[0]

        _, _, grads = network_loss(gru, hp, head, X, y, keep_prob, "train",
                                   np.random.default_rng(mask_seed), backend)
        targets = {**gru.as_dict(), **hp.as_dict(), "x": X}
        trial_worst = 0.0
        for name, arr in targets.items():
            num = np.empty_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                i = it.multi_index
                old = arr[i]
                arr[i] = old + step
                fp = f()
                arr[i] = old - step
                fm = f()
                arr[i] = old
                num[i] = (fp - fm) / (2 * step)
            err = float(rel_error(grads[name], num).max())
            if err > trial_worst:
                trial_worst = err
            if err > worst:
                worst, worst_name = err, name
        per_trial.append(trial_worst)
    return GradCheckReport(worst, per_trial, worst_name)
