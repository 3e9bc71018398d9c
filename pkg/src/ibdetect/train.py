"""Training loop, run configuration and run artifacts."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .losses import LossWeights, global_information_loss, kl_sum, lil_from_kl_sum, total_loss
from .metrics import MetricsRecord, disentanglement_report, evaluate_scores
from .model import (
    ModelConfig, ModelParams, full_forward, fuse, heads_from_locals, init_model, masked_logits, predict_proba, with_frozen,
)
from .optim import AdamState, adam_step, lr_schedule
from .synth import DEFAULT_SHIFT, DEFAULT_SPEC, FactorSpec, Shift, SynthDataset, make_benchmark, oversample_balance

log = logging.getLogger(__name__)

RUN_FORMAT_VERSION = 1
SCHEDULERS = ("cosine", "step_half_every_5")
ROUTINGS = ("module", "all")
HISTORY_COLUMNS = [
    "epoch", "lr", "ce", "lil", "gil", "total", "effective_alpha", "effective_beta",
    "train_acc", "val_acc", "val_auc", "val_logloss",
]


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, history: list[dict]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    epochs: int = 20
    batch_size: int = 128
    scheduler: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    weight_mode: str = "auto"
    alpha: float = 1.0
    beta: float = 1.0
    enable_lil: bool = True
    enable_gil: bool = True
    kappa: float = 20.0
    joint_ce: bool = True
    routing: str = "module"
    oversample: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}, got {self.scheduler!r}")
        if self.weight_mode not in ("fixed", "auto"):
            raise ValueError(f"weight_mode must be 'fixed' or 'auto', got {self.weight_mode!r}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.routing not in ROUTINGS:
            raise ValueError(f"routing must be one of {ROUTINGS}, got {self.routing!r}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class DataConfig:
    spec: FactorSpec = field(default_factory=lambda: DEFAULT_SPEC)
    shift: Shift = DEFAULT_SHIFT
    n_train: int = 20000
    n_val: int = 5000
    n_test: int = 5000
    seed: int | None = None  # None: follow the training seed

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(), "shift": self.shift.to_dict(),
            "n_train": self.n_train, "n_val": self.n_val, "n_test": self.n_test, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataConfig":
        shift = dict(d["shift"])
        if isinstance(shift.get("amplitude_scale"), list):
            shift["amplitude_scale"] = tuple(shift["amplitude_scale"])
        return cls(FactorSpec.from_dict(d["spec"]), Shift(**shift), d["n_train"], d["n_val"], d["n_test"], d["seed"])


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    model: dict = field(default_factory=dict)  # ModelConfig fields except input_dim

    def model_config(self) -> ModelConfig:
        return ModelConfig(input_dim=self.data.spec.input_dim, **self.model)

    @property
    def data_seed(self) -> int:
        return self.train.seed if self.data.seed is None else self.data.seed

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        return {"train": asdict(self.train), "data": self.data.to_dict(), "model": self.model_config().to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        model = {k: v for k, v in d["model"].items() if k != "input_dim"}
        return cls(TrainConfig(**d["train"]), DataConfig.from_dict(d["data"]), model)


@dataclass
class TrainResult:
    params: ModelParams
    weights: LossWeights
    history: list[dict]
    manifest: dict

    def extra_tensors(self) -> dict[str, np.ndarray]:
        return {t.name: t.values for t in self.weights.parameters()}


def step_losses(params: ModelParams, weights: LossWeights, config: TrainConfig, xb, yb):
    """Forward pass and combined objective for one batch.

    The cross-entropy term covers the global head, plus the joint head when
    ``joint_ce`` is set and the averaged mask heads in ``per_mask_heads`` mode
    (on detached features), so every predicted distribution is fit to the label.

    ``routing="module"``: the local information loss only updates the local
    blocks (the heads that realise the predicted distributions are held
    fixed for it) and the global information loss only updates the fusion
    layer and global head (the joint prediction is its fixed target).
    ``routing="all"``: every term reaches every upstream parameter.
    """
    out = full_forward(params, xb)
    ce = ad.cross_entropy_from_logits(out.global_logits, yb)
    if config.joint_ce:
        ce = ad.add(ce, ad.cross_entropy_from_logits(out.joint_logits, yb))
    if params.config.mask_mode == "per_mask_heads":
        # the mask heads are fit on fixed features: they estimate p(y | Z without z_i)
        # and must not shape the blocks through their own cross-entropy
        mask_ce = [ad.cross_entropy_from_logits(m, yb) for m in masked_logits(params, out.joint.detach())]
        acc = mask_ce[0]
        for term in mask_ce[1:]:
            acc = ad.add(acc, term)
        ce = ad.add(ce, ad.mul(acc, 1.0 / len(mask_ce)))
    lil = kl = gil = None
    if config.enable_lil:
        if config.routing == "module":
            view = heads_from_locals(with_frozen(params, ("joint_head", "mask_head")), out.locals)
            kl = kl_sum(view.joint_target, view.masked_logits)
        else:
            kl = kl_sum(out.joint_target, out.masked_logits)
        lil = lil_from_kl_sum(kl, config.kappa)
    if config.enable_gil:
        if config.routing == "module":
            gil = global_information_loss(out.joint_logits.detach(), fuse(params, out.joint.detach())[1])
        else:
            gil = global_information_loss(out.joint_target, out.global_logits)
    total, breakdown = total_loss(ce, lil, gil, weights, kl)
    return out, total, breakdown


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def train(config: TrainConfig, model_config: ModelConfig, dataset: SynthDataset, *, progress=None) -> TrainResult:
    """Fit on the ``train`` split, score ``val`` after each epoch.

    Deterministic given ``config.seed``. Returns parameters rounded to float32
    so that a checkpoint round-trip reproduces them exactly.
    """
    data = oversample_balance(dataset, config.seed) if config.oversample else dataset
    train_set, val_set = data.subset("train"), data.subset("val")
    if len(train_set) == 0:
        raise ValueError("dataset has no train split")
    params = init_model(model_config, config.seed)
    weights = LossWeights(config.weight_mode, config.alpha, config.beta)
    trainable = params.parameters() + weights.parameters()
    state = AdamState(config.beta1, config.beta2, config.eps)
    n = len(train_set)
    steps_per_epoch = -(-n // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    history: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        sums = {k: [] for k in ("ce", "lil", "gil", "total")}
        correct = 0
        lr_t = config.lr
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            xb, yb = train_set.inputs[rows], train_set.labels[rows]
            lr_t = lr_schedule(config, step, total_steps)
            try:
                with ad.Tape() as tape:
                    out, loss, bd = step_losses(params, weights, config, xb, yb)
                if not np.isfinite(bd.total):
                    raise FloatingPointError("total loss is not finite")
                tape.backward(loss, trainable)
                adam_step(trainable, [p.grad for p in trainable], state, lr_t)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"diverged at epoch {epoch + 1}, step {step}: {exc}", history) from exc
            for k in sums:
                sums[k].append(getattr(bd, k))
            correct += int(np.sum(np.argmax(out.global_logits.values, axis=1) == yb))
            step += 1
        row = {
            "epoch": epoch + 1,
            "lr": lr_t,
            "ce": _mean(sums["ce"]),
            "lil": _mean(sums["lil"]),
            "gil": _mean(sums["gil"]),
            "total": _mean(sums["total"]),
            "effective_alpha": weights.effective("lil") if config.enable_lil else None,
            "effective_beta": weights.effective("gil") if config.enable_gil else None,
            "train_acc": correct / n,
        }
        if len(val_set):
            m = evaluate_scores(predict_proba(params, val_set.inputs), val_set.labels)
            row.update(val_acc=m.accuracy, val_auc=m.auc, val_logloss=m.logloss)
        else:
            row.update(val_acc=None, val_auc=None, val_logloss=None)
        history.append(row)
        if progress is not None:
            progress(row)
        log.debug("epoch %d: %s", epoch + 1, row)
    for t in trainable:
        t.values = t.values.astype(np.float32).astype(np.float64)
        t.grad = None
    manifest = {"seed": config.seed, "steps": total_steps}
    return TrainResult(params, weights, history, manifest)


def evaluate(params: ModelParams, dataset: SynthDataset, *, with_mi: bool = True, groups: bool = False, bins: int = 2) -> MetricsRecord:
    scores = predict_proba(params, dataset.inputs)
    record = evaluate_scores(scores, dataset.labels, dataset.group_ids if groups else None)
    if with_mi:
        rep = disentanglement_report(params, dataset.inputs, dataset.labels, bins)
        record.mi_matrix = rep.mi_matrix.tolist()
        record.label_mi = rep.label_mi.tolist()
        record.mean_off_diagonal_mi = rep.mean_off_diagonal
        if any(rep.degenerate):
            record.extra["degenerate_blocks"] = [i for i, d in enumerate(rep.degenerate) if d]
    return record


def build_data(run: RunConfig) -> tuple[SynthDataset, SynthDataset]:
    d = run.data
    return make_benchmark(d.spec, d.shift, d.n_train, d.n_val, d.n_test, run.data_seed)


@dataclass
class RunOutcome:
    run: RunConfig
    result: TrainResult
    val: MetricsRecord
    test: MetricsRecord
    fingerprint: str


def run_experiment(run: RunConfig, *, data=None, progress=None) -> RunOutcome:
    """Generate data, train, and score the val split and the shifted test set."""
    data, test = data if data is not None else build_data(run)
    result = train(run.train, run.model_config(), data, progress=progress)
    val = evaluate(result.params, data.subset("val"))
    test_metrics = evaluate(result.params, test)
    return RunOutcome(run, result, val, test_metrics, data.fingerprint())


# artifacts -----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([_fmt(row.get(c)) for c in HISTORY_COLUMNS])
    return buf.getvalue()


def mi_matrix_csv(record: MetricsRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(record.mi_matrix or [])
    w.writerow(["block"] + [f"z{j + 1}" for j in range(n)] + ["MI_with_label"])
    for i in range(n):
        w.writerow([f"z{i + 1}"] + [repr(float(v)) for v in record.mi_matrix[i]] + [repr(float(record.label_mi[i]))])
    return buf.getvalue()


def run_manifest(outcome: RunOutcome, started: float) -> dict:
    return {
        "format_version": RUN_FORMAT_VERSION,
        "config": outcome.run.to_dict(),
        "dataset_fingerprint": outcome.fingerprint,
        "seed": outcome.run.train.seed,
        "wall_clock": {
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
            "seconds": round(time.time() - started, 3),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "metrics": {"val": outcome.val.to_dict(), "shifted": outcome.test.to_dict()},
    }


def write_run(outcome: RunOutcome, out_dir, started: float) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .checkpoint import save_checkpoint

    res = outcome.result
    (out / "history.csv").write_text(history_csv(res.history))
    save_checkpoint(
        res.params,
        {"config": outcome.run.to_dict(), "seed": outcome.run.train.seed},
        out / "checkpoint",
        extra=res.extra_tensors(),
    )
    metrics = {"val": outcome.val.to_dict(), "shifted": outcome.test.to_dict()}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out / "mi_matrix.csv").write_text(mi_matrix_csv(outcome.val))
    (out / "run_manifest.json").write_text(json.dumps(run_manifest(outcome, started), indent=2, sort_keys=True) + "\n")
