"""Training loop, trial records, and plateau-driven learning-rate decay.

A trial is deterministic given its config: the data seed fixes the task,
the trial seed fixes initialization and batch order, and all arithmetic
is single-threaded float64. Divergence (non-finite loss or parameters)
marks the trial instead of crashing it. For the multiplicative rules the
loop asserts every epoch that no weight has changed sign since
initialization, and on the compressed path that every weight is still
exactly on its ladder.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import lns as lns_mod
from ..nets import (CLASSIFICATION, Dataset, Mlp, backward, batch_loss, forward,
                    init_scales, random_mlp)
from ..optim import (BaselineState, MadamState, adam_step, exp_sign_step, lars_step,
                     madam_step, mult_sign_step, sgd_step)
from ..tensor import frobenius_norm
from .config import ConfigError, ExperimentConfig
from .datasets import generate_dataset, load_dataset

MULTIPLICATIVE_VARIANTS = ("madam", "mult_sign", "exp_sign")


def plateau_detector(history, patience: int = 5, min_rel_improvement: float = 1e-3) -> bool:
    """True when the last ``patience`` evals all failed to improve the best.

    An eval improves when it beats the best seen before it by a relative
    ``min_rel_improvement``. The first eval only establishes the
    baseline, so a constant history [c, c, ..., c] signals once the
    baseline is followed by ``patience`` flat evals.
    """
    if patience < 1:
        raise ValueError(f"patience must be >= 1, got {patience}")
    if min_rel_improvement < 0:
        raise ValueError(f"min_rel_improvement must be >= 0, got {min_rel_improvement}")
    det = PlateauDetector(patience, min_rel_improvement)
    signal = False
    for value in history:
        signal = det.update(float(value))
    return signal


class PlateauDetector:
    """Incremental form of ``plateau_detector``; ``update`` returns the signal."""

    def __init__(self, patience: int = 5, min_rel_improvement: float = 1e-3):
        self.patience = patience
        self.min_rel_improvement = min_rel_improvement
        self.best = math.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        if math.isinf(self.best):
            self.best = value
            return False
        if value < self.best - self.min_rel_improvement * abs(self.best):
            self.best = value
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            self.stale = 0
            return True
        return False


@dataclass(frozen=True)
class EpochRecord:
    """Metrics logged at the end of one epoch (epoch 0 is the initial eval)."""

    epoch: int
    train_loss: float
    eval_loss: float
    eval_accuracy: float | None
    eta: float
    cos_gamma: tuple[float, ...]
    weight_norms: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "eval_loss": self.eval_loss,
            "eval_accuracy": self.eval_accuracy,
            "eta": self.eta,
            "cos_gamma": list(self.cos_gamma),
            "weight_norms": list(self.weight_norms),
        }


@dataclass
class TrialRecord:
    """One trial's config fingerprint, metric series, and outcome."""

    config_hash: str
    seed: int
    task_kind: str
    metric_name: str
    epochs: list = field(default_factory=list)
    wall_time_s: float = 0.0
    final_metric: float = math.inf
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "task_kind": self.task_kind,
            "metric_name": self.metric_name,
            "epochs": [e.to_dict() for e in self.epochs],
            "wall_time_s": self.wall_time_s,
            "final_metric": None if math.isinf(self.final_metric) else self.final_metric,
            "diverged": self.diverged,
        }


def load_task(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Train/test split for the configured task, shared across trial seeds."""
    task = cfg.task
    n = task.n_train + task.n_test
    if task.kind == "csv":
        ds = load_dataset(task.params["path"])
        if len(ds) < n:
            raise ConfigError(f"csv has {len(ds)} rows, need {n}")
    else:
        ds = generate_dataset(task.kind, n, task.noise, task.seed, **task.params)
    return ds.subset(slice(0, task.n_train)), ds.subset(slice(task.n_train, n))


def model_widths(cfg: ExperimentConfig, train: Dataset, test: Dataset | None = None) -> list[int]:
    d_in = train.inputs.shape[1]
    if train.kind == CLASSIFICATION:
        d_out = int(np.max(train.targets)) + 1
        if test is not None:
            d_out = max(d_out, int(np.max(test.targets)) + 1)
    else:
        d_out = train.targets.shape[1]
    return [d_in] + list(cfg.model.hidden) + [d_out]


def _accuracy(net: Mlp, ds: Dataset) -> float:
    out = forward(net, ds.inputs)[-1]
    return float(np.mean(np.argmax(out, axis=1) == ds.targets))


def _sigma_stars(cfg: ExperimentConfig, widths: list[int]) -> list[float]:
    return [cfg.optimizer.sigma_multiplier * s for s in init_scales(widths)]


class _Trainer:
    """Owns the parameter state for one trial; float or ladder-backed."""

    def __init__(self, cfg: ExperimentConfig, widths: list[int], rng: np.random.Generator):
        self.cfg = cfg
        self.variant = cfg.optimizer.variant
        opt = cfg.optimizer
        self.eta = opt.eta
        template = random_mlp(widths, rng, leak=cfg.model.leak)
        sigma = _sigma_stars(cfg, widths)
        self.lns_tensors = None
        if cfg.lns is not None:
            specs = [lns_mod.LnsSpec(cfg.lns.bits, cfg.lns.eta0, s) for s in sigma]
            self.lns_tensors = [
                lns_mod.ladder_init(spec, p.shape, rng)
                for spec, p in zip(specs, template.param_list())
            ]
            params = [lns_mod.decode(t) for t in self.lns_tensors]
        else:
            params = template.param_list()
        self.net = template.with_params(params)
        self.init_signs = [np.sign(p) for p in params]
        if self.variant == "madam":
            self.state = MadamState.init(params, sigma, eta=opt.eta,
                                         eta_star=opt.resolved_eta_star(), beta=opt.beta)
        elif self.variant in ("sgd", "adam"):
            self.state = BaselineState.init(self.variant, params, lr=opt.eta,
                                            momentum=opt.momentum, beta1=opt.beta1,
                                            beta2=opt.beta2, eps=opt.eps, l2=opt.l2)
        else:
            self.state = None

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.param_list()

    def step(self, batch: Dataset) -> float:
        """One minibatch update; returns the batch loss before the step."""
        bundle = backward(self.net, batch)
        grads = bundle.flat()
        if self.lns_tensors is not None:
            self.state, self.lns_tensors = lns_mod.quantized_madam_step(
                self.state, self.lns_tensors, grads)
            params = [lns_mod.decode(t) for t in self.lns_tensors]
        elif self.variant == "madam":
            self.state, params = madam_step(self.state, self.params, grads)
        elif self.variant == "mult_sign":
            params = mult_sign_step(self.params, grads, self.eta)
        elif self.variant == "exp_sign":
            params = exp_sign_step(self.params, grads, self.eta)
        elif self.variant == "sgd":
            self.state, params = sgd_step(self.state, self.params, grads)
        elif self.variant == "adam":
            self.state, params = adam_step(self.state, self.params, grads)
        elif self.variant == "lars":
            params = lars_step(self.params, grads, self.eta)
        else:
            raise ConfigError(f"unknown optimizer variant {self.variant!r}")
        if not all(np.all(np.isfinite(p)) for p in params):
            return math.nan
        self.net = self.net.with_params(params)
        return bundle.loss_value

    def decay_eta(self) -> None:
        """Divide eta by the decay factor; ladder runs floor at eta0."""
        factor = self.cfg.schedule.decay_factor
        new_eta = self.eta / factor
        if self.cfg.lns is not None:
            floor = self.cfg.lns.resolved_floor()
            new_eta = max(new_eta, floor)
            rungs = max(1, round(new_eta / self.cfg.lns.eta0))
            new_eta = rungs * self.cfg.lns.eta0
        if new_eta == self.eta:
            return
        self.eta = new_eta
        if self.variant == "madam":
            self.state = self.state.with_eta(new_eta)
        elif self.variant in ("sgd", "adam"):
            self.state = replace(self.state, lr=new_eta)

    def check_sign_freeze(self) -> None:
        """No weight may cross to the opposite sign. Underflow to exact 0 is
        tolerated: at extreme eta a persistently shrunk float64 magnitude can
        leave the subnormal range, which kills the weight but never flips it."""
        if self.variant not in MULTIPLICATIVE_VARIANTS:
            return
        for init_s, p in zip(self.init_signs, self.params):
            s = np.sign(p)
            if np.any(s * init_s < 0):
                raise RuntimeError("sign pattern changed under a multiplicative rule")

    def check_on_ladder(self) -> None:
        if self.lns_tensors is None:
            return
        for t in self.lns_tensors:
            if t.levels.dtype != np.int64 or np.any(t.levels < 0) \
                    or np.any(t.levels > t.spec.max_level):
                raise RuntimeError("weights left the ladder")


def _epoch_metrics(trainer: _Trainer, train: Dataset, test: Dataset,
                   epoch: int) -> EpochRecord | None:
    """Full-batch diagnostics; None when anything is non-finite."""
    net = trainer.net
    train_loss = batch_loss(net, train)
    eval_loss = batch_loss(net, test)
    if not (math.isfinite(train_loss) and math.isfinite(eval_loss)):
        return None
    acc = _accuracy(net, test) if test.kind == CLASSIFICATION else None
    bundle = backward(net, train)
    gammas = []
    norms = []
    for layer, (wg, _) in zip(net.layers, bundle.per_layer):
        wn = frobenius_norm(layer.weight)
        gn = frobenius_norm(wg)
        norms.append(wn)
        if wn == 0.0 or gn == 0.0:
            gammas.append(0.0)
        else:
            c = float(np.dot(np.abs(wg).ravel(), np.abs(layer.weight).ravel()) / (gn * wn))
            gammas.append(float(np.clip(c, 0.0, 1.0)))
    return EpochRecord(epoch=epoch, train_loss=train_loss, eval_loss=eval_loss,
                       eval_accuracy=acc, eta=trainer.eta,
                       cos_gamma=tuple(gammas), weight_norms=tuple(norms))


def train(cfg: ExperimentConfig) -> TrialRecord:
    """Run one trial end to end and return its record.

    When ``cfg.out_dir`` is set, per-epoch records are appended to
    ``metrics.jsonl`` as they happen, and a ``summary.json`` plus a final
    checkpoint are written at the end.
    """
    started = time.perf_counter()
    train_ds, test_ds = load_task(cfg)
    widths = model_widths(cfg, train_ds, test_ds)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    trainer = _Trainer(cfg, widths, rng)

    record = TrialRecord(
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        task_kind=cfg.task.kind,
        metric_name="test_error" if train_ds.kind == CLASSIFICATION else "test_loss",
    )
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    metrics_fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")

    def log_epoch(rec: EpochRecord) -> None:
        record.epochs.append(rec)
        if metrics_fh is not None:
            metrics_fh.write(json.dumps(rec.to_dict()) + "\n")
            metrics_fh.flush()

    detector = PlateauDetector(cfg.schedule.patience, cfg.schedule.min_rel_improvement)
    n_train = len(train_ds)
    bs = cfg.schedule.batch_size
    try:
        with np.errstate(all="ignore"):
            initial = _epoch_metrics(trainer, train_ds, test_ds, epoch=0)
            if initial is None:
                record.diverged = True
            else:
                log_epoch(initial)
                detector.update(initial.eval_loss)
            for epoch in range(1, cfg.schedule.epochs + 1):
                if record.diverged:
                    break
                order = rng.permutation(n_train)
                for start in range(0, n_train, bs):
                    loss = trainer.step(train_ds.subset(order[start:start + bs]))
                    if not math.isfinite(loss):
                        record.diverged = True
                        break
                if record.diverged:
                    break
                trainer.check_sign_freeze()
                trainer.check_on_ladder()
                rec = _epoch_metrics(trainer, train_ds, test_ds, epoch)
                if rec is None:
                    record.diverged = True
                    break
                log_epoch(rec)
                if cfg.schedule.decay == "plateau" and detector.update(rec.eval_loss):
                    trainer.decay_eta()
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    record.wall_time_s = time.perf_counter() - started
    if not record.diverged and record.epochs:
        last = record.epochs[-1]
        if record.metric_name == "test_error":
            record.final_metric = 1.0 - float(last.eval_accuracy)
        else:
            record.final_metric = last.eval_loss

    if out_dir is not None:
        (out_dir / "summary.json").write_text(
            json.dumps(record.to_dict(), indent=2) + "\n", encoding="utf-8")
        _save_checkpoint(trainer, out_dir)
    return record


def _save_checkpoint(trainer: _Trainer, out_dir: Path) -> None:
    names = trainer.net.param_names()
    if trainer.lns_tensors is not None:
        entries = [
            lns_mod.CheckpointEntry(name, t.reshape(-1), np.asarray(g2).ravel())
            for name, t, g2 in zip(names, trainer.lns_tensors, trainer.state.gbar_sq)
        ]
        (out_dir / "checkpoint.lns").write_bytes(lns_mod.write_checkpoint(entries))
    else:
        arrays = {name: p for name, p in zip(names, trainer.params)}
        if trainer.variant == "madam":
            for name, g2 in zip(names, trainer.state.gbar_sq):
                arrays[f"gbar_sq/{name}"] = g2
        np.savez(out_dir / "checkpoint.npz", **arrays)
