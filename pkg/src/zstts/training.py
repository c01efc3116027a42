"""Teacher-forced training with Adam, the Noam schedule, checkpoints and exact resume.

Loss: ``lambda_mel * MAE(log-mel) + lambda_dur * MSE(log(d + 1))``. Padded
positions are masked out and the means are pooled over every valid entry
in the batch (T * M mel entries, P duration entries).

Batch ``k`` is drawn from ``default_rng([seed, k])``, so the batch sequence
depends only on the seed and the step number; together with the stored
Adam moments this makes resumed runs bit-identical to uninterrupted ones.

Metric log: tab-separated, one header row, appended to ``metrics.tsv`` with
columns ``step lr loss mel_mae dur_mse val_loss val_mel_mae val_dur_mse``
(validation columns empty on steps without validation).
"""

from __future__ import annotations

import logging
import math
from contextlib import nullcontext
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .acoustic import AcousticModel, Batch, ModelConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Utterance
from .errors import CheckpointError, ConfigError, InvalidArgumentError, TrainingDivergedError
from .numerics import AdamState, adam_step, noam_lr

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "lr", "loss", "mel_mae", "dur_mse", "val_loss", "val_mel_mae", "val_dur_mse"]


@dataclass
class TrainConfig:
    model: ModelConfig
    batch_size: int = 16
    max_steps: int = 2000
    warmup: int = 400
    lr_scale: float = 1.0
    seed: int = 0
    lambda_mel: float = 1.0
    lambda_dur: float = 1.0
    val_interval: int = 200
    checkpoint_interval: int = 500
    checkpoint_dir: str | None = None
    holdout_per_speaker: int = 1
    threads: int = 1

    def validate(self):
        self.model.validate()
        if self.batch_size < 1 or self.warmup < 1 or self.val_interval < 1 or self.checkpoint_interval < 1:
            raise ConfigError("batch_size, warmup, val_interval and checkpoint_interval must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.lambda_mel < 0 or self.lambda_dur < 0 or (self.lambda_mel == 0 and self.lambda_dur == 0):
            raise ConfigError("loss weights must be >= 0 and not both zero")
        if self.holdout_per_speaker < 0:
            raise ConfigError("holdout_per_speaker must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in known and k != "model"}
        return cls(model=ModelConfig.from_dict(d["model"]), **kw)


@dataclass
class LossValue:
    total: float
    mel_mae: float
    dur_mse: float


def compute_loss(pred_mel, target_mel, pred_log_dur, target_log_dur, lambda_mel=1.0, lambda_dur=1.0,
                 tmask=None, pmask=None) -> LossValue:
    """Masked ``lambda_mel * MAE(mel) + lambda_dur * MSE(log-durations)``."""
    loss, _, _ = _loss_and_grads(pred_mel, target_mel, pred_log_dur, target_log_dur, lambda_mel, lambda_dur, tmask, pmask)
    return loss


def _loss_and_grads(pred_mel, target_mel, pred_ld, target_ld, lam_mel, lam_dur, tmask=None, pmask=None):
    pred_mel, target_mel = np.asarray(pred_mel), np.asarray(target_mel)
    pred_ld, target_ld = np.asarray(pred_ld), np.asarray(target_ld)
    if pred_mel.shape != target_mel.shape:
        raise InvalidArgumentError(f"mel shapes differ: {pred_mel.shape} vs {target_mel.shape}")
    if pred_ld.shape != target_ld.shape:
        raise InvalidArgumentError(f"duration shapes differ: {pred_ld.shape} vs {target_ld.shape}")
    if tmask is None:
        mel_w = np.ones(pred_mel.shape, dtype=pred_mel.dtype)
    else:
        mel_w = np.broadcast_to(tmask[..., None], pred_mel.shape).astype(pred_mel.dtype)
    dur_w = np.ones(pred_ld.shape, dtype=pred_ld.dtype) if pmask is None else pmask.astype(pred_ld.dtype)
    n_mel = max(float(mel_w.sum()), 1.0)
    n_dur = max(float(dur_w.sum()), 1.0)
    diff_mel = (pred_mel - target_mel) * mel_w
    diff_dur = (pred_ld - target_ld) * dur_w
    mae = float(np.abs(diff_mel).sum() / n_mel)
    mse = float((diff_dur * diff_dur).sum() / n_dur)
    total = lam_mel * mae + lam_dur * mse
    dmel = (lam_mel / n_mel) * np.sign(diff_mel)
    dld = (2 * lam_dur / n_dur) * diff_dur
    return LossValue(total, mae, mse), dmel.astype(pred_mel.dtype), dld.astype(pred_ld.dtype)


def holdout_split(utts: list[Utterance], per_speaker: int) -> tuple[list[Utterance], list[Utterance]]:
    """Hold out the last ``per_speaker`` utterances (by id) of each speaker."""
    by_spk: dict[str, list[Utterance]] = {}
    for u in sorted(utts, key=lambda u: u.utt_id):
        by_spk.setdefault(u.speaker_id, []).append(u)
    train, held = [], []
    for spk in sorted(by_spk):
        group = by_spk[spk]
        k = min(per_speaker, len(group) - 1)
        train.extend(group[: len(group) - k])
        held.extend(group[len(group) - k :])
    return train, held


class Trainer:
    def __init__(self, cfg: TrainConfig, train_set: list[Utterance], val_set: list[Utterance] | None = None):
        cfg.validate()
        if not train_set:
            raise InvalidArgumentError("training set is empty")
        self.cfg = cfg
        self.train_set = sorted(train_set, key=lambda u: u.utt_id)
        self.val_set = sorted(val_set or [], key=lambda u: u.utt_id)
        self.model = AcousticModel(cfg.model, seed=cfg.seed)
        self.params = self.model.parameters()
        self.adam = AdamState()
        self.adam.ensure(self.params)
        self.step = 0
        self.best_val = math.inf
        self.history: list[dict] = []

    # -- checkpoint --------------------------------------------------------

    def _meta(self) -> dict:
        return {
            "format": "zstts-checkpoint",
            "model": self.cfg.model.to_dict(),
            "train": self.cfg.to_dict(),
            "step": self.step,
            "best_val": None if math.isinf(self.best_val) else self.best_val,
            "adam": {"beta1": self.adam.beta1, "beta2": self.adam.beta2, "epsilon": self.adam.epsilon, "step": self.adam.step},
        }

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.model.state_dict())
        for p in self.params:
            out[f"adam.m/{p.name}"] = self.adam.first_moment[p.name]
            out[f"adam.v/{p.name}"] = self.adam.second_moment[p.name]
        return out

    def save(self, path):
        save_checkpoint(path, self.state_tensors(), self._meta())

    def restore(self, path):
        """Load model and optimizer state; the stored model config must match this trainer's."""
        tensors, meta = load_checkpoint(path)
        stored = ModelConfig.from_dict(meta["model"])
        if stored != self.cfg.model:
            diffs = [f.name for f in fields(ModelConfig) if getattr(stored, f.name) != getattr(self.cfg.model, f.name)]
            raise CheckpointError(f"checkpoint model config differs in {diffs}")
        if meta["train"]["seed"] != self.cfg.seed:
            raise CheckpointError("checkpoint was trained with a different seed")
        try:
            self.model.load_state_dict(tensors)
            for p in self.params:
                self.adam.first_moment[p.name][...] = tensors[f"adam.m/{p.name}"]
                self.adam.second_moment[p.name][...] = tensors[f"adam.v/{p.name}"]
        except (KeyError, InvalidArgumentError) as exc:
            raise CheckpointError(f"checkpoint is missing state: {exc}") from exc
        self.adam.step = int(meta["adam"]["step"])
        self.step = int(meta["step"])
        self.best_val = math.inf if meta.get("best_val") is None else float(meta["best_val"])

    # -- steps -------------------------------------------------------------

    def lr(self, step: int) -> float:
        return noam_lr(step, self.cfg.model.hidden, self.cfg.warmup, self.cfg.lr_scale)

    def batch_indices(self, step: int) -> np.ndarray:
        n = len(self.train_set)
        rng = np.random.default_rng([self.cfg.seed, step])
        return np.sort(rng.choice(n, size=min(self.cfg.batch_size, n), replace=False))

    def loss_on(self, batch: Batch):
        mel, logdur, cache = self.model.forward(batch)
        loss, dmel, dld = _loss_and_grads(
            mel, batch.target_mel, logdur, batch.target_logdur,
            self.cfg.lambda_mel, self.cfg.lambda_dur, batch.tmask, batch.pmask,
        )
        return loss, dmel, dld, cache

    def train_step(self) -> dict:
        step = self.step + 1
        utts = [self.train_set[i] for i in self.batch_indices(step)]
        batch = self.model.make_batch(utts)
        self.model.zero_grad()
        loss, dmel, dld, cache = self.loss_on(batch)
        if not math.isfinite(loss.total):
            raise TrainingDivergedError(f"non-finite loss at step {step}")
        self.model.backward(dmel, dld, cache)
        lr = self.lr(step)
        adam_step(self.params, self.adam, lr)
        self.step = step
        return {"step": step, "lr": lr, "loss": loss.total, "mel_mae": loss.mel_mae, "dur_mse": loss.dur_mse}

    def evaluate_loss(self, utts: list[Utterance], batch_size: int | None = None) -> LossValue:
        """Teacher-forced loss pooled over ``utts`` (self-referenced)."""
        bs = batch_size or self.cfg.batch_size
        tot_abs = tot_sq = 0.0
        n_mel = n_dur = 0
        for i in range(0, len(utts), bs):
            batch = self.model.make_batch(utts[i : i + bs])
            mel, logdur, _ = self.model.forward(batch)
            mm = np.broadcast_to(batch.tmask[..., None], mel.shape)
            tot_abs += float(np.abs((mel - batch.target_mel)[mm]).sum(dtype=np.float64))
            n_mel += int(mm.sum())
            dd = (logdur - batch.target_logdur)[batch.pmask]
            tot_sq += float((dd.astype(np.float64) ** 2).sum())
            n_dur += int(batch.pmask.sum())
        mae, mse = tot_abs / max(n_mel, 1), tot_sq / max(n_dur, 1)
        return LossValue(self.cfg.lambda_mel * mae + self.cfg.lambda_dur * mse, mae, mse)

    def run(self, log_path=None, progress: bool = False) -> list[dict]:
        """Train until ``cfg.max_steps`` total steps, validating and checkpointing on schedule."""
        cfg = self.cfg
        ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
        if ckpt_dir:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
        if log_path is None and ckpt_dir is not None:
            log_path = ckpt_dir / "metrics.tsv"
        log_fh = None
        if log_path is not None:
            new = not Path(log_path).exists()
            log_fh = open(log_path, "a")
            if new:
                log_fh.write("\t".join(METRIC_COLUMNS) + "\n")
        limits = _thread_limits(cfg.threads)
        try:
            with limits:
                while self.step < cfg.max_steps:
                    try:
                        row = self.train_step()
                    except TrainingDivergedError:
                        log.error("training diverged at step %d; last good checkpoint kept", self.step + 1)
                        raise
                    if self.val_set and (self.step % cfg.val_interval == 0 or self.step == cfg.max_steps):
                        val = self.evaluate_loss(self.val_set)
                        row.update(val_loss=val.total, val_mel_mae=val.mel_mae, val_dur_mse=val.dur_mse)
                        if ckpt_dir and val.total < self.best_val:
                            self.best_val = val.total
                            self.save(ckpt_dir / "best.ckpt")
                    self.history.append(row)
                    if log_fh:
                        log_fh.write("\t".join(_fmt(row.get(c)) for c in METRIC_COLUMNS) + "\n")
                    if progress and self.step % 100 == 0:
                        log.info("step %d loss %.4f mel %.4f dur %.4f", self.step, row["loss"], row["mel_mae"], row["dur_mse"])
                    if ckpt_dir and self.step % cfg.checkpoint_interval == 0:
                        self.save(ckpt_dir / "last.ckpt")
            if ckpt_dir:
                self.save(ckpt_dir / "last.ckpt")
        finally:
            if log_fh:
                log_fh.close()
        return self.history


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def _thread_limits(threads: int):
    if threads and threads > 0:
        try:
            from threadpoolctl import threadpool_limits
        except ImportError:  # pragma: no cover
            return nullcontext()
        return threadpool_limits(limits=threads)
    return nullcontext()


def train(cfg: TrainConfig, train_set: list[Utterance], log_path=None, extra_val: list[Utterance] | None = None) -> Trainer:
    """Train from scratch.

    ``cfg.holdout_per_speaker`` utterances of every training speaker are held
    out for seen-speaker validation; ``extra_val`` is appended to them.
    """
    fit, held = holdout_split(train_set, cfg.holdout_per_speaker)
    trainer = Trainer(cfg, fit, held + list(extra_val or []))
    if trainer.cfg.checkpoint_dir:
        Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
        if cfg.max_steps > 0:
            trainer.save(Path(cfg.checkpoint_dir) / "last.ckpt")
    trainer.run(log_path)
    return trainer


def resume(checkpoint, cfg: TrainConfig, train_set: list[Utterance], log_path=None) -> Trainer:
    """Continue training from ``checkpoint`` up to ``cfg.max_steps`` total steps."""
    _, meta = load_checkpoint(checkpoint)
    stored = TrainConfig.from_dict(meta["train"])
    if stored.model.mode != cfg.model.mode or stored.model.aggregator != cfg.model.aggregator:
        raise ConfigError(
            f"checkpoint was trained with mode={stored.model.mode}/aggregator={stored.model.aggregator}; "
            f"refusing to resume as {cfg.model.mode}/{cfg.model.aggregator}"
        )
    if stored.holdout_per_speaker != cfg.holdout_per_speaker or stored.batch_size != cfg.batch_size:
        raise ConfigError("resume must keep batch_size and holdout_per_speaker unchanged")
    fit, held = holdout_split(train_set, cfg.holdout_per_speaker)
    trainer = Trainer(cfg, fit, held)
    trainer.restore(checkpoint)
    trainer.run(log_path)
    return trainer


def load_model(checkpoint) -> tuple[AcousticModel, dict]:
    """Rebuild an inference model from a checkpoint."""
    tensors, meta = load_checkpoint(checkpoint)
    cfg = ModelConfig.from_dict(meta["model"])
    model = AcousticModel(cfg, seed=meta.get("train", {}).get("seed", 0))
    try:
        model.load_state_dict(tensors)
    except InvalidArgumentError as exc:
        raise CheckpointError(str(exc)) from exc
    return model, meta
