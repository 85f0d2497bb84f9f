"""Training loop with per-batch view/iteration randomization, checkpoints and metrics."""

from __future__ import annotations

import csv
import logging
import re
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from vxc.autodiff.tensor import Tensor
from vxc.checkpoint import load_checkpoint, save_checkpoint
from vxc.codec import CodecModel, compression_loss, to_internal
from vxc.data.dataset import SplitData
from vxc.exceptions import ConfigurationError, NonFiniteLossError
from vxc.joint import JointConfig, JointModel, build_model
from vxc.optim import Adam

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "L_comp", "L_3D", "L_total", "wall_s")
CHECKPOINT_DIR = "checkpoints"
_CKPT_RE = re.compile(r"epoch_(\d+)\.vxck$")


@dataclass
class TrainConfig:
    joint: JointConfig = field(default_factory=lambda: JointConfig.desk("implicit"))
    batch_size: int = 6
    epochs: int = 20
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    repeats: int = 1  # passes over the training split per epoch
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.repeats < 1:
            raise ConfigurationError(f"repeats must be >= 1, got {self.repeats}")
        if self.lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["joint"] = self.joint.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["joint"] = JointConfig.from_dict(d["joint"])
        return cls(**d)


@dataclass
class EpochMetrics:
    epoch: int
    L_comp: float
    L_3D: float
    L_total: float
    wall_s: float

    def row(self) -> list:
        return [self.epoch, f"{self.L_comp:.9g}", f"{self.L_3D:.9g}", f"{self.L_total:.9g}", f"{self.wall_s:.3f}"]


@dataclass
class BatchSample:
    indices: np.ndarray
    view_idx: np.ndarray  # (B, V)
    n_iter: Optional[int]


def make_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent streams for parameter init and for training randomness."""
    init, train = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init), np.random.default_rng(train)


def draw_batches(n: int, cfg: TrainConfig, n_views: int, rng: np.random.Generator):
    """Shuffled minibatches for one epoch, each with random V and (if used) N."""
    order = rng.permutation(n * cfg.repeats) % n
    jc = cfg.joint
    v_max = min(jc.v_max, n_views)
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        V = int(rng.integers(1, v_max + 1))
        view_idx = np.argsort(rng.random((len(idx), n_views)), axis=1)[:, :V]
        N = int(rng.integers(1, jc.codec.n_iter_max + 1)) if jc.codec is not None else None
        yield BatchSample(idx, view_idx, N)


def gather_views(data: SplitData, sample: BatchSample, dtype) -> Tensor:
    imgs = data.views[sample.indices[:, None], sample.view_idx]  # (B, V, H, W, 3)
    return Tensor(to_internal(imgs, dtype))


def latest_checkpoint(out_dir) -> Optional[Path]:
    ck_dir = Path(out_dir) / CHECKPOINT_DIR
    if not ck_dir.is_dir():
        return None
    found = sorted((int(m.group(1)), p) for p in ck_dir.iterdir() if (m := _CKPT_RE.search(p.name)))
    return found[-1][1] if found else None


def checkpoint_path(out_dir, epoch: int) -> Path:
    return Path(out_dir) / CHECKPOINT_DIR / f"epoch_{epoch:04d}.vxck"


def model_from_checkpoint(path) -> tuple[JointModel, TrainConfig]:
    ck = load_checkpoint(path)
    cfg = TrainConfig.from_dict(ck.config["train"])
    model = build_model(cfg.joint, make_rngs(cfg.seed)[0], np.dtype(cfg.dtype))
    ck.restore(model)
    return model, cfg


@dataclass
class TrainResult:
    model: JointModel
    optimizer: Adam
    history: list
    out_dir: Optional[Path]


class Trainer:
    def __init__(self, cfg: TrainConfig, out_dir=None, on_epoch: Optional[Callable[[EpochMetrics], None]] = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.dtype = np.dtype(cfg.dtype)
        init_rng, self.rng = make_rngs(cfg.seed)
        self.model = build_model(cfg.joint, init_rng, self.dtype)
        self.optimizer = Adam(self.model.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                              eps=cfg.eps, clip_norm=cfg.clip_norm)
        self.epoch = 0
        self.history: list[EpochMetrics] = []
        self.on_epoch = on_epoch

    def resume(self) -> bool:
        """Load the newest checkpoint under ``out_dir``; False when there is none."""
        path = latest_checkpoint(self.out_dir) if self.out_dir is not None else None
        if path is None:
            return False
        ck = load_checkpoint(path)
        if ck.config.get("train", {}).get("joint", {}).get("kind") != self.cfg.joint.kind:
            raise ConfigurationError(f"{path} was written for a different model kind")
        ck.restore(self.model, self.optimizer, self.rng)
        self.epoch = ck.epoch
        self.history = [m for m in read_metrics(self.out_dir / "metrics.csv") if m.epoch <= ck.epoch]
        log.info("resumed from %s (epoch %d)", path, ck.epoch)
        return True

    def train_step(self, data: SplitData, sample: BatchSample) -> dict:
        views = gather_views(data, sample, self.dtype)
        target = data.grids[sample.indices]
        out = self.model(views, n_iter=sample.n_iter, train=True, rng=self.rng)
        loss, parts = self.model.loss(out, target)
        if not all(np.isfinite(v) for v in parts.values()):
            self._dump(sample, views, parts)
            raise NonFiniteLossError(f"non-finite loss at epoch {self.epoch + 1}: {parts}")
        loss.backward()
        parts["grad_norm"] = self.optimizer.step()
        self.optimizer.zero_grad()
        return parts

    def _dump(self, sample, views, parts):
        if self.out_dir is None:
            return
        path = self.out_dir / "nonfinite_batch.npz"
        np.savez(path, indices=sample.indices, view_idx=sample.view_idx, n_iter=sample.n_iter or 0,
                 views=views.data, **{k: np.float64(v) for k, v in parts.items()})
        log.error("diagnostic dump written to %s", path)

    def run_epoch(self, data: SplitData) -> EpochMetrics:
        t0 = time.perf_counter()
        sums = {"L_comp": 0.0, "L_3D": 0.0, "L_total": 0.0}
        n = 0
        for sample in draw_batches(len(data.ids), self.cfg, data.views.shape[1], self.rng):
            parts = self.train_step(data, sample)
            for k in sums:
                sums[k] += parts[k]
            n += 1
        self.epoch += 1
        m = EpochMetrics(self.epoch, sums["L_comp"] / n, sums["L_3D"] / n, sums["L_total"] / n,
                         time.perf_counter() - t0)
        self.history.append(m)
        if self.out_dir is not None:
            save_checkpoint(checkpoint_path(self.out_dir, self.epoch), self.model, {"train": self.cfg.to_dict()},
                            self.optimizer, self.rng, self.epoch)
            write_metrics(self.out_dir / "metrics.csv", self.history)
        log.info("epoch %d: L_comp=%.5f L_3D=%.5f L_total=%.5f (%.1fs)", m.epoch, m.L_comp, m.L_3D,
                 m.L_total, m.wall_s)
        if self.on_epoch is not None:
            self.on_epoch(m)
        return m

    def fit(self, data: SplitData, epochs: Optional[int] = None) -> TrainResult:
        if data.views.shape[2:4] != (self.cfg.joint.recon.height, self.cfg.joint.recon.width):
            raise ConfigurationError(f"dataset images {data.views.shape[2:4]} do not match the model extents")
        if data.grids.shape[1] != self.cfg.joint.recon.d_out:
            raise ConfigurationError(f"dataset grids are {data.grids.shape[1]}^3, model outputs "
                                     f"{self.cfg.joint.recon.d_out}^3")
        if self.out_dir is not None:
            (self.out_dir / CHECKPOINT_DIR).mkdir(parents=True, exist_ok=True)
        target = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target:
            self.run_epoch(data)
        return TrainResult(self.model, self.optimizer, self.history, self.out_dir)


def train_loop(cfg: TrainConfig, data: SplitData, out_dir=None, resume: bool = False,
               epochs: Optional[int] = None) -> TrainResult:
    trainer = Trainer(cfg, out_dir)
    if resume:
        trainer.resume()
    return trainer.fit(data, epochs)


def write_metrics(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for m in history:
            w.writerow(m.row())


def read_metrics(path) -> list[EpochMetrics]:
    path = Path(path)
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochMetrics(int(r["epoch"]), float(r["L_comp"]), float(r["L_3D"]), float(r["L_total"]),
                         float(r["wall_s"])) for r in rows]


def fit_codec(model: CodecModel, images: np.ndarray, epochs: int = 20, batch_size: int = 6, lr: float = 1e-3,
              rng: Optional[np.random.Generator] = None, clip_norm: float = 5.0) -> list[float]:
    """Train a standalone codec on L_comp with a random N per batch; returns per-epoch mean loss.

    ``images`` are internal (n, 3, H, W) arrays in [-1, 1].
    """
    rng = rng or np.random.default_rng(0)
    opt = Adam(model.parameters(), lr=lr, clip_norm=clip_norm)
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(images))
        losses = []
        for start in range(0, len(order), batch_size):
            x = Tensor(images[order[start:start + batch_size]].astype(model.dtype))
            n_iter = int(rng.integers(1, model.cfg.n_iter_max + 1))
            loss = compression_loss(model.run(x, n_iter, rng=rng, train=True).residuals)
            if not np.isfinite(loss.data):
                raise NonFiniteLossError(f"non-finite compression loss {float(loss.data)}")
            loss.backward()
            opt.step()
            opt.zero_grad()
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
    return history
