"""Multi-view 3-D occupancy reconstruction: view encoder, LSTM-grid fusion,
occupancy decoder, voxel-wise cross-entropy and IoU."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from vxc.autodiff import functional as F
from vxc.autodiff.tensor import Tensor
from vxc.exceptions import ConfigurationError, DimensionError
from vxc.layers import Conv2d, Conv3d, Linear, Module
from vxc.recurrent import GRID, Lstm3dGrid

IOU_THRESHOLD = 0.4
LOSS_EPS = 1e-7

FULL_ENCODER = (96, 128, 256, 256, 256, 256)
DESK_ENCODER = (16, 32, 64, 64)


@dataclass
class Recon3DConfig:
    K: int = 1024
    n_hidden: int = 128
    d_out: int = 32
    height: int = 128
    width: int = 128
    n_pools: int = 6
    enc_widths: Optional[tuple] = None
    dec_widths: Optional[tuple] = None

    def __post_init__(self):
        stride = 2 ** self.n_pools
        if self.height % stride or self.width % stride:
            raise ConfigurationError(f"encoder stride {stride} must divide {self.height}x{self.width}")
        if self.K < 1 or self.n_hidden < 1:
            raise ConfigurationError("K and n_hidden must be positive")
        n_up = int(round(np.log2(self.d_out / GRID)))
        if self.d_out < GRID or GRID * 2 ** n_up != self.d_out:
            raise ConfigurationError(f"d_out must be {GRID} times a power of two, got {self.d_out}")
        if self.enc_widths is None:
            base = FULL_ENCODER if self.n_pools == 6 else DESK_ENCODER
            self.enc_widths = tuple(base[i] if i < len(base) else base[-1] for i in range(self.n_pools))
        if self.dec_widths is None:
            self.dec_widths = tuple(max(128 >> i, 8) for i in range(n_up))
        self.enc_widths = tuple(self.enc_widths)
        self.dec_widths = tuple(self.dec_widths)
        if len(self.enc_widths) != self.n_pools:
            raise ConfigurationError("enc_widths needs one entry per pooling stage")
        if len(self.dec_widths) != n_up:
            raise ConfigurationError(f"dec_widths needs {n_up} entries to reach {self.d_out}^3")

    @classmethod
    def desk(cls, **overrides) -> "Recon3DConfig":
        """32x32 views, four pools, K=64, 32^3 output."""
        base = dict(K=64, n_hidden=32, d_out=32, height=32, width=32, n_pools=4,
                    enc_widths=DESK_ENCODER, dec_widths=(32, 16, 8))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Recon3DConfig":
        return cls(**d)


class ViewEncoder(Module):
    """Conv + LeakyReLU + 2x2 max-pool blocks, then a fully connected layer to K."""

    def __init__(self, cfg: Recon3DConfig, rng: np.random.Generator, K: Optional[int] = None,
                 head: str = "linear", dtype=np.float64):
        self.convs = []
        c = 3
        for w in cfg.enc_widths:
            self.convs.append(Conv2d(c, w, 3, rng, dtype=dtype))
            c = w
        s = 2 ** cfg.n_pools
        self.fc = Linear(c * (cfg.height // s) * (cfg.width // s), K or cfg.K, rng, dtype=dtype)
        if head not in ("linear", "tanh"):
            raise ConfigurationError(f"unknown encoder head {head!r}")
        self.head = head
        self.cfg = cfg

    def __call__(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1:] != (3, cfg.height, cfg.width):
            raise DimensionError(f"view encoder expects (B, 3, {cfg.height}, {cfg.width}), got {x.shape}")
        for conv in self.convs:
            x = F.maxpool2d(F.leaky_relu(conv(x)))
        e = self.fc(F.reshape(x, (x.shape[0], -1)))
        return F.tanh(e) if self.head == "tanh" else e


class OccupancyDecoder(Module):
    """Up-convolutions 4³ → … → D³ (1x1x1 conv to 8C' channels + voxel
    shuffle), LeakyReLU between, a 3x3x3 conv to two channels and a softmax."""

    def __init__(self, cfg: Recon3DConfig, rng: np.random.Generator, dtype=np.float64):
        self.ups = []
        c = cfg.n_hidden
        for w in cfg.dec_widths:
            self.ups.append(Conv3d(c, 8 * w, 1, rng, dtype=dtype))
            c = w
        self.out = Conv3d(c, 2, 3, rng, dtype=dtype)
        self.cfg = cfg

    def __call__(self, hidden: Tensor) -> Tensor:
        expected = (self.cfg.n_hidden, GRID, GRID, GRID)
        if hidden.ndim != 5 or hidden.shape[1:] != expected:
            raise DimensionError(f"occupancy decoder expects (B, {expected}), got {hidden.shape}")
        x = hidden
        for up in self.ups:
            x = F.leaky_relu(F.depth_to_space3d(up(x), 2))
        probs = F.softmax(self.out(x), axis=1)
        return probs[:, 1]


class Recon3DModel(Module):
    """E^3D → 3-D conv-LSTM grid → D^3D with shared parameters across views."""

    def __init__(self, cfg: Recon3DConfig, rng: np.random.Generator, K: Optional[int] = None,
                 head: str = "linear", grid_inputs: Optional[int] = None, with_encoder: bool = True,
                 dtype=np.float64):
        K = K or cfg.K
        self.encoder = ViewEncoder(cfg, rng, K=K, head=head, dtype=dtype) if with_encoder else None
        self.grid = Lstm3dGrid(grid_inputs or K, cfg.n_hidden, rng, dtype=dtype)
        self.decoder = OccupancyDecoder(cfg, rng, dtype=dtype)
        self.cfg = cfg
        self.K = K
        self.dtype = np.dtype(dtype)
        self._calls = Counter()

    def encode_view(self, x: Tensor) -> Tensor:
        self._calls["encode_view"] += 1
        return self.encoder(x)

    def fuse_views(self, embeddings: Sequence[Tensor]):
        """Run the grid over the embeddings in order; returns the final state."""
        embeddings = list(embeddings)
        if not embeddings:
            raise ValueError("fuse_views needs at least one view")
        state = self.grid.initial_state(embeddings[0].shape[0])
        for e in embeddings:
            state = self.grid.step(e, state)
        return state

    def decode_occupancy(self, hidden: Tensor) -> Tensor:
        return self.decoder(hidden)

    def __call__(self, views: Sequence[Tensor]) -> Tensor:
        return self.decode_occupancy(self.fuse_views([self.encode_view(v) for v in views]).h)


def recon_loss(p: Tensor, target, eps: float = LOSS_EPS) -> Tensor:
    """Mean voxel-wise binary cross-entropy; p is clamped to [eps, 1 - eps]."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=p.dtype)
    if t.shape != p.shape:
        raise DimensionError(f"prediction {p.shape} and target {t.shape} differ")
    q = F.clip(p, eps, 1.0 - eps)
    ll = F.log(q) * t + F.log(1.0 - q) * (1.0 - t)
    return -F.mean(ll)


def iou(p, target, tau: float = IOU_THRESHOLD) -> float:
    """|{p > τ} ∩ truth| / |{p > τ} ∪ truth|; an empty union counts as 1."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p)
    t = np.asarray(target).astype(bool)
    if p.shape != t.shape:
        raise DimensionError(f"prediction {p.shape} and target {t.shape} differ")
    pred = p > tau
    union = np.count_nonzero(pred | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & t) / union


def batch_iou(p, target, tau: float = IOU_THRESHOLD) -> np.ndarray:
    p = np.asarray(p.data if isinstance(p, Tensor) else p)
    return np.array([iou(p[i], target[i], tau) for i in range(len(p))])


@dataclass
class IoUBin:
    count: int
    mean: float
    std: float
    lo: float
    hi: float


def significance_bins(ious, target_std: float = 0.04) -> list[IoUBin]:
    """Sort ascending and greedily grow bins while their std stays ≤ target."""
    values = np.sort(np.asarray(ious, dtype=np.float64))
    if values.size < 2:
        raise ValueError("need at least two examples to bin")
    bins = []
    current = [values[0]]
    for v in values[1:]:
        if np.std(current + [v]) > target_std:
            bins.append(current)
            current = [v]
        else:
            current.append(v)
    bins.append(current)
    return [IoUBin(len(b), float(np.mean(b)), float(np.std(b)), float(b[0]), float(b[-1])) for b in bins]
