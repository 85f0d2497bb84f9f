"""Joint compression + reconstruction architectures.

* ``sequential``: compress/decompress every view, reconstruct from the decoded
  images.
* ``direct``: feed the binary codes straight into the LSTM grid, skipping
  the view encoder.
* ``implicit``: binarize the view-encoder embedding; only the 3-D loss is
  trained and compression falls out as a side effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from vxc.autodiff import functional as F
from vxc.autodiff.tensor import Tensor
from vxc.binarizer import binarize
from vxc.codec import CodecConfig, CodecModel, compression_loss, compression_ratio
from vxc.exceptions import ConfigurationError
from vxc.layers import Module
from vxc.recon3d import Recon3DConfig, Recon3DModel, recon_loss

KINDS = ("sequential", "direct", "implicit")


@dataclass
class JointConfig:
    kind: str = "implicit"
    recon: Recon3DConfig = field(default_factory=Recon3DConfig.desk)
    codec: Optional[CodecConfig] = None
    k_implicit: Optional[int] = None
    v_max: int = 5
    float_code: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "implicit":
            if self.codec is not None:
                raise ConfigurationError("the implicit model has no codec")
            if self.k_implicit is None:
                self.k_implicit = self.recon.K
        elif self.codec is None:
            raise ConfigurationError(f"the {self.kind} model needs a codec configuration")
        if self.codec is not None and (self.codec.height, self.codec.width) != (self.recon.height, self.recon.width):
            raise ConfigurationError("codec and reconstruction image extents differ")
        if self.v_max < 1:
            raise ConfigurationError("v_max must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "recon": self.recon.to_dict(),
            "codec": self.codec.to_dict() if self.codec is not None else None,
            "k_implicit": self.k_implicit,
            "v_max": self.v_max,
            "float_code": self.float_code,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointConfig":
        d = dict(d)
        d["recon"] = Recon3DConfig.from_dict(d["recon"])
        if d.get("codec") is not None:
            d["codec"] = CodecConfig.from_dict(d["codec"])
        return cls(**d)

    @classmethod
    def desk(cls, kind: str, **overrides) -> "JointConfig":
        """32x32 images, 32³ grids, K=64 (implicit) or small codec with N_max=8."""
        recon = overrides.pop("recon", None) or Recon3DConfig.desk()
        codec = overrides.pop("codec", None)
        if kind != "implicit" and codec is None:
            codec = CodecConfig(variant="small", gamma=0, n_iter_max=8, height=recon.height, width=recon.width)
        return cls(kind=kind, recon=recon, codec=codec, **overrides)


def implicit_rate(height: int, width: int, K: int, float_code: bool = False) -> Fraction:
    return Fraction(height * width * 24, K * (32 if float_code else 1))


def k_for_rate(height: int, width: int, rate: float, float_code: bool = False) -> int:
    """Nearest integer code length for a target rate; report the achieved
    rate with :func:`implicit_rate`."""
    return max(1, int(round(height * width * 24 / (rate * (32 if float_code else 1)))))


def total_loss(i: int, V: int, l_comp: Optional[Tensor], l_3d: Optional[Tensor], kind: str = "sequential"):
    """Viewpoint-dependent objective: L_comp before the last view, L_comp + L_3D
    at the last view; the implicit model only ever uses L_3D."""
    if not 1 <= i <= V:
        raise ValueError(f"view index {i} outside 1..{V}")
    if kind == "implicit":
        return l_3d
    if i < V:
        return l_comp
    return l_comp + l_3d


@dataclass
class JointOutput:
    p: Tensor
    comp_losses: list = field(default_factory=list)
    codes: list = field(default_factory=list)
    decoded: list = field(default_factory=list)


class JointModel(Module):
    kind = ""

    def __init__(self, cfg: JointConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)

    def rate(self, n_iter: Optional[int] = None) -> Fraction:
        raise NotImplementedError

    def forward(self, views: Tensor, n_iter: Optional[int] = None, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> JointOutput:
        raise NotImplementedError

    def __call__(self, views, n_iter=None, train=False, rng=None) -> JointOutput:
        return self.forward(views, n_iter=n_iter, train=train, rng=rng)

    def loss(self, out: JointOutput, target) -> tuple[Tensor, dict]:
        l_3d = recon_loss(out.p, target)
        V = len(out.comp_losses)
        if self.kind == "implicit" or V == 0:
            total = total_loss(1, 1, None, l_3d, "implicit")
            return total, {"L_comp": 0.0, "L_3D": float(l_3d.data), "L_total": float(total.data)}
        total = None
        for i, l_comp in enumerate(out.comp_losses, start=1):
            term = total_loss(i, V, l_comp, l_3d if i == V else None, self.kind)
            total = term if total is None else total + term
        l_comp_mean = float(np.mean([float(c.data) for c in out.comp_losses]))
        return total, {"L_comp": l_comp_mean, "L_3D": float(l_3d.data), "L_total": float(total.data)}

    def counters(self) -> dict:
        calls = {}
        for sub in (getattr(self, "codec", None), getattr(self, "recon", None)):
            if sub is not None:
                calls.update(sub._calls)
        return calls

    def reset_counters(self):
        for sub in (getattr(self, "codec", None), getattr(self, "recon", None)):
            if sub is not None:
                sub._calls.clear()

    def _n_iter(self, n_iter):
        n = self.cfg.codec.n_iter_max if n_iter is None else n_iter
        if not 1 <= n <= self.cfg.codec.n_iter_max:
            raise ConfigurationError(f"N must be in [1, {self.cfg.codec.n_iter_max}], got {n}")
        return n


class SequentialModel(JointModel):
    kind = "sequential"

    def __init__(self, cfg: JointConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__(cfg, rng, dtype)
        self.codec = CodecModel(cfg.codec, rng, dtype)
        self.recon = Recon3DModel(cfg.recon, rng, dtype=dtype)

    def rate(self, n_iter=None) -> Fraction:
        return compression_ratio(self.cfg.codec, self._n_iter(n_iter), self.cfg.float_code)

    def forward(self, views, n_iter=None, train=False, rng=None) -> JointOutput:
        n = self._n_iter(n_iter)
        out = JointOutput(p=None)
        state = None
        for i in range(views.shape[1]):
            x = views[:, i]
            trace = self.codec.run(x, n, rng=rng, train=train, float_code=self.cfg.float_code)
            x_hat = trace.reconstructions[-1]
            out.codes.append(trace.codes)
            out.decoded.append(x_hat)
            out.comp_losses.append(compression_loss(trace.residuals))
            e = self.recon.encode_view(x_hat)
            state = self.recon.grid.initial_state(e.shape[0]) if state is None else state
            state = self.recon.grid.step(e, state)
        out.p = self.recon.decode_occupancy(state.h)
        return out


class DirectModel(JointModel):
    """Concatenated N·m code bits, zero-padded to N_max·m, drive the grid's
    input projection; unused iterations contribute zeros."""

    kind = "direct"

    def __init__(self, cfg: JointConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__(cfg, rng, dtype)
        self.codec = CodecModel(cfg.codec, rng, dtype)
        self.code_width = cfg.codec.n_iter_max * cfg.codec.m
        self.recon = Recon3DModel(cfg.recon, rng, grid_inputs=self.code_width, with_encoder=False, dtype=dtype)

    def rate(self, n_iter=None) -> Fraction:
        return compression_ratio(self.cfg.codec, self._n_iter(n_iter), self.cfg.float_code)

    def grid_input(self, codes) -> Tensor:
        B = codes[0].shape[0]
        flat = [F.reshape(b, (B, -1)) for b in codes]
        missing = self.code_width - sum(f.shape[1] for f in flat)
        if missing:
            flat.append(Tensor(np.zeros((B, missing), dtype=self.dtype)))
        return F.concat(flat, axis=1) if len(flat) > 1 else flat[0]

    def forward(self, views, n_iter=None, train=False, rng=None) -> JointOutput:
        n = self._n_iter(n_iter)
        out = JointOutput(p=None)
        state = None
        for i in range(views.shape[1]):
            x = views[:, i]
            # decoded images are only needed for the compression loss
            trace = self.codec.run(x, n, rng=rng, train=train, float_code=self.cfg.float_code,
                                   decode_last=train)
            out.codes.append(trace.codes)
            if train:
                out.decoded.append(trace.reconstructions[-1])
                out.comp_losses.append(compression_loss(trace.residuals))
            g = self.grid_input(trace.codes)
            state = self.recon.grid.initial_state(g.shape[0]) if state is None else state
            state = self.recon.grid.step(g, state)
        out.p = self.recon.decode_occupancy(state.h)
        return out


class ImplicitModel(JointModel):
    kind = "implicit"

    def __init__(self, cfg: JointConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__(cfg, rng, dtype)
        head = "linear" if cfg.float_code else "tanh"
        self.recon = Recon3DModel(cfg.recon, rng, K=cfg.k_implicit, head=head, dtype=dtype)

    @property
    def K(self) -> int:
        return self.cfg.k_implicit

    def rate(self, n_iter=None) -> Fraction:
        return implicit_rate(self.cfg.recon.height, self.cfg.recon.width, self.K, self.cfg.float_code)

    def forward(self, views, n_iter=None, train=False, rng=None) -> JointOutput:
        out = JointOutput(p=None)
        state = None
        for i in range(views.shape[1]):
            e = self.recon.encode_view(views[:, i])
            b = e if self.cfg.float_code else binarize(e, rng, train)
            out.codes.append([b])
            state = self.recon.grid.initial_state(b.shape[0]) if state is None else state
            state = self.recon.grid.step(b, state)
        out.p = self.recon.decode_occupancy(state.h)
        return out


_MODELS = {"sequential": SequentialModel, "direct": DirectModel, "implicit": ImplicitModel}


def build_model(cfg: JointConfig, seed=0, dtype=np.float64) -> JointModel:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _MODELS[cfg.kind](cfg, rng, dtype)


def sequential_forward(model: SequentialModel, views, n_iter, train=False, rng=None) -> JointOutput:
    return model.forward(views, n_iter, train, rng)


def direct_forward(model: DirectModel, views, n_iter, train=False, rng=None) -> JointOutput:
    return model.forward(views, n_iter, train, rng)


def implicit_forward(model: ImplicitModel, views, train=False, rng=None) -> JointOutput:
    return model.forward(views, None, train, rng)
