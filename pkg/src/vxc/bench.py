"""Single-threaded forward/backward timing of the joint models."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from vxc.autodiff.tensor import Tensor, no_grad
from vxc.joint import JointConfig, JointModel, build_model
from vxc.recon3d import Recon3DConfig


@dataclass
class Timing:
    name: str
    forward_ms: float
    backward_ms: float
    forward_samples: np.ndarray
    backward_samples: np.ndarray


def bench_models(models: dict, views: Tensor, n_iter: int = 4, iters: int = 50, warmup: int = 5,
                 backward: bool = True, seed: int = 0) -> dict:
    """Median wall-clock ms per model.

    Models are timed round-robin inside each iteration so slow drifts in
    machine load hit every model equally.  Forward timings run without
    recording a tape; backward timings measure only the reverse sweep.
    """
    rng = np.random.default_rng(seed)
    fwd = {k: [] for k in models}
    bwd = {k: [] for k in models}
    D = next(iter(models.values())).cfg.recon.d_out
    target = rng.random((views.shape[0], D, D, D)) > 0.5
    with threadpool_limits(limits=1):
        for it in range(warmup + iters):
            for name, model in models.items():
                t0 = time.perf_counter()
                with no_grad():
                    model(views, n_iter=n_iter, train=False)
                t1 = time.perf_counter()
                if it >= warmup:
                    fwd[name].append((t1 - t0) * 1e3)
                if backward:
                    out = model(views, n_iter=n_iter, train=True, rng=rng)
                    loss, _ = model.loss(out, target)
                    t2 = time.perf_counter()
                    loss.backward()
                    t3 = time.perf_counter()
                    model.zero_grad()
                    if it >= warmup:
                        bwd[name].append((t3 - t2) * 1e3)
    return {name: Timing(name, float(np.median(fwd[name])), float(np.median(bwd[name])) if bwd[name] else float("nan"),
                         np.array(fwd[name]), np.array(bwd[name])) for name in models}


def desk_models(recon: Optional[Recon3DConfig] = None, seed: int = 0, dtype=np.float32) -> dict:
    """The three joint models plus the bare reconstruction network (float embedding, no binarizer)."""
    recon = recon or Recon3DConfig.desk()
    cfgs = {
        "sequential": JointConfig.desk("sequential", recon=recon),
        "direct": JointConfig.desk("direct", recon=recon),
        "implicit": JointConfig.desk("implicit", recon=recon),
        "bare3d": JointConfig.desk("implicit", recon=recon, float_code=True),
    }
    return {k: build_model(c, seed, dtype) for k, c in cfgs.items()}


def speedups(timings: dict, reference: str = "sequential") -> dict:
    """Relative forward-time reduction versus ``reference`` in percent."""
    ref = timings[reference].forward_ms
    return {k: 100.0 * (ref - t.forward_ms) / ref for k, t in timings.items()}


def format_table(timings: dict, reference: str = "sequential") -> str:
    sp = speedups(timings, reference) if reference in timings else {}
    lines = [f"{'model':<12}{'forward ms':>12}{'backward ms':>13}{'speed-up':>10}"]
    for k, t in timings.items():
        s = f"{sp[k]:.0f}%" if k in sp else "-"
        lines.append(f"{k:<12}{t.forward_ms:>12.2f}{t.backward_ms:>13.2f}{s:>10}")
    return "\n".join(lines)


def random_views(batch: int, n_views: int, height: int, width: int, seed: int = 0, dtype=np.float32) -> Tensor:
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-1, 1, (batch, n_views, 3, height, width)).astype(dtype))


def run_bench(models: dict, batch: int = 1, n_views: int = 5, n_iter: int = 4, iters: int = 50,
              warmup: int = 5, backward: bool = True, seed: int = 0) -> dict:
    m: JointModel = next(iter(models.values()))
    views = random_views(batch, n_views, m.cfg.recon.height, m.cfg.recon.width, seed, m.dtype)
    return bench_models(models, views, n_iter, iters, warmup, backward, seed)
