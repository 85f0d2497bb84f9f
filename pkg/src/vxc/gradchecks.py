"""Finite-difference checks for every differentiable primitive and the composite models.

Each case builds random bounded float64 inputs and a scalar objective
``sum(f(inputs) * R)`` with a fixed random weight tensor ``R``, so that no
gradient is trivially constant.  Inputs to kinked functions (abs, leaky
ReLU, clip, max-pool) are drawn away from their kinks.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from vxc.autodiff import functional as F
from vxc.autodiff.gradcheck import GradCheckReport, grad_check
from vxc.autodiff.tensor import Tensor
from vxc.binarizer import binarize
from vxc.codec import CodecConfig, CodecModel, compression_loss
from vxc.joint import KINDS, JointConfig, build_model
from vxc.recon3d import Recon3DConfig, Recon3DModel, recon_loss
from vxc.recurrent import ConvLstm2d, Lstm3dGrid, LstmParams, VanillaRNN, lstm_step

PRIMITIVE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


def _leaf(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, lo=0.1, hi=1.0):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _weighted(rng, fn: Callable, *inputs):
    """Objective sum(fn(*inputs) * R) with R fixed at build time."""
    probe = fn(*inputs)
    R = rng.standard_normal(probe.shape)

    def f(*xs):
        return F.sum(fn(*xs) * R)

    return f, list(inputs)


def _distinct_blocks(rng, shape):
    """Values whose 2x2 windows have a unique maximum with margin ≥ 0.05."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 0.05 + rng.uniform(0, 0.01, n)).reshape(shape) / n * 20


def _case_binarize(rng):
    x = _leaf(rng.uniform(-0.9, 0.9, (3, 5)))
    stream = np.random.default_rng(int(rng.integers(2 ** 31)))
    R = rng.standard_normal((3, 5))

    def f(t):
        return F.sum(binarize(t, stream, train=True) * R)

    return f, [x]


PRIMITIVES: dict[str, Callable] = {
    "add": lambda r: _weighted(r, F.add, _leaf(r.uniform(-1, 1, (3, 4))), _leaf(r.uniform(-1, 1, (4,)))),
    "sub": lambda r: _weighted(r, F.sub, _leaf(r.uniform(-1, 1, (3, 4))), _leaf(r.uniform(-1, 1, (3, 1)))),
    "mul": lambda r: _weighted(r, F.mul, _leaf(r.uniform(-1, 1, (3, 4))), _leaf(r.uniform(-1, 1, (1, 4)))),
    "div": lambda r: _weighted(r, F.div, _leaf(r.uniform(-1, 1, (3, 4))), _leaf(r.uniform(0.5, 2, (3, 4)))),
    "neg": lambda r: _weighted(r, F.neg, _leaf(r.uniform(-1, 1, (3, 4)))),
    "power": lambda r: _weighted(r, lambda x: F.power(x, 3.0), _leaf(r.uniform(-1, 1, (3, 4)))),
    "exp": lambda r: _weighted(r, F.exp, _leaf(r.uniform(-2, 2, (3, 4)))),
    "log": lambda r: _weighted(r, F.log, _leaf(r.uniform(0.2, 3, (3, 4)))),
    "abs": lambda r: _weighted(r, F.abs, _leaf(_away_from_zero(r, (3, 4)))),
    "clip": lambda r: _weighted(r, lambda x: F.clip(x, -0.5, 0.5),
                                _leaf(np.where(r.random((3, 4)) < 0.5, r.uniform(-0.4, 0.4, (3, 4)),
                                               r.choice([-1.0, 1.0], (3, 4))))),
    "sum": lambda r: _weighted(r, lambda x: F.sum(x, axis=1), _leaf(r.uniform(-1, 1, (3, 4, 2)))),
    "mean": lambda r: _weighted(r, lambda x: F.mean(x, axis=(0, 2), keepdims=True),
                                _leaf(r.uniform(-1, 1, (3, 4, 2)))),
    "reshape": lambda r: _weighted(r, lambda x: F.reshape(x, (6, 4)), _leaf(r.uniform(-1, 1, (2, 3, 4)))),
    "transpose": lambda r: _weighted(r, lambda x: F.transpose(x, (2, 0, 1)), _leaf(r.uniform(-1, 1, (2, 3, 4)))),
    "getitem": lambda r: _weighted(r, lambda x: x[1:, ::2], _leaf(r.uniform(-1, 1, (3, 5)))),
    "getitem_gather": lambda r: _weighted(r, lambda x: x[np.array([0, 2, 0])], _leaf(r.uniform(-1, 1, (3, 5)))),
    "concat": lambda r: _weighted(r, lambda a, b: F.concat([a, b], axis=1), _leaf(r.uniform(-1, 1, (2, 3))),
                                  _leaf(r.uniform(-1, 1, (2, 2)))),
    "stack": lambda r: _weighted(r, lambda a, b: F.stack([a, b], axis=1), _leaf(r.uniform(-1, 1, (2, 3))),
                                 _leaf(r.uniform(-1, 1, (2, 3)))),
    "matmul": lambda r: _weighted(r, F.matmul, _leaf(r.uniform(-1, 1, (5, 7))), _leaf(r.uniform(-1, 1, (7, 3)))),
    "conv2d": lambda r: _weighted(r, lambda x, w, b: F.conv2d(x, w, b, stride=1, padding=1),
                                  _leaf(r.uniform(-1, 1, (2, 2, 6, 6))), _leaf(r.uniform(-1, 1, (3, 2, 3, 3))),
                                  _leaf(r.uniform(-1, 1, (3,)))),
    "conv2d_stride2": lambda r: _weighted(r, lambda x, w: F.conv2d(x, w, stride=2, padding=1),
                                          _leaf(r.uniform(-1, 1, (2, 2, 6, 6))),
                                          _leaf(r.uniform(-1, 1, (3, 2, 3, 3)))),
    "conv3d": lambda r: _weighted(r, lambda x, w, b: F.conv3d(x, w, b, padding=1),
                                  _leaf(r.uniform(-1, 1, (1, 2, 4, 4, 4))),
                                  _leaf(r.uniform(-1, 1, (2, 2, 3, 3, 3))), _leaf(r.uniform(-1, 1, (2,)))),
    "maxpool2d": lambda r: _weighted(r, F.maxpool2d, _leaf(_distinct_blocks(r, (2, 2, 4, 4)))),
    "depth_to_space": lambda r: _weighted(r, lambda x: F.depth_to_space(x, 2), _leaf(r.uniform(-1, 1, (2, 8, 2, 3)))),
    "space_to_depth": lambda r: _weighted(r, lambda x: F.space_to_depth(x, 2), _leaf(r.uniform(-1, 1, (2, 2, 4, 6)))),
    "depth_to_space3d": lambda r: _weighted(r, lambda x: F.depth_to_space3d(x, 2),
                                            _leaf(r.uniform(-1, 1, (1, 16, 2, 2, 2)))),
    "space_to_depth3d": lambda r: _weighted(r, lambda x: F.space_to_depth3d(x, 2),
                                            _leaf(r.uniform(-1, 1, (1, 2, 4, 4, 4)))),
    "sigmoid": lambda r: _weighted(r, F.sigmoid, _leaf(r.uniform(-4, 4, (3, 4)))),
    "tanh": lambda r: _weighted(r, F.tanh, _leaf(r.uniform(-3, 3, (3, 4)))),
    "leaky_relu": lambda r: _weighted(r, F.leaky_relu, _leaf(_away_from_zero(r, (3, 4)))),
    "softmax": lambda r: _weighted(r, lambda x: F.softmax(x, axis=1), _leaf(r.uniform(-2, 2, (2, 3, 4)))),
    "binarize": _case_binarize,
}


def check_primitive(name: str, trials: int = 1, seed: int = 0) -> GradCheckReport:
    """Worst report over ``trials`` random draws."""
    rng = np.random.default_rng(seed)
    worst = None
    for _ in range(trials):
        f, inputs = PRIMITIVES[name](rng)
        rep = grad_check(f, inputs, tol=PRIMITIVE_TOL, name=name)
        if worst is None or rep.max_rel_err > worst.max_rel_err:
            worst = rep
    worst.n_checked *= trials
    return worst


# -- composites ---------------------------------------------------------------

def condition(model, rng, output_gain: float = 20.0):
    """Move an untrained model away from degenerate operating points.

    Zero biases put many pre-activations exactly on LeakyReLU kinks, and the
    freshly initialised codec emits an almost flat image whose 2x2 windows
    tie within the finite-difference step.  Random biases and a larger codec
    output gain avoid both.
    """
    for _, p in model.named_parameters():
        if p.ndim == 1:
            p.data[...] = rng.uniform(-0.5, 0.5, p.shape)
    codec = getattr(model, "codec", None)
    if codec is None and isinstance(model, CodecModel):
        codec = model
    if codec is not None:
        codec.decoder.out.weight.data *= output_gain
    return model


def _tiny_recon() -> Recon3DConfig:
    return Recon3DConfig(K=6, n_hidden=3, d_out=8, height=16, width=16, n_pools=2, enc_widths=(3, 4),
                         dec_widths=(3,))


def _tiny_codec() -> CodecConfig:
    return CodecConfig(variant="small", n_iter_max=2, height=16, width=16, enc_widths=(4, 4, 4, 16),
                       dec_widths=(8, 8, 8, 16))


def _param_slice(model, rng, per_param: int):
    """(tensor, flat indices) for a few entries of every parameter."""
    params = model.parameters()
    return params, [rng.choice(p.size, min(p.size, per_param), replace=False) for p in params]


def check_codec_step(seed: int = 0, per_param: int = 2) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    model = condition(CodecModel(_tiny_codec(), rng), rng)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)))
    noise_seed = int(rng.integers(2 ** 31))

    def f(*_):
        trace = model.run(x, 2, rng=np.random.default_rng(noise_seed), train=True)
        return compression_loss(trace.residuals)

    params, idx = _param_slice(model, rng, per_param)
    return grad_check(f, params, indices=idx, tol=COMPOSITE_TOL, name="codec_step")


def check_recon3d(seed: int = 0, per_param: int = 2) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    model = condition(Recon3DModel(_tiny_recon(), rng), rng)
    views = [Tensor(rng.uniform(-1, 1, (2, 3, 16, 16))) for _ in range(2)]
    target = rng.random((2, 8, 8, 8)) > 0.5

    def f(*_):
        return recon_loss(model(views), target)

    params, idx = _param_slice(model, rng, per_param)
    return grad_check(f, params, indices=idx, tol=COMPOSITE_TOL, name="recon3d")


def check_joint(kind: str, seed: int = 0, per_param: int = 2) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    codec = _tiny_codec() if kind != "implicit" else None
    model = condition(build_model(JointConfig(kind=kind, recon=_tiny_recon(), codec=codec), rng), rng)
    views = Tensor(rng.uniform(-1, 1, (2, 2, 3, 16, 16)))
    target = rng.random((2, 8, 8, 8)) > 0.5
    noise_seed = int(rng.integers(2 ** 31))

    def f(*_):
        out = model(views, n_iter=2, train=True, rng=np.random.default_rng(noise_seed))
        return model.loss(out, target)[0]

    params, idx = _param_slice(model, rng, per_param)
    return grad_check(f, params, indices=idx, tol=COMPOSITE_TOL, name=f"joint_{kind}")


def check_cells(seed: int = 0) -> list[GradCheckReport]:
    """Unrolled recurrent cells with all parameters and inputs checked."""
    rng = np.random.default_rng(seed)
    reports = []

    rnn = VanillaRNN(3, 4, 2, rng)
    xs = [_leaf(rng.uniform(-1, 1, (2, 3))) for _ in range(3)]

    def f_rnn(*_):
        h = Tensor(np.zeros((2, 4)))
        total = None
        for x in xs:
            h, y = rnn.step(x, h)
            total = F.sum(y * y) if total is None else total + F.sum(y * y)
        return total

    reports.append(grad_check(f_rnn, rnn.parameters() + xs, tol=PRIMITIVE_TOL, name="vanilla_rnn"))

    lstm = LstmParams(3, 4, rng)
    xs4 = [_leaf(rng.uniform(-1, 1, (2, 3))) for _ in range(4)]
    R = rng.standard_normal((2, 4))

    def f_lstm(*_):
        state = lstm.initial_state(2)
        for x in xs4:
            state = lstm_step(x, state, lstm)
        return F.sum(state.h * R) + F.sum(state.c * R)

    reports.append(grad_check(f_lstm, lstm.parameters() + xs4, tol=COMPOSITE_TOL, name="lstm"))

    conv = ConvLstm2d(2, 3, rng, stride=2)
    xc = [_leaf(rng.uniform(-1, 1, (1, 2, 6, 6))) for _ in range(2)]
    Rc = rng.standard_normal((1, 3, 3, 3))

    def f_conv(*_):
        state = conv.initial_state(1, 6, 6)
        for x in xc:
            state = conv.step(x, state)
        return F.sum(state.h * Rc)

    reports.append(grad_check(f_conv, conv.parameters() + xc, tol=COMPOSITE_TOL, name="conv_lstm2d"))

    grid = Lstm3dGrid(5, 2, rng)
    xg = [_leaf(rng.uniform(-1, 1, (1, 5))) for _ in range(2)]
    Rg = rng.standard_normal((1, 2, 4, 4, 4))

    def f_grid(*_):
        state = grid.initial_state(1)
        for x in xg:
            state = grid.step(x, state)
        return F.sum(state.h * Rg)

    reports.append(grad_check(f_grid, grid.parameters() + xg, tol=COMPOSITE_TOL, name="lstm3d_grid"))
    return reports


def run_all(trials: int = 1, seed: int = 0, composites: bool = True) -> list[GradCheckReport]:
    reports = [check_primitive(name, trials, seed) for name in PRIMITIVES]
    if composites:
        reports += check_cells(seed)
        reports.append(check_codec_step(seed))
        reports.append(check_recon3d(seed))
        reports += [check_joint(kind, seed) for kind in KINDS]
    return reports
