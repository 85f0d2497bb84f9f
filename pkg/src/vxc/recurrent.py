"""Recurrence units: vanilla RNN, FC LSTM, 2-D conv LSTM and the 3-D conv LSTM grid.

LSTM weights are stored fused across gates in the order (f, i, o, c): the
pre-activation tensor has ``4 * n_hidden`` channels and gate ``k`` owns
channels ``[k * n_hidden, (k + 1) * n_hidden)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vxc.autodiff import functional as F
from vxc.autodiff.tensor import Tensor
from vxc.exceptions import DimensionError
from vxc.layers import Module, uniform_param, zeros_param

GATES = ("f", "i", "o", "c")
GRID = 4  # cells per axis of the 3-D LSTM grid


@dataclass
class LstmState:
    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, shape, dtype=np.float64) -> "LstmState":
        return cls(Tensor(np.zeros(shape, dtype=dtype)), Tensor(np.zeros(shape, dtype=dtype)))


def _forget_bias(n_hidden: int, dtype) -> Tensor:
    b = zeros_param((4 * n_hidden,), dtype)
    b.data[:n_hidden] = 1.0
    return b


def lstm_gates(pre: Tensor, state: LstmState, n_hidden: int) -> LstmState:
    """Apply the gate nonlinearities and the cell/hidden updates.

    ``pre`` holds the summed pre-activations with gates along axis 1.
    """
    n = n_hidden
    sig = F.sigmoid(pre[:, : 3 * n])
    f, i, o = sig[:, :n], sig[:, n: 2 * n], sig[:, 2 * n:]
    g = F.tanh(pre[:, 3 * n:])
    c = f * state.c + i * g
    h = o * F.tanh(c)
    return LstmState(h, c)


class VanillaRNN(Module):
    """h_t = tanh(W_h h_{t-1} + W_x x_t),  y_t = W_y h_t."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, rng: np.random.Generator, dtype=np.float64):
        self.W_h = uniform_param(rng, (n_hidden, n_hidden), n_hidden, dtype)
        self.W_x = uniform_param(rng, (n_hidden, n_in), n_in, dtype)
        self.W_y = uniform_param(rng, (n_out, n_hidden), n_hidden, dtype)
        self.n_hidden = n_hidden

    def step(self, x: Tensor, h_prev: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[1] != self.W_x.shape[1] or h_prev.shape[1] != self.n_hidden:
            raise DimensionError(f"vanilla RNN got x {x.shape}, h {h_prev.shape}")
        h = F.tanh(F.matmul(h_prev, self.W_h.T) + F.matmul(x, self.W_x.T))
        y = F.matmul(h, self.W_y.T)
        return h, y


def vanilla_rnn_step(x_t: Tensor, h_prev: Tensor, params: VanillaRNN):
    return params.step(x_t, h_prev)


class LstmParams(Module):
    """Fully connected LSTM parameters.

    ``wx`` is (n_in, 4n_h) and ``wh`` is (n_h, 4n_h) so that pre-activations
    are ``x @ wx + h @ wh + b`` for row-vector batches.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, dtype=np.float64):
        self.wx = uniform_param(rng, (n_in, 4 * n_hidden), n_in, dtype)
        self.wh = uniform_param(rng, (n_hidden, 4 * n_hidden), n_hidden, dtype)
        self.b = _forget_bias(n_hidden, dtype)
        self.n_in = n_in
        self.n_hidden = n_hidden

    def gate(self, name: str) -> dict:
        """Per-gate views in equation orientation: W_{g x}, W_{g h}, b_g."""
        k = GATES.index(name)
        cols = slice(k * self.n_hidden, (k + 1) * self.n_hidden)
        return {"Wx": self.wx.data[:, cols].T, "Wh": self.wh.data[:, cols].T, "b": self.b.data[cols]}

    def initial_state(self, batch: int) -> LstmState:
        return LstmState.zeros((batch, self.n_hidden), self.wx.dtype)


def lstm_step(x_t: Tensor, state: LstmState, params: LstmParams) -> LstmState:
    if x_t.ndim != 2 or x_t.shape[1] != params.n_in:
        raise DimensionError(f"lstm_step expected x of shape (B, {params.n_in}), got {x_t.shape}")
    if state.h.shape != (x_t.shape[0], params.n_hidden) or state.c.shape != state.h.shape:
        raise DimensionError(f"lstm_step state shapes {state.h.shape}/{state.c.shape} do not match params")
    pre = F.matmul(x_t, params.wx) + F.matmul(state.h, params.wh) + params.b
    return lstm_gates(pre, state, params.n_hidden)


class ConvLstm2d(Module):
    """Convolutional LSTM: every matrix product becomes a 2-D convolution.

    The input path may use a stride, in which case the state lives at the
    reduced resolution.
    """

    def __init__(self, c_in: int, n_hidden: int, rng: np.random.Generator, kernel: int = 3,
                 hidden_kernel: int = 1, stride: int = 1, dtype=np.float64):
        self.wx = uniform_param(rng, (4 * n_hidden, c_in, kernel, kernel), c_in * kernel ** 2, dtype)
        self.wh = uniform_param(rng, (4 * n_hidden, n_hidden, hidden_kernel, hidden_kernel),
                                n_hidden * hidden_kernel ** 2, dtype)
        self.b = _forget_bias(n_hidden, dtype)
        self.c_in = c_in
        self.n_hidden = n_hidden
        self.kernel = kernel
        self.hidden_kernel = hidden_kernel
        self.stride = stride

    def out_extent(self, n: int) -> int:
        return (n + 2 * (self.kernel // 2) - self.kernel) // self.stride + 1

    def initial_state(self, batch: int, height: int, width: int) -> LstmState:
        shape = (batch, self.n_hidden, self.out_extent(height), self.out_extent(width))
        return LstmState.zeros(shape, self.wx.dtype)

    def step(self, x: Tensor, state: LstmState) -> LstmState:
        return conv_lstm2d_step(x, state, self)


def conv_lstm2d_step(x_t: Tensor, state: LstmState, params: ConvLstm2d) -> LstmState:
    if x_t.ndim != 4 or x_t.shape[1] != params.c_in:
        raise DimensionError(f"conv LSTM expected (B, {params.c_in}, H, W) input, got {x_t.shape}")
    x_path = F.conv2d(x_t, params.wx, stride=params.stride, padding=params.kernel // 2)
    if x_path.shape[2:] != state.h.shape[2:] or state.h.shape[1] != params.n_hidden:
        raise DimensionError(f"conv LSTM state {state.h.shape} does not match input path {x_path.shape}")
    h_path = F.conv2d(state.h, params.wh, padding=params.hidden_kernel // 2)
    pre = x_path + h_path + F.reshape(params.b, (1, -1, 1, 1))
    return lstm_gates(pre, state, params.n_hidden)


class Lstm3dGrid(Module):
    """4x4x4 grid of LSTM units with per-cell FC input and 3x3x3 hidden convolution.

    The FC maps the input vector to ``4 * n_hidden * 64`` values laid out as
    (gate-channel, d, h, w), so every cell gets its own slice of the input
    projection.  The hidden-to-hidden path is a padded 3x3x3 convolution
    shared across cells.
    """

    def __init__(self, n_in: int, n_hidden: int, rng: np.random.Generator, kernel: int = 3, dtype=np.float64):
        cells = GRID ** 3
        self.wx = uniform_param(rng, (n_in, 4 * n_hidden * cells), n_in, dtype)
        self.wh = uniform_param(rng, (4 * n_hidden, n_hidden, kernel, kernel, kernel), n_hidden * kernel ** 3, dtype)
        self.b = _forget_bias(n_hidden, dtype)
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.kernel = kernel

    def initial_state(self, batch: int) -> LstmState:
        return LstmState.zeros((batch, self.n_hidden, GRID, GRID, GRID), self.wx.dtype)

    def input_path(self, x_vec: Tensor) -> Tensor:
        B = x_vec.shape[0]
        return F.reshape(F.matmul(x_vec, self.wx), (B, 4 * self.n_hidden, GRID, GRID, GRID))

    def step(self, x_vec: Tensor, state: LstmState) -> LstmState:
        return lstm3d_grid_step(x_vec, state, self)


def lstm3d_grid_step(x_vec: Tensor, state: LstmState, grid: Lstm3dGrid) -> LstmState:
    if x_vec.ndim != 2 or x_vec.shape[1] != grid.n_in:
        raise DimensionError(f"3-D LSTM grid expected (B, {grid.n_in}) input, got {x_vec.shape}")
    expected = (x_vec.shape[0], grid.n_hidden, GRID, GRID, GRID)
    if state.h.shape != expected:
        raise DimensionError(f"3-D LSTM grid state {state.h.shape} != {expected}")
    h_path = F.conv3d(state.h, grid.wh, padding=grid.kernel // 2)
    pre = grid.input_path(x_vec) + h_path + F.reshape(grid.b, (1, -1, 1, 1, 1))
    return lstm_gates(pre, state, grid.n_hidden)
