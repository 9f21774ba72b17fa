"""Network building blocks on top of the autodiff tensors.

Fully connected layers that feed a ReLU draw weights uniformly from
[-sqrt(6/fan_in), +sqrt(6/fan_in)], which keeps activation variance roughly
constant through deep ReLU stacks; all other weights use the narrower
[-1/sqrt(fan_in), +1/sqrt(fan_in)].  Biases start at zero, except LSTM
forget-gate biases which start at 1.0 so cells remember by default.  Every
module exposes ``parameters()`` as an ordered name-to-tensor mapping; those
names are the checkpoint contract.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def he_uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Mlp:
    """Stack of fully connected layers.

    ``relu_all=True`` applies ReLU after every layer including the last (the
    embedding heads work this way); otherwise the final layer is linear, as a
    classifier logit layer needs.  Accepts a vector or a batch of row vectors.
    """

    def __init__(self, dims: Sequence[int], rng: np.random.Generator, relu_all: bool = True):
        if len(dims) < 2:
            raise ValueError("Mlp needs at least one layer")
        self.dims = tuple(dims)
        self.relu_all = relu_all
        self.weights = []
        self.biases = []
        n = len(dims) - 1
        for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            # stored (fan_in, fan_out) so x @ W works for vectors and batches
            init = he_uniform_init if (relu_all or k < n - 1) else uniform_init
            self.weights.append(init(rng, (d_in, d_out), d_in))
            self.biases.append(zeros_param((d_out,)))

    def __call__(self, x: Tensor) -> Tensor:
        n = len(self.weights)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = T.add(T.matmul(x, w), b)
            if self.relu_all or k < n - 1:
                x = T.relu(x)
        return x

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.fc{k}.weight"] = w
            out[f"{prefix}.fc{k}.bias"] = b
        return out


class LstmCell:
    """A standard LSTM cell.

    Input, forget and output gates are logistic functions of [x, h]; the cell
    candidate is a tanh of the same concatenation.  The hidden state is
    o * tanh(c).  ``step`` works on single vectors; ``zero_state`` supplies
    the empty-stack state.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator,
                 forget_bias: float = 1.0):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        fan = input_dim + hidden_dim
        self.w_i = uniform_init(rng, (fan, hidden_dim), fan)
        self.w_f = uniform_init(rng, (fan, hidden_dim), fan)
        self.w_o = uniform_init(rng, (fan, hidden_dim), fan)
        self.w_c = uniform_init(rng, (fan, hidden_dim), fan)
        self.b_i = zeros_param((hidden_dim,))
        self.b_f = Tensor(np.full(hidden_dim, forget_bias), requires_grad=True)
        self.b_o = zeros_param((hidden_dim,))
        self.b_c = zeros_param((hidden_dim,))

    def zero_state(self) -> tuple[Tensor, Tensor]:
        z = Tensor(np.zeros(self.hidden_dim))
        return z, z

    def zero_state_batch(self, n: int) -> tuple[Tensor, Tensor]:
        z = Tensor(np.zeros((n, self.hidden_dim)))
        return z, z

    def step(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        h, c = state
        xh = T.concat([x, h])
        return self._gates(xh, c)

    def step_batch(self, x: Tensor, state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
        """One step over a batch: x is (n, input_dim), state matrices are
        (n, hidden_dim).  Same parameters and arithmetic as ``step``."""
        h, c = state
        xh = T.concat_cols([x, h])
        return self._gates(xh, c)

    def _gates(self, xh: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        i = T.sigmoid(T.add(T.matmul(xh, self.w_i), self.b_i))
        f = T.sigmoid(T.add(T.matmul(xh, self.w_f), self.b_f))
        o = T.sigmoid(T.add(T.matmul(xh, self.w_o), self.b_o))
        cand = T.tanh(T.add(T.matmul(xh, self.w_c), self.b_c))
        c2 = T.add(T.mul(f, c), T.mul(i, cand))
        h2 = T.mul(o, T.tanh(c2))
        return h2, c2

    def run(self, xs: Sequence[Tensor], state: tuple[Tensor, Tensor] | None = None) -> tuple[Tensor, Tensor]:
        """Fold a sequence of input vectors; returns the final (h, c)."""
        st = self.zero_state() if state is None else state
        for x in xs:
            st = self.step(x, st)
        return st

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.w_i": self.w_i, f"{prefix}.w_f": self.w_f,
            f"{prefix}.w_o": self.w_o, f"{prefix}.w_c": self.w_c,
            f"{prefix}.b_i": self.b_i, f"{prefix}.b_f": self.b_f,
            f"{prefix}.b_o": self.b_o, f"{prefix}.b_c": self.b_c,
        }


class Embedding:
    """Trainable lookup table for token ids."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        # unit-range rows drive the first LSTM layer hard enough to matter
        self.table = Tensor(rng.uniform(-1.0, 1.0, size=(vocab_size, dim)),
                            requires_grad=True)

    def __call__(self, token: int) -> Tensor:
        if not 0 <= token < self.vocab_size:
            raise IndexError(f"token id {token} outside vocabulary of size {self.vocab_size}")
        return T.take_row(self.table, token)

    def lookup(self, tokens) -> Tensor:
        """Batch lookup: a (len(tokens), dim) matrix of embedding rows."""
        for t in tokens:
            if not 0 <= t < self.vocab_size:
                raise IndexError(f"token id {t} outside vocabulary of size {self.vocab_size}")
        return T.take_rows(self.table, list(map(int, tokens)))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.table": self.table}


def load_into(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into live parameters, validating names and shapes."""
    missing = sorted(set(params) - set(values))
    extra = sorted(set(values) - set(params))
    if missing or extra:
        raise KeyError(f"parameter names do not match checkpoint: missing={missing}, extra={extra}")
    for name, p in params.items():
        v = np.asarray(values[name], dtype=np.float64)
        if v.shape != p.data.shape:
            raise ValueError(f"{name}: checkpoint shape {v.shape} != parameter shape {p.data.shape}")
        p.data = v.copy()
