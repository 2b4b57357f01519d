"""Feed-forward networks with reverse-mode parameter gradients, and friends.

The networks here are deliberately minimal: dense layers, tanh or gelu, a
scalar output, and a flat parameter vector. Reverse accumulation produces
gradients with respect to the parameters only. There is no operation anywhere
in this module that returns a derivative of the network with respect to its
input; the solver relies on that absence, so do not add one.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erf

from .errors import DivergenceError
from .geometry import Domain

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _tanh(z):
    return np.tanh(z)


def _tanh_slope(z, activated):
    return 1.0 - activated * activated


def _gelu(z):
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def _gelu_slope(z, activated):
    cdf = 0.5 * (1.0 + erf(z / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return cdf + z * pdf


_ACTIVATIONS = {"tanh": (_tanh, _tanh_slope), "gelu": (_gelu, _gelu_slope)}
_ACTIVATION_IDS = {"tanh": 0, "gelu": 1}
_ID_ACTIVATIONS = {v: k for k, v in _ACTIVATION_IDS.items()}

_CKPT_MAGIC = b"ARDONET1"


class MlpNetwork:
    """Dense scalar-output network over a flat parameter vector.

    Parameters are stored layer by layer, each layer as its weight matrix in
    row-major order followed by its bias vector, so the total count is
    sum((w_in + 1) * w_out). Construction with ``params=None`` gives the
    all-zero network; use :meth:`initialize` for Xavier-uniform weights.
    """

    def __init__(
        self,
        layer_widths: Sequence[int],
        activation: str = "tanh",
        params: np.ndarray | None = None,
        dtype=np.float64,
    ):
        widths = [int(w) for w in layer_widths]
        if len(widths) < 2:
            raise ValueError("layer_widths needs at least input and output entries")
        if any(w < 1 for w in widths):
            raise ValueError("layer widths must be positive")
        if widths[-1] != 1:
            raise ValueError("output width must be 1 (scalar field)")
        if activation not in _ACTIVATIONS:
            known = ", ".join(sorted(_ACTIVATIONS))
            raise ValueError(f"unknown activation '{activation}'; available: {known}")
        self.layer_widths = tuple(widths)
        self.activation = activation
        self.dtype = np.dtype(dtype)
        self._act, self._act_slope = _ACTIVATIONS[activation]

        # Flat-vector layout bookkeeping.
        self._layout = []
        offset = 0
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            w_sl = slice(offset, offset + w_in * w_out)
            offset += w_in * w_out
            b_sl = slice(offset, offset + w_out)
            offset += w_out
            self._layout.append((w_sl, b_sl, (w_out, w_in)))
        self._n_params = offset

        if params is None:
            self.params = np.zeros(self._n_params, dtype=self.dtype)
        else:
            params = np.asarray(params, dtype=self.dtype).reshape(-1)
            if params.size != self._n_params:
                raise ValueError(
                    f"expected {self._n_params} parameters, got {params.size}"
                )
            self.params = params.copy()

    # -- construction -------------------------------------------------------

    @classmethod
    def initialize(
        cls,
        layer_widths: Sequence[int],
        activation: str = "tanh",
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ) -> "MlpNetwork":
        """Xavier-uniform weights, zero biases."""
        rng = rng if rng is not None else np.random.default_rng()
        net = cls(layer_widths, activation, dtype=dtype)
        for (w_sl, _, (w_out, w_in)) in net._layout:
            limit = math.sqrt(6.0 / (w_in + w_out))
            net.params[w_sl] = rng.uniform(-limit, limit, size=w_out * w_in).astype(
                net.dtype
            )
        return net

    @property
    def param_count(self) -> int:
        return self._n_params

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    def _layer(self, index: int):
        w_sl, b_sl, shape = self._layout[index]
        return self.params[w_sl].reshape(shape), self.params[b_sl]

    # -- evaluation -----------------------------------------------------------

    def forward(self, x) -> float:
        """Value at a single input vector."""
        out = self.forward_batch(np.asarray(x, dtype=self.dtype)[None, :])
        return float(out[0])

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Values at a batch of inputs, shape (m, input_dim) -> (m,)."""
        a = self._run(np.asarray(x, dtype=self.dtype))[0][-1]
        return a[:, 0]

    def _run(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"expected input of shape (m, {self.input_dim})")
        activations = [x]
        preacts = []
        a = x
        last = len(self._layout) - 1
        for idx in range(len(self._layout)):
            w, b = self._layer(idx)
            z = a @ w.T + b
            preacts.append(z)
            a = z if idx == last else self._act(z)
            activations.append(a)
        return activations, preacts

    # -- parameter gradients ----------------------------------------------

    def param_gradient(self, x, upstream: float = 1.0) -> np.ndarray:
        """Gradient of upstream * output at a single input, w.r.t. params."""
        x = np.asarray(x, dtype=self.dtype)[None, :]
        return self.param_gradient_batch(x, np.array([upstream], dtype=self.dtype))

    def param_gradient_batch(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Gradient of sum_i upstream_i * output(x_i) w.r.t. the flat params.

        Reverse accumulation over the batch; returns a vector of length
        ``param_count``. Nothing about the input enters the result except
        through the stored forward pass.
        """
        x = np.asarray(x, dtype=self.dtype)
        upstream = np.asarray(upstream, dtype=self.dtype).reshape(-1)
        if upstream.size != x.shape[0]:
            raise ValueError("upstream must have one entry per batch row")
        activations, preacts = self._run(x)
        grad = np.zeros(self._n_params, dtype=self.dtype)
        delta = upstream[:, None]  # d(sum u*y)/d(z_last)
        for idx in range(len(self._layout) - 1, -1, -1):
            w_sl, b_sl, shape = self._layout[idx]
            grad[w_sl] = (delta.T @ activations[idx]).reshape(-1)
            grad[b_sl] = delta.sum(axis=0)
            if idx > 0:
                w, _ = self._layer(idx)
                delta = (delta @ w) * self._act_slope(
                    preacts[idx - 1], activations[idx]
                )
        return grad

    # -- checkpoints -----------------------------------------------------------

    def save(self, path) -> None:
        """Write the binary checkpoint: magic, widths, activation id, params."""
        header = struct.pack("<8sI", _CKPT_MAGIC, len(self.layer_widths))
        header += struct.pack(f"<{len(self.layer_widths)}I", *self.layer_widths)
        header += struct.pack("<B", _ACTIVATION_IDS[self.activation])
        body = np.asarray(self.params, dtype="<f8").tobytes()
        with open(path, "wb") as fh:
            fh.write(header + body)

    @classmethod
    def load(cls, path, dtype=np.float64) -> "MlpNetwork":
        with open(path, "rb") as fh:
            blob = fh.read()
        fixed = struct.calcsize("<8sI")
        if len(blob) < fixed:
            raise ValueError("corrupt checkpoint: truncated header")
        magic, n_widths = struct.unpack_from("<8sI", blob, 0)
        if magic != _CKPT_MAGIC:
            raise ValueError("corrupt checkpoint: bad magic")
        offset = fixed
        widths_size = struct.calcsize(f"<{n_widths}I")
        if len(blob) < offset + widths_size + 1:
            raise ValueError("corrupt checkpoint: truncated header")
        widths = struct.unpack_from(f"<{n_widths}I", blob, offset)
        offset += widths_size
        (act_id,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        if act_id not in _ID_ACTIVATIONS:
            raise ValueError(f"corrupt checkpoint: unknown activation id {act_id}")
        net = cls(widths, _ID_ACTIVATIONS[act_id], dtype=dtype)
        expect = net.param_count * 8
        if len(blob) - offset != expect:
            raise ValueError(
                f"corrupt checkpoint: expected {expect} parameter bytes, "
                f"found {len(blob) - offset}"
            )
        net.params = np.frombuffer(blob, dtype="<f8", offset=offset).astype(net.dtype)
        return net


class DirichletMask:
    """Polynomial cutoff vanishing exactly on the Dirichlet boundary part.

    Boxes multiply one factor per Dirichlet side: (x_k - l_k) for a low face,
    (u_k - x_k) for a high face. Balls use r^2 - |x - c|^2. The polynomial is
    globally defined, so test functions stay smooth when a random step or a
    boundary shift leaves the domain.
    """

    def __init__(self, domain: Domain):
        self.domain = domain
        if domain.shape == "box":
            self._low_axes = sorted(a for a, s in domain.dirichlet_faces if s == "low")
            self._high_axes = sorted(a for a, s in domain.dirichlet_faces if s == "high")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.domain
        if d.shape == "ball":
            out = d.radius**2 - np.sum((x - d.center) ** 2, axis=1)
        else:
            out = np.ones(x.shape[0])
            for a in self._low_axes:
                out = out * (x[:, a] - d.lower[a])
            for a in self._high_axes:
                out = out * (d.upper[a] - x[:, a])
        return float(out[0]) if single else out


class MaskedTestFunction:
    """Test function rho = mask(x) * net(x[, t]), ascent-trainable.

    The mask pins rho to zero on the Dirichlet boundary part; in parabolic
    mode an extra (T - t) factor pins rho(x, T) = 0, and the raw net sees the
    augmented input (x, t). Parameter gradients pass the combined mask factor
    through to the wrapped network, which is the only trainable piece.
    """

    def __init__(self, mask: DirichletMask, net: MlpNetwork, horizon: float | None = None):
        expected = mask.domain.dim + (1 if horizon is not None else 0)
        if net.input_dim != expected:
            raise ValueError(
                f"net input width {net.input_dim} does not match expected {expected}"
            )
        self.mask = mask
        self.net = net
        self.horizon = horizon

    def _augment(self, x: np.ndarray, t) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.horizon is None:
            return x
        tcol = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        return np.column_stack([x, tcol])

    def mask_factor(self, x: np.ndarray, t=None) -> np.ndarray:
        x = np.atleast_2d(x)
        factor = self.mask(x)
        if self.horizon is not None:
            tvals = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
            factor = factor * (self.horizon - tvals)
        return factor

    def __call__(self, x: np.ndarray, t=None) -> np.ndarray:
        single = np.asarray(x).ndim == 1
        x2 = np.atleast_2d(x)
        vals = self.mask_factor(x2, t) * self.net.forward_batch(self._augment(x2, t))
        return float(vals[0]) if single else vals

    def param_gradient_batch(self, x: np.ndarray, t, upstream: np.ndarray) -> np.ndarray:
        """Gradient of sum_i upstream_i * rho(x_i, t_i) w.r.t. the raw net params."""
        x = np.atleast_2d(x)
        scaled = np.asarray(upstream, dtype=float) * self.mask_factor(x, t)
        return self.net.param_gradient_batch(self._augment(x, t), scaled)

    @property
    def params(self) -> np.ndarray:
        return self.net.params


def masked_test_function(
    mask: DirichletMask, net: MlpNetwork, x, t=None, horizon: float | None = None
):
    """Evaluate mask(x) [* (T - t)] * net at x; convenience over the class."""
    return MaskedTestFunction(mask, net, horizon)(x, t)


# -- Adam ------------------------------------------------------------------

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int, dtype=np.float64) -> "AdamState":
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype), 0)


def adam_step(
    params: np.ndarray,
    gradient: np.ndarray,
    state: AdamState,
    lr: float,
    direction: str = "descent",
) -> tuple[np.ndarray, AdamState]:
    """One Adam update; ascent negates the gradient and is otherwise identical."""
    gradient = np.asarray(gradient)
    if gradient.shape != params.shape:
        raise ValueError("gradient and params must have the same shape")
    if not np.all(np.isfinite(gradient)):
        raise DivergenceError(f"diverged: non-finite gradient at optimizer step {state.step + 1}")
    if direction == "ascent":
        gradient = -gradient
    elif direction != "descent":
        raise ValueError("direction must be 'descent' or 'ascent'")
    t = state.step + 1
    m = _ADAM_BETA1 * state.m + (1.0 - _ADAM_BETA1) * gradient
    v = _ADAM_BETA2 * state.v + (1.0 - _ADAM_BETA2) * gradient * gradient
    m_hat = m / (1.0 - _ADAM_BETA1**t)
    v_hat = v / (1.0 - _ADAM_BETA2**t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
    return new_params, AdamState(m, v, t)
