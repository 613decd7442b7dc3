"""Minimal numpy building blocks with hand-derived exact gradients.

Parameters live in named float64 blocks inside a ParamVector; modules keep
references to their blocks, so loading a flat vector updates them in place.
Every backward pass accumulates into a ParamVector of matching layout.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class ParamVector:
    """Ordered named parameter blocks with flat-vector import/export."""

    def __init__(self):
        self._blocks: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._blocks:
            raise ValueError(f"duplicate parameter block {name!r}")
        arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
        self._blocks[name] = arr
        return arr

    def block(self, name: str) -> np.ndarray:
        return self._blocks[name]

    def names(self) -> list[str]:
        return list(self._blocks)

    @property
    def size(self) -> int:
        return sum(b.size for b in self._blocks.values())

    def layout(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        """Block name -> (flat offset, shape); slices are disjoint and exhaustive."""
        out, offset = {}, 0
        for name, block in self._blocks.items():
            out[name] = (offset, block.shape)
            offset += block.size
        return out

    def to_flat(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros(0)
        return np.concatenate([b.ravel() for b in self._blocks.values()])

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ValueError(f"flat vector length {vec.size} != {self.size}")
        offset = 0
        for block in self._blocks.values():
            block[...] = vec[offset : offset + block.size].reshape(block.shape)
            offset += block.size

    def new_zeros(self) -> "ParamVector":
        out = ParamVector()
        for name, block in self._blocks.items():
            out.add(name, np.zeros_like(block))
        return out

    def copy(self) -> "ParamVector":
        out = ParamVector()
        for name, block in self._blocks.items():
            out.add(name, block.copy())
        return out

    def copy_from(self, other: "ParamVector") -> None:
        if self.names() != other.names():
            raise ValueError("parameter layouts differ")
        for name, block in self._blocks.items():
            if block.shape != other._blocks[name].shape:
                raise ValueError(f"block {name!r} shape mismatch")
            block[...] = other._blocks[name]

    def zero_(self) -> None:
        for block in self._blocks.values():
            block[...] = 0.0


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def _activation_backward(name: str, dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "linear":
        return dy
    if name == "relu":
        return dy * (y > 0.0)
    if name == "tanh":
        return dy * (1.0 - y * y)
    raise ValueError(f"unknown activation {name!r}")


class Dense:
    """Affine layer y = act(x W^T + b) over row-batched inputs."""

    def __init__(self, params: ParamVector, name: str, in_dim: int, out_dim: int,
                 activation: str = "linear", rng: np.random.Generator | None = None):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = params.add(f"{name}.w", uniform_init(rng, (out_dim, in_dim), in_dim))
        self.b = params.add(f"{name}.b", uniform_init(rng, (out_dim,), in_dim))

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: input width {x.shape[-1]} != {self.in_dim}")
        y = _apply_activation(self.activation, x @ self.w.T + self.b)
        return y, (x, y)

    def backward(self, dy: np.ndarray, cache: tuple, grads: ParamVector) -> np.ndarray:
        x, y = cache
        dz = _activation_backward(self.activation, np.asarray(dy, dtype=np.float64), y)
        grads.block(f"{self.name}.w")[...] += dz.reshape(-1, self.out_dim).T @ x.reshape(-1, self.in_dim)
        grads.block(f"{self.name}.b")[...] += dz.reshape(-1, self.out_dim).sum(axis=0)
        return dz @ self.w


class Mlp:
    """Two dense layers: ReLU hidden, linear output."""

    def __init__(self, params: ParamVector, name: str, in_dim: int, hidden_dim: int,
                 out_dim: int, rng: np.random.Generator):
        self.l1 = Dense(params, f"{name}.l1", in_dim, hidden_dim, "relu", rng)
        self.l2 = Dense(params, f"{name}.l2", hidden_dim, out_dim, "linear", rng)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        h, c1 = self.l1.forward(x)
        y, c2 = self.l2.forward(h)
        return y, (c1, c2)

    def backward(self, dy: np.ndarray, cache: tuple, grads: ParamVector) -> np.ndarray:
        c1, c2 = cache
        dh = self.l2.backward(dy, c2, grads)
        return self.l1.backward(dh, c1, grads)


class GruCell:
    """Gated recurrent cell: h' = (1 - z) * h + z * tanh(candidate)."""

    def __init__(self, params: ParamVector, name: str, in_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        self.name = name
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        blocks = {}
        for gate in ("z", "r", "c"):
            blocks[f"w{gate}"] = params.add(f"{name}.w{gate}", uniform_init(rng, (hidden_dim, in_dim), in_dim))
            blocks[f"u{gate}"] = params.add(f"{name}.u{gate}", uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim))
            blocks[f"b{gate}"] = params.add(f"{name}.b{gate}", uniform_init(rng, (hidden_dim,), in_dim))
        self._p = blocks

    def step(self, h_prev: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, tuple]:
        p = self._p
        x = np.asarray(x, dtype=np.float64)
        h_prev = np.asarray(h_prev, dtype=np.float64)
        if x.shape[-1] != self.in_dim or h_prev.shape[-1] != self.hidden_dim:
            raise ValueError(f"{self.name}: input/hidden width mismatch")
        z = _sigmoid(x @ p["wz"].T + h_prev @ p["uz"].T + p["bz"])
        r = _sigmoid(x @ p["wr"].T + h_prev @ p["ur"].T + p["br"])
        rh = r * h_prev
        c = np.tanh(x @ p["wc"].T + rh @ p["uc"].T + p["bc"])
        h = (1.0 - z) * h_prev + z * c
        return h, (x, h_prev, z, r, rh, c)

    def step_backward(self, dh: np.ndarray, cache: tuple, grads: ParamVector) -> tuple[np.ndarray, np.ndarray]:
        x, h_prev, z, r, rh, c = cache
        p = self._p
        name = self.name
        dh = np.asarray(dh, dtype=np.float64)
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)

        dc_pre = dc * (1.0 - c * c)
        grads.block(f"{name}.wc")[...] += dc_pre.T @ x
        grads.block(f"{name}.uc")[...] += dc_pre.T @ rh
        grads.block(f"{name}.bc")[...] += dc_pre.sum(axis=0)
        drh = dc_pre @ p["uc"]
        dr = drh * h_prev
        dh_prev += drh * r

        dz_pre = dz * z * (1.0 - z)
        grads.block(f"{name}.wz")[...] += dz_pre.T @ x
        grads.block(f"{name}.uz")[...] += dz_pre.T @ h_prev
        grads.block(f"{name}.bz")[...] += dz_pre.sum(axis=0)
        dh_prev += dz_pre @ p["uz"]

        dr_pre = dr * r * (1.0 - r)
        grads.block(f"{name}.wr")[...] += dr_pre.T @ x
        grads.block(f"{name}.ur")[...] += dr_pre.T @ h_prev
        grads.block(f"{name}.br")[...] += dr_pre.sum(axis=0)
        dh_prev += dr_pre @ p["ur"]

        dx = dz_pre @ p["wz"] + dr_pre @ p["wr"] + dc_pre @ p["wc"]
        return dh_prev, dx

    def bptt(self, xs: np.ndarray, upstream: np.ndarray, grads: ParamVector,
             h0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Forward over a (T, B, in) sequence then exact backward through time.

        upstream holds dL/dh_t for every step's output. Returns (dxs, dh0).
        """
        xs = np.asarray(xs, dtype=np.float64)
        upstream = np.asarray(upstream, dtype=np.float64)
        t_len, batch = xs.shape[0], xs.shape[1]
        h = np.zeros((batch, self.hidden_dim)) if h0 is None else np.asarray(h0, dtype=np.float64)
        caches = []
        for t in range(t_len):
            h, cache = self.step(h, xs[t])
            caches.append(cache)
        dxs = np.zeros_like(xs)
        dh = np.zeros((batch, self.hidden_dim))
        for t in range(t_len - 1, -1, -1):
            dh = dh + upstream[t]
            dh, dxs[t] = self.step_backward(dh, caches[t], grads)
        return dxs, dh


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class HyperNetwork:
    """Two dense layers mapping a global state to a generated affine layer.

    The generated layer has gen_in inputs and gen_out outputs; generated
    weights carry no sign constraint.
    """

    def __init__(self, params: ParamVector, name: str, state_dim: int, hidden_dim: int,
                 gen_in: int, gen_out: int, rng: np.random.Generator):
        self.state_dim = state_dim
        self.gen_in = gen_in
        self.gen_out = gen_out
        out_dim = gen_in * gen_out + gen_out
        self.l1 = Dense(params, f"{name}.l1", state_dim, hidden_dim, "relu", rng)
        self.l2 = Dense(params, f"{name}.l2", hidden_dim, out_dim, "linear", rng)

    def generate(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray, tuple]:
        """states (B, state_dim) -> weights (B, gen_in, gen_out), biases (B, gen_out)."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        h, c1 = self.l1.forward(states)
        flat, c2 = self.l2.forward(h)
        batch = states.shape[0]
        w = flat[:, : self.gen_in * self.gen_out].reshape(batch, self.gen_in, self.gen_out)
        b = flat[:, self.gen_in * self.gen_out :]
        return w, b, (c1, c2)

    def backward(self, dw: np.ndarray, db: np.ndarray, cache: tuple, grads: ParamVector) -> np.ndarray:
        c1, c2 = cache
        batch = db.shape[0]
        dflat = np.concatenate([dw.reshape(batch, -1), db], axis=1)
        dh = self.l2.backward(dflat, c2, grads)
        return self.l1.backward(dh, c1, grads)


class Adam:
    """Bias-corrected Adam over a ParamVector's flat view."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step_count = 0

    def update(self, params: ParamVector, grads: ParamVector) -> None:
        g = grads.to_flat()
        if g.size != self.m.size:
            raise ValueError(f"gradient length {g.size} != {self.m.size}")
        if not np.isfinite(g).all():
            raise ValueError("non-finite gradient entries rejected")
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        params.load_flat(params.to_flat() - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))


def finite_diff_check(loss_fn: Callable[[], float], params: ParamVector,
                      analytic: ParamVector, rng: np.random.Generator,
                      samples: int = 50, step: float = 1e-5) -> float:
    """Max relative error of analytic gradients against central differences.

    Relative to max(|fd|, |analytic|, 1) so zero-gradient coordinates cannot
    divide by vanishing denominators.
    """
    flat = params.to_flat()
    grad = analytic.to_flat()
    if flat.size != grad.size:
        raise ValueError("analytic gradient layout mismatch")
    count = min(samples, flat.size)
    coords = rng.choice(flat.size, size=count, replace=False)
    worst = 0.0
    for i in coords:
        saved = flat[i]
        flat[i] = saved + step
        params.load_flat(flat)
        up = loss_fn()
        flat[i] = saved - step
        params.load_flat(flat)
        down = loss_fn()
        flat[i] = saved
        params.load_flat(flat)
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("non-finite loss during finite differences")
        fd = (up - down) / (2.0 * step)
        err = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1.0)
        worst = max(worst, err)
    return worst
