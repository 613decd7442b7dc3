"""Rank-K canonical-polyadic value tables with exact dense materialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DENSE_SIZE = 10**7


@dataclass(frozen=True, eq=False)
class CpTensor:
    """Sum of K outer products of per-mode factor vectors, shape (D, K, A)."""

    factors: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.factors, dtype=np.float64))
        if arr.ndim != 3:
            raise ValueError(f"factors must have shape (modes, rank, actions), got {arr.shape}")
        d, k, a = arr.shape
        if d < 1 or k < 1 or a < 2:
            raise ValueError(f"need modes >= 1, rank >= 1, actions >= 2, got {arr.shape}")
        object.__setattr__(self, "factors", arr)

    @property
    def modes(self) -> int:
        return self.factors.shape[0]

    @property
    def rank(self) -> int:
        return self.factors.shape[1]

    @property
    def actions(self) -> int:
        return self.factors.shape[2]


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Explicit D-way table, flat row-major with the first agent slowest."""

    modes: int
    actions: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64)).ravel()
        if vals.size != self.actions**self.modes:
            raise ValueError(
                f"dense tensor needs {self.actions}^{self.modes} values, got {vals.size}"
            )
        object.__setattr__(self, "values", vals)

    def lookup(self, joint_action) -> float:
        idx = np.ravel_multi_index(tuple(joint_action), (self.actions,) * self.modes)
        return float(self.values[idx])

    def as_ndarray(self) -> np.ndarray:
        return self.values.reshape((self.actions,) * self.modes)


def _check_action(cp: CpTensor, joint_action) -> np.ndarray:
    action = np.asarray(joint_action, dtype=np.int64)
    if action.shape != (cp.modes,):
        raise ValueError(f"joint action must list {cp.modes} indices, got shape {action.shape}")
    if (action < 0).any() or (action >= cp.actions).any():
        raise ValueError(f"action index out of range [0, {cp.actions})")
    return action


def cp_evaluate(cp: CpTensor, joint_action) -> float:
    """Value at one joint action: sum over rank of the per-mode entry products."""
    action = _check_action(cp, joint_action)
    picked = cp.factors[np.arange(cp.modes), :, action]  # (D, K)
    return float(picked.prod(axis=0).sum())


def cp_evaluate_grad(cp: CpTensor, joint_action) -> tuple[float, np.ndarray]:
    """Value plus the exact gradient with respect to every factor entry."""
    action = _check_action(cp, joint_action)
    picked = cp.factors[np.arange(cp.modes), :, action]  # (D, K)
    value = float(picked.prod(axis=0).sum())
    grad = np.zeros_like(cp.factors)
    for d in range(cp.modes):
        others = np.delete(picked, d, axis=0).prod(axis=0) if cp.modes > 1 else np.ones(cp.rank)
        grad[d, :, action[d]] = others
    return value, grad


def cp_materialize(cp: CpTensor) -> DenseTensor:
    """Expand to the full A^D table; guarded against runaway sizes."""
    size = cp.actions**cp.modes
    if size > MAX_DENSE_SIZE:
        raise ValueError(f"dense size {size} exceeds guard {MAX_DENSE_SIZE}")
    acc = cp.factors[0]  # (K, A)
    for d in range(1, cp.modes):
        acc = (acc[:, :, None] * cp.factors[d][:, None, :]).reshape(cp.rank, -1)
    return DenseTensor(cp.modes, cp.actions, acc.sum(axis=0))


def cp_from_heads(head_output, modes: int, rank: int, actions: int) -> CpTensor:
    """Reshape a flat head output (mode-major, rank middle, action inner) into factors."""
    vec = np.asarray(head_output, dtype=np.float64).ravel()
    expected = modes * rank * actions
    if vec.size != expected:
        raise ValueError(f"head output length {vec.size} != modes*rank*actions = {expected}")
    return CpTensor(vec.reshape(modes, rank, actions))


def cp_flatten(cp: CpTensor) -> np.ndarray:
    """Inverse of cp_from_heads."""
    return cp.factors.reshape(-1).copy()


def cp_evaluate_batch(factors: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Vectorized cp_evaluate for stacked factors (R, D, K, A) at actions (R, D)."""
    r, d, _, _ = factors.shape
    picked = factors[np.arange(r)[:, None], np.arange(d)[None, :], :, actions]  # (R, D, K)
    return picked.prod(axis=1).sum(axis=1)


def cp_evaluate_batch_grad(factors: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched value and gradient; gradient has the factors' shape."""
    r, d, k, _ = factors.shape
    rows = np.arange(r)
    picked = factors[rows[:, None], np.arange(d)[None, :], :, actions]  # (R, D, K)
    values = picked.prod(axis=1).sum(axis=1)
    grad = np.zeros_like(factors)
    for mode in range(d):
        others = np.ones((r, k))
        for other in range(d):
            if other != mode:
                others = others * picked[:, other, :]
        grad[rows, mode, :, actions[:, mode]] = others
    return values, grad


def cp_materialize_batch(factors: np.ndarray) -> np.ndarray:
    """Vectorized cp_materialize for stacked factors (R, D, K, A) -> (R, A^D)."""
    r, d, k, a = factors.shape
    if a**d > MAX_DENSE_SIZE:
        raise ValueError(f"dense size {a**d} exceeds guard {MAX_DENSE_SIZE}")
    acc = factors[:, 0]  # (R, K, A)
    for mode in range(1, d):
        acc = (acc[:, :, :, None] * factors[:, mode][:, :, None, :]).reshape(r, k, -1)
    return acc.sum(axis=1)
