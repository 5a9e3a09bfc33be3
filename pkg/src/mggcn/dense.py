"""Dense float64 kernels with hand-written adjoints, plus Adam.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

DEFAULT_SLOPE = 0.01


class ShapeError(ValueError):
    pass


def as_matrix(x) -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a @ b
    return np.asarray(out) if sp.issparse(a) else out


def matmul_grads(a, b: np.ndarray, grad_out: np.ndarray, need_a: bool = True):
    """Adjoints of ``a @ b``: returns ``(grad_a, grad_b)``.

    ``a`` may be a scipy sparse matrix, in which case ``grad_a`` is not
    computed (sparse inputs are never trainable here).
    """
    if grad_out.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"upstream grad {grad_out.shape} does not match {(a.shape[0], b.shape[1])}")
    grad_b = np.asarray(a.T @ grad_out)
    grad_a = grad_out @ b.T if need_a else None
    return grad_a, grad_b


def leaky_relu(x: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, grad_out: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    return np.where(x > 0, grad_out, slope * grad_out)


def concat_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise CONCAT: row i of the result is ``[a[i], b[i]]``."""
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"cannot concatenate {a.shape} with {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_rows(x: np.ndarray, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`concat_rows`, also the adjoint of it."""
    if not 0 <= width <= x.shape[1]:
        raise ShapeError(f"split width {width} outside [0, {x.shape[1]}]")
    return x[:, :width], x[:, width:]


def mean_operator(index_sets, num_sources: int) -> sp.csr_matrix:
    """Sparse operator whose row i averages the source rows in ``index_sets[i]``.

    Empty sets give an all-zero row, i.e. a zero mean.
    """
    lengths = np.fromiter((len(s) for s in index_sets), dtype=np.int64, count=len(index_sets))
    indptr = np.zeros(len(lengths) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    if indptr[-1]:
        indices = np.concatenate([np.asarray(s, dtype=np.int64) for s in index_sets if len(s)])
    else:
        indices = np.zeros(0, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= num_sources):
        raise ShapeError("mean set refers to a missing source row")
    with np.errstate(divide="ignore"):
        weights = np.repeat(np.where(lengths > 0, 1.0 / np.maximum(lengths, 1), 0.0), lengths)
    return sp.csr_matrix((weights, indices, indptr), shape=(len(lengths), num_sources))


def mean_rows(h, index_sets) -> np.ndarray:
    op = index_sets if sp.issparse(index_sets) else mean_operator(index_sets, h.shape[0])
    return np.asarray(op @ h)


def mean_rows_grad(index_sets, grad_out: np.ndarray, num_sources: int) -> np.ndarray:
    op = index_sets if sp.issparse(index_sets) else mean_operator(index_sets, num_sources)
    return np.asarray(op.T @ grad_out)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    rows, cols = logits.shape
    if labels.shape != (rows,):
        raise ShapeError(f"{len(labels)} labels for {rows} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= cols):
        raise ValueError(f"label out of range [0, {cols})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(rows), labels]
    loss = float(np.mean(log_norm - picked))
    grad = np.exp(z - log_norm[:, None])
    grad[np.arange(rows), labels] -= 1.0
    grad /= rows
    return loss, grad


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **kw)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs are untouched."""
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise ShapeError(f"adam shapes disagree: param {param.shape}, grad {grad.shape}, "
                         f"state {state.first_moment.shape}")
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if weight_decay:
        grad = grad + weight_decay * param
    step = state.step + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1 ** step)
    v_hat = v / (1 - state.beta2 ** step)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_param, AdamState(m, v, step, state.beta1, state.beta2, state.epsilon)
