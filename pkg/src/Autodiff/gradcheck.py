from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from Autodiff.tape import GradientTape, backward
from Autodiff.tensor import Tensor

GRADCHECK_STEP = 1e-5


def _evaluate(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> float:
    return float(fn(*[Tensor(a) for a in arrays]).data.reshape(-1)[0])


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    tape = GradientTape()
    tensors = [tape.parameter(i, np.array(a, dtype=np.float64)) for i, a in enumerate(arrays)]
    grads = backward(tape, fn(*tensors))
    return [grads[i] for i in range(len(arrays))]


def numerical_gradients(
    fn: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    eps: float = GRADCHECK_STEP,
) -> list[np.ndarray]:
    """
    中心差分 (f(x+h) - f(x-h)) / 2h。配列は float64 のコピーで扱う。
    """
    work = [np.array(a, dtype=np.float64) for a in arrays]
    result = []
    for arr in work:
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            f_plus = _evaluate(fn, work)
            arr[idx] = orig - eps
            f_minus = _evaluate(fn, work)
            arr[idx] = orig
            grad[idx] = (f_plus - f_minus) / (2.0 * eps)
        result.append(grad)
    return result


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-12)
    return float(np.linalg.norm(analytic - numeric)) / denom


def check_gradients(
    fn: Callable[..., Tensor],
    arrays: Sequence[np.ndarray],
    eps: float = GRADCHECK_STEP,
) -> float:
    """
    fn(*tensors) はスカラーを返すこと。全入力についての最大相対誤差を返す。
    """
    analytic = analytic_gradients(fn, arrays)
    numeric = numerical_gradients(fn, arrays, eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
