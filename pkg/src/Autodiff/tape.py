from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from Autodiff.tensor import Tensor
from Domain.errors import NonFiniteError, ShapeMismatchError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeNode:
    """
    tape 上の 1 演算。inputs は入力ノード番号（定数入力は None）。
    """

    node_id: int
    op: str
    inputs: tuple[Optional[int], ...]
    output: np.ndarray
    backward_fn: Optional[BackwardFn] = None
    param_id: Optional[int] = None


@dataclass
class GradientTape:
    """
    1 回の順伝播を記録する追記専用の tape。ノード番号は記録順（＝トポロジカル順）。
    """

    nodes: list[TapeNode] = field(default_factory=list)
    param_nodes: dict[int, int] = field(default_factory=dict)
    gradients: dict[int, np.ndarray] = field(default_factory=dict)
    backward_count: int = 0

    def parameter(self, param_id: int, array: np.ndarray) -> Tensor:
        """
        パラメータを葉ノードとして登録する。同じ param_id の二重登録は同じ葉を返す。
        """
        if param_id in self.param_nodes:
            node = self.nodes[self.param_nodes[param_id]]
            return Tensor(node.output, tape=self, node_id=node.node_id, param_id=param_id)
        node_id = len(self.nodes)
        self.nodes.append(
            TapeNode(node_id=node_id, op="parameter", inputs=(), output=array, param_id=param_id)
        )
        self.param_nodes[param_id] = node_id
        return Tensor(array, tape=self, node_id=node_id, param_id=param_id)

    def record(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: np.ndarray,
        backward_fn: BackwardFn,
    ) -> Tensor:
        node_id = len(self.nodes)
        input_ids = tuple(t.node_id if t.tape is self else None for t in inputs)
        self.nodes.append(
            TapeNode(
                node_id=node_id,
                op=op,
                inputs=input_ids,
                output=output,
                backward_fn=backward_fn,
            )
        )
        return Tensor(output, tape=self, node_id=node_id)

    def __len__(self) -> int:
        return len(self.nodes)


def backward(tape: GradientTape, loss: Tensor) -> dict[int, np.ndarray]:
    """
    loss（スカラー）から逆伝播し、param_id -> 勾配 の辞書を返す。
    loss に到達しないパラメータの勾配は 0。
    """
    if loss.size != 1:
        raise ShapeMismatchError("backward", "loss", "scalar", loss.shape)
    if loss.tape is not tape or loss.node_id is None:
        raise ValueError("backward: loss was not produced on this tape")

    pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    param_grads: dict[int, np.ndarray] = {}

    for node in reversed(tape.nodes[: loss.node_id + 1]):
        grad = pending.pop(node.node_id, None)
        if grad is None:
            continue
        if node.param_id is not None:
            param_grads[node.param_id] = grad
            continue

        input_grads = node.backward_fn(grad)
        for input_id, g in zip(node.inputs, input_grads):
            if input_id is None or g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(
                    f"{node.op}.backward", {"node": node.node_id, "input": input_id}
                )
            prev = pending.get(input_id)
            pending[input_id] = g if prev is None else prev + g

    result: dict[int, np.ndarray] = {}
    for param_id, node_id in tape.param_nodes.items():
        value = tape.nodes[node_id].output
        g = param_grads.get(param_id)
        if g is None:
            g = np.zeros_like(value)
        if g.shape != value.shape:
            raise ShapeMismatchError("backward", f"param {param_id}", value.shape, g.shape)
        result[param_id] = np.ascontiguousarray(g, dtype=value.dtype)

    tape.gradients = result
    tape.backward_count += 1
    return result
