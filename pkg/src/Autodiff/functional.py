"""
微分可能なプリミティブ群。

どの演算も入力に tape 上のテンソルが 1 つでもあれば tape に記録し、
そうでなければ記録なしで値だけを返す（評価用の順伝播）。
出力に NaN / Inf が出たら NonFiniteError を送出する。
"""
from __future__ import annotations

from typing import Any, Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from Autodiff.tape import GradientTape
from Autodiff.tensor import Tensor
from Domain.errors import NonFiniteError, ShapeMismatchError

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# 共通処理
# ---------------------------------------------------------------------------


def _tape_of(inputs: Sequence[Tensor]) -> Optional[GradientTape]:
    tape: Optional[GradientTape] = None
    for t in inputs:
        if not t.tracked:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise ValueError("inputs are recorded on different tapes")
    return tape


def _emit(
    op: str,
    inputs: Sequence[Tensor],
    out: np.ndarray,
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(op, {"shape": out.shape})
    out = np.ascontiguousarray(out)
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(out)
    return tape.record(op, inputs, out, backward_fn)


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    # Python スカラーは相手テンソルの dtype に合わせる
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not isinstance(a, Tensor):
        a, b = Tensor(a), Tensor(b)
    return a, b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _require_ndim(op: str, name: str, t: Tensor, ndim: int) -> None:
    if t.ndim != ndim:
        raise ShapeMismatchError(op, f"{name}.ndim", ndim, t.ndim)


# ---------------------------------------------------------------------------
# 要素ごとの演算と縮約
# ---------------------------------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _emit(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return _emit(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _emit(
        "mul",
        (a, b),
        ad * bd,
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data
    return _emit(
        "div",
        (a, b),
        ad / bd,
        lambda g: (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        ),
    )


def reduce_sum(x: Tensor, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    shape = x.shape

    def backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", (x,), np.sum(x.data, axis=axis, keepdims=keepdims), backward)


def mean(x: Tensor, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _emit("transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inverse),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_ndim("matmul", "a", a, 2)
    _require_ndim("matmul", "b", b, 2)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", "inner", a.shape[1], b.shape[0])
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, slope * x.data)
    return _emit(
        "leaky_relu",
        (x,),
        out,
        lambda g: (np.where(positive, g, slope * g),),
    )


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _emit(
        "softmax",
        (x,),
        s,
        lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),),
    )


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return _emit(
        "log_softmax",
        (x,),
        out,
        lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),),
    )


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    first = xs[0]
    for t in xs:
        _require_ndim("concat_channels", "input", t, 4)
        if t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeMismatchError("concat_channels", "N/H/W", first.shape, t.shape)
    splits = np.cumsum([t.shape[1] for t in xs])[:-1]
    return _emit(
        "concat",
        tuple(xs),
        np.concatenate([t.data for t in xs], axis=1),
        lambda g: tuple(np.split(g, splits, axis=1)),
    )


def slice_channels(x: Tensor, start: int, stop: Optional[int] = None) -> Tensor:
    _require_ndim("slice_channels", "input", x, 4)
    shape = x.shape

    def backward(g: np.ndarray):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _emit("slice_channels", (x,), x.data[:, start:stop], backward)


def max_pool2d(x: Tensor) -> Tensor:
    """
    2x2 / stride 2 の最大値プーリング。同値は先頭（左上）を採用。
    """
    _require_ndim("max_pool2d", "input", x, 4)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatchError("max_pool2d", "H/W (even)", "even", (h, w))
    h2, w2 = h // 2, w // 2
    blocks = x.data.reshape(n, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = blocks.argmax(axis=-1)[..., None]
    out = np.take_along_axis(blocks, idx, axis=-1)[..., 0]

    def backward(g: np.ndarray):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx, g[..., None], axis=-1)
        gx = gb.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return _emit("max_pool2d", (x,), out, backward)


# ---------------------------------------------------------------------------
# 畳み込み（相互相関）と転置畳み込み
# ---------------------------------------------------------------------------


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) のビュー
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _scatter_windows(cols: np.ndarray, out_shape: tuple[int, ...], stride: int) -> np.ndarray:
    """
    cols (N, Ho, Wo, C, kh, kw) を窓位置へ足し込む（im2col の随伴）。
    """
    _, ho, wo, _, kh, kw = cols.shape
    out = np.zeros(out_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def _bias_term(bias: Optional[Tensor], cout: int, op: str) -> np.ndarray | int:
    if bias is None:
        return 0
    _require_ndim(op, "bias", bias, 1)
    if bias.shape[0] != cout:
        raise ShapeMismatchError(op, "bias.Cout", cout, bias.shape[0])
    return bias.data[None, :, None, None]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    _require_ndim("conv2d", "input", x, 4)
    _require_ndim("conv2d", "weight", weight, 4)
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeMismatchError("conv2d", "Cin", wcin, cin)
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} / padding={padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp:
        raise ShapeMismatchError("conv2d", "kh", f"<= {hp}", kh)
    if kw > wp:
        raise ShapeMismatchError("conv2d", "kw", f"<= {wp}", kw)
    if (hp - kh) % stride:
        raise ShapeMismatchError("conv2d", "H (stride division)", f"multiple of {stride}", hp - kh)
    if (wp - kw) % stride:
        raise ShapeMismatchError("conv2d", "W (stride division)", f"multiple of {stride}", wp - kw)
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = _pad(x.data, padding)
    win = _windows(xp, kh, kw, stride, ho, wo)
    wd = weight.data
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + _bias_term(bias, cout, "conv2d")

    def backward(g: np.ndarray):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, wd, axes=([1], [0]))
        gxp = _scatter_windows(cols, xp.shape, stride)
        gx = gxp[:, :, padding : padding + h, padding : padding + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", inputs, out, backward)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    weight: (Cin, Cout, kh, kw)。同じ重みを持つ conv2d の入力勾配写像そのもの。
    """
    _require_ndim("conv_transpose2d", "input", x, 4)
    _require_ndim("conv_transpose2d", "weight", weight, 4)
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise ShapeMismatchError("conv_transpose2d", "Cin", wcin, cin)
    if stride < 1 or padding < 0:
        raise ValueError(f"conv_transpose2d: invalid stride={stride} / padding={padding}")
    hfull, wfull = (h - 1) * stride + kh, (w - 1) * stride + kw
    hout, wout = hfull - 2 * padding, wfull - 2 * padding
    if hout < 1 or wout < 1:
        raise ShapeMismatchError("conv_transpose2d", "H'/W'", ">= 1", (hout, wout))

    xd, wd = x.data, weight.data
    cols = np.tensordot(xd, wd, axes=([1], [0]))
    full = _scatter_windows(cols, (n, cout, hfull, wfull), stride)
    out = full[:, :, padding : padding + hout, padding : padding + wout]
    out = out + _bias_term(bias, cout, "conv_transpose2d")

    def backward(g: np.ndarray):
        win = _windows(_pad(g, padding), kh, kw, stride, h, w)
        gx = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(xd, win, axes=([0, 2, 3], [0, 2, 3]))
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv_transpose2d", inputs, out, backward)


def instance_norm2d(x: Tensor, scale: Tensor, shift: Tensor, eps: float = NORM_EPS) -> Tensor:
    """
    (n, c) ごとに H×W 上の平均・母分散で正規化し、チャネルごとのアフィン変換をかける。
    """
    _require_ndim("instance_norm2d", "input", x, 4)
    c = x.shape[1]
    for name, t in (("scale", scale), ("shift", shift)):
        _require_ndim("instance_norm2d", name, t, 1)
        if t.shape[0] != c:
            raise ShapeMismatchError("instance_norm2d", f"{name}.C", c, t.shape[0])
    m = x.shape[2] * x.shape[3]
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv
    sd = scale.data[None, :, None, None]
    out = sd * xhat + shift.data[None, :, None, None]

    def backward(g: np.ndarray):
        gxhat = g * sd
        gx = (inv / m) * (
            m * gxhat
            - gxhat.sum(axis=(2, 3), keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=(2, 3), keepdims=True)
        )
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _emit("instance_norm2d", (x, scale, shift), out, backward)
