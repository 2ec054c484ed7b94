"""Minimal reverse-mode automatic differentiation over float64 numpy
arrays, with exactly the primitives the two neural modules need, plus
central-finite-difference gradient checking and an NAG optimizer.

A Tensor wraps a value and remembers how it was computed; backward()
topologically sorts the implicit tape and accumulates adjoints into the
leaves. Everything is 64-bit: desk scale makes speed irrelevant and
keeps gradient checks tight.
"""

from __future__ import annotations

import numpy as np

from .errors import NonScalarLoss, OddDim, ShapeMismatch


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name})"


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value, name: str) -> Tensor:
    return Tensor(value, name=name)


# --- primitives --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; b may be a vector broadcast over a's rows."""
    if a.value.shape == b.value.shape:
        def back(g):
            return g, g
    elif b.value.ndim == 1 and a.value.shape[-1:] == b.value.shape:
        def back(g):
            return g, g.reshape(-1, b.value.shape[0]).sum(axis=0)
    else:
        raise ShapeMismatch(f"add: {a.value.shape} vs {b.value.shape}")
    return Tensor(a.value + b.value, (a, b), back)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"multiply: {a.value.shape} vs {b.value.shape}")
    return Tensor(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def scale(a: Tensor, factor: float) -> Tensor:
    return Tensor(a.value * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul: {a.value.shape} @ {b.value.shape}")
    return Tensor(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def transpose(a: Tensor) -> Tensor:
    return Tensor(a.value.T, (a,), lambda g: (g.T,))


def dot(u: Tensor, v: Tensor) -> Tensor:
    if u.value.shape != v.value.shape or u.value.ndim != 1:
        raise ShapeMismatch(f"dot: {u.value.shape} vs {v.value.shape}")
    return Tensor(np.dot(u.value, v.value), (u, v), lambda g: (g * v.value, g * u.value))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def back(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        return (gt,)

    return Tensor(table.value[ids], (table,), back)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor, causal: bool = False) -> Tensor:
    """Length-preserving 1-d convolution, stride 1.

    x: [T, d_in], kernel: [k, d_in, d_out], bias: [d_out]. Symmetric zero
    padding (k odd) by default; causal=True pads left only so position t
    sees inputs <= t.
    """
    if x.value.ndim != 2 or kernel.value.ndim != 3:
        raise ShapeMismatch(f"conv1d: x {x.value.shape}, kernel {kernel.value.shape}")
    T, d_in = x.value.shape
    k, kd_in, d_out = kernel.value.shape
    if kd_in != d_in or bias.value.shape != (d_out,):
        raise ShapeMismatch(f"conv1d: x {x.value.shape}, kernel {kernel.value.shape}, bias {bias.value.shape}")
    if not causal and k % 2 == 0:
        raise ShapeMismatch("conv1d: symmetric padding needs odd kernel width")
    pad_left = k - 1 if causal else (k - 1) // 2
    pad_right = 0 if causal else (k - 1) // 2
    xp = np.pad(x.value, ((pad_left, pad_right), (0, 0)))
    out = np.tile(bias.value, (T, 1))
    for tap in range(k):
        out += xp[tap : tap + T] @ kernel.value[tap]

    def back(g):
        gk = np.empty_like(kernel.value)
        gxp = np.zeros_like(xp)
        for tap in range(k):
            gk[tap] = xp[tap : tap + T].T @ g
            gxp[tap : tap + T] += g @ kernel.value[tap].T
        gx = gxp[pad_left : pad_left + T]
        return gx, gk, g.sum(axis=0)

    return Tensor(out, (x, kernel, bias), back)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit on the last axis: a * sigmoid(b) for the two
    halves of an even-width input."""
    width = x.value.shape[-1]
    if width % 2:
        raise OddDim(f"glu needs even last dim, got {width}")
    h = width // 2
    a = x.value[..., :h]
    b = x.value[..., h:]
    sig = 1.0 / (1.0 + np.exp(-b))

    def back(g):
        ga = g * sig
        gb = g * a * sig * (1.0 - sig)
        return (np.concatenate([ga, gb], axis=-1),)

    return Tensor(a * sig, (x,), back)


def softmax(x: Tensor) -> Tensor:
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        return ((g - inner) * y,)

    return Tensor(y, (x,), back)


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), (x,), lambda g: (g / x.value,))


def mean(x: Tensor) -> Tensor:
    n = x.value.size

    def back(g):
        return (np.full_like(x.value, g / n),)

    return Tensor(x.value.mean(), (x,), back)


def sum_all(x: Tensor) -> Tensor:
    return Tensor(x.value.sum(), (x,), lambda g: (np.full_like(x.value, g),))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    sizes = [t.value.shape[axis] for t in tensors]

    def back(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), back)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        gx = np.zeros_like(x.value)
        gx[start:stop] = g
        return (gx,)

    return Tensor(x.value[start:stop], (x,), back)


def select_positions(x: Tensor, ids) -> Tensor:
    """Pick x[n, ids[n]] for each row n."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(x.value.shape[0])

    def back(g):
        gx = np.zeros_like(x.value)
        gx[rows, ids] = g
        return (gx,)

    return Tensor(x.value[rows, ids], (x,), back)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the time axis of a [T, d] tensor."""
    T = x.value.shape[0]

    def back(g):
        return (np.tile(g / T, (T, 1)),)

    return Tensor(x.value.mean(axis=0), (x,), back)


# --- backward pass -----------------------------------------------------


def backward(loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Reverse-accumulate gradients from a scalar loss. Returns a map
    param-name -> gradient for every registered parameter; parameters the
    loss never touched get zero gradients."""
    if loss.value.shape != ():
        raise NonScalarLoss(f"loss has shape {loss.value.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    if params is None:
        # attach .grad to every leaf reached
        for node in order:
            if node.backward_fn is None and id(node) in grads:
                node.grad = grads[id(node)]
        return {}
    out = {}
    for name, p in params.items():
        out[name] = grads.get(id(p), np.zeros_like(p.value))
    return out


# --- gradient checking -------------------------------------------------


def grad_check(
    fn,
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords_per_tensor: int = 64,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between tape gradients and central finite
    differences, over sampled coordinates. ``fn()`` must rebuild the
    scalar loss from the parameters' current values."""
    if rng is None:
        rng = np.random.default_rng(0)
    analytic = backward(fn(), params)
    worst = 0.0
    for name, p in params.items():
        flat = p.value.reshape(-1)
        n = flat.size
        coords = (
            np.arange(n)
            if n <= max_coords_per_tensor
            else rng.choice(n, size=max_coords_per_tensor, replace=False)
        )
        ga = analytic[name].reshape(-1)
        for c in coords:
            original = flat[c]
            flat[c] = original + eps
            up = float(fn().value)
            flat[c] = original - eps
            down = float(fn().value)
            flat[c] = original
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(numeric), abs(ga[c]), 1.0)
            worst = max(worst, abs(numeric - ga[c]) / denom)
    return worst


# --- optimizer ---------------------------------------------------------


class NAGOptimizer:
    """SGD with Nesterov momentum and global gradient-norm clipping."""

    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float,
        momentum: float = 0.99,
        clip_norm: float = 0.1,
    ):
        self.params = params
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {name: np.zeros_like(p.value) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        if self.clip_norm > 0:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.clip_norm:
                factor = self.clip_norm / total
                grads = {name: g * factor for name, g in grads.items()}
        for name, p in self.params.items():
            g = grads[name]
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.value -= self.learning_rate * (g + self.momentum * v)
