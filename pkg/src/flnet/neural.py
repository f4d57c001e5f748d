"""Dense feed-forward network with manual backpropagation and Adam.

Hidden layers use the rectifier, the output layer is linear.  The loss is
the squared error on one output per sample (the Q-value of the action that
was taken); every other output receives zero gradient.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_MAGIC = b"FLMLP"
CHECKPOINT_VERSION = 1

_FLUSH_EVERY = 50
_FLUSH_BELOW = 1e-30


class Mlp:
    """Multilayer perceptron.

    Parameters
    ----------
    layer_sizes:
        ``(input_dim, h1, ..., output_dim)``.
    rng:
        Source for the uniform Glorot initialization; omit to start from
        all-zero parameters.
    """

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator | None = None,
                 dtype=np.float64):
        if len(layer_sizes) < 2 or any(int(n) < 1 for n in layer_sizes):
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out), dtype=dtype)
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out, dtype=dtype))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays, interleaved ``[W1, b1, W2, b2, ...]`` (live views)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)

    def __repr__(self) -> str:
        return f"Mlp({'x'.join(map(str, self.layer_sizes))})"


def _check_input(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=net.weights[0].dtype)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {net.input_dim}")
    return x


def hidden_activations(net: Mlp, x: np.ndarray) -> list[np.ndarray]:
    """Inputs of every layer: ``[x, relu(h1), ..., relu(h_last)]``."""
    h = _check_input(net, x)
    acts = [h]
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = h @ w
        h += b
        h = np.maximum(h, 0.0, out=h)
        acts.append(h)
    return acts


def forward(net: Mlp, x: np.ndarray, keep_activations: bool = False):
    """Outputs for input ``x`` of shape ``(input_dim,)`` or ``(B, input_dim)``.

    With ``keep_activations`` also returns the list of layer inputs needed
    by :func:`backward`.
    """
    acts = hidden_activations(net, x)
    out = acts[-1] @ net.weights[-1]
    out += net.biases[-1]
    return (out, acts) if keep_activations else out


def output_at(net: Mlp, last_hidden: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Output ``actions[i]`` of sample ``i`` without forming the full output row."""
    w = net.weights[-1][:, actions]
    return np.einsum("bh,hb->b", last_hidden, w) + net.biases[-1][actions]


def backward(net: Mlp, x: np.ndarray, targets: np.ndarray, actions: np.ndarray,
             activations: list[np.ndarray] | None = None):
    """Gradients of ``mean_i 0.5 * (targets[i] - Q(x[i])[actions[i]])**2``.

    Returns ``(grads, loss)`` where ``grads`` follows the layout of
    :meth:`Mlp.parameters`.  Pass ``activations`` from
    :func:`hidden_activations` to skip the recomputation.
    """
    x = np.atleast_2d(_check_input(net, x))
    targets = np.atleast_1d(np.asarray(targets, dtype=x.dtype))
    actions = np.atleast_1d(np.asarray(actions, dtype=np.int64))
    B = x.shape[0]
    if targets.shape != (B,) or actions.shape != (B,):
        raise ValueError("need exactly one target and one action per sample")
    if np.any((actions < 0) | (actions >= net.output_dim)):
        raise ValueError("action index out of range")
    if activations is None:
        activations = hidden_activations(net, x)

    h = activations[-1]
    err = output_at(net, h, actions) - targets
    loss = 0.5 * float(np.mean(err ** 2))

    n = len(net.weights)
    grads: list[np.ndarray] = [None] * (2 * n)  # type: ignore[list-item]
    # Output layer: the error signal is nonzero in one column per row.
    d = err / B
    gw = np.zeros_like(net.weights[-1])
    np.add.at(gw.T, actions, d[:, None] * h)
    gb = np.zeros_like(net.biases[-1])
    np.add.at(gb, actions, d)
    grads[2 * n - 2], grads[2 * n - 1] = gw, gb
    delta = d[:, None] * net.weights[-1][:, actions].T
    for i in range(n - 2, -1, -1):
        delta = delta * (activations[i + 1] > 0)
        grads[2 * i] = activations[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ net.weights[i].T
    return grads, loss


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    _scratch: list[np.ndarray] = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def for_net(cls, net: Mlp, **kwargs) -> "AdamState":
        params = net.parameters()
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kwargs)


def adam_step(net: Mlp, grads: Sequence[np.ndarray], opt: AdamState) -> Mlp:
    """Bias-corrected Adam update of ``net`` in place."""
    params = net.parameters()
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match parameters")
    opt.step += 1
    t = opt.step
    b1, b2 = opt.beta1, opt.beta2
    # lr * mhat / (sqrt(vhat) + eps) with both bias corrections folded in.
    # Python floats keep float32 parameters in float32 arithmetic.
    lr_t = float(opt.learning_rate * (1.0 - b2 ** t) ** 0.5 / (1.0 - b1 ** t))
    eps_t = float(opt.eps * (1.0 - b2 ** t) ** 0.5)
    if len(opt._scratch) != len(params):
        opt._scratch = [np.empty_like(p) for p in params]
    for p, g, m, v, tmp in zip(params, grads, opt.m, opt.v, opt._scratch):
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        np.sqrt(v, out=tmp)
        tmp += eps_t
        np.divide(m, tmp, out=tmp)
        tmp *= lr_t
        p -= tmp
    if t % _FLUSH_EVERY == 0:
        # Moments of rarely-touched parameters decay into the subnormal
        # range, where arithmetic is very slow; their contribution is nil.
        for arr in (*opt.m, *opt.v):
            arr[np.abs(arr) < _FLUSH_BELOW] = 0.0
    return net


def clone_weights(src: Mlp) -> Mlp:
    dst = Mlp.__new__(Mlp)
    dst.layer_sizes = src.layer_sizes
    dst.weights = [w.copy() for w in src.weights]
    dst.biases = [b.copy() for b in src.biases]
    return dst


def copy_into(src: Mlp, dst: Mlp) -> None:
    if src.layer_sizes != dst.layer_sizes:
        raise ValueError(f"cannot copy {src!r} into {dst!r}")
    for s, d in zip(src.parameters(), dst.parameters()):
        d[...] = s


# ---------------------------------------------------------------------------
# Checkpoint format:
#   magic b"FLMLP", uint32 version, uint32 itemsize (4 or 8), uint32 n_sizes,
#   uint32 sizes[n_sizes], then W1, b1, W2, b2, ... as little-endian floats
#   of that itemsize, row-major.

def serialize(net: Mlp) -> bytes:
    sizes = net.layer_sizes
    itemsize = net.weights[0].dtype.itemsize
    header = CHECKPOINT_MAGIC + struct.pack(f"<III{len(sizes)}I", CHECKPOINT_VERSION, itemsize,
                                            len(sizes), *sizes)
    fmt = f"<f{itemsize}"
    body = b"".join(np.ascontiguousarray(p, dtype=fmt).tobytes() for p in net.parameters())
    return header + body


def deserialize(data: bytes) -> Mlp:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not an MLP checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, itemsize, n = struct.unpack_from("<III", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if itemsize not in (4, 8):
        raise ValueError(f"unsupported float width {itemsize}")
    off += 12
    sizes = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    fmt = f"<f{itemsize}"
    net = Mlp(sizes, dtype=np.dtype(fmt).newbyteorder("="))
    for p in net.parameters():
        count = p.size
        p[...] = np.frombuffer(data, dtype=fmt, count=count, offset=off).reshape(p.shape)
        off += itemsize * count
    if off != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return net


def save_mlp(net: Mlp, path: str | Path) -> None:
    Path(path).write_bytes(serialize(net))


def load_mlp(path: str | Path) -> Mlp:
    return deserialize(Path(path).read_bytes())
