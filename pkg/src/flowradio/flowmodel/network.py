"""Residual convolutional network with hand-written reverse-mode gradients.

Parameters live in one flat vector; each layer's weight and bias are views
into it, in a fixed segment order, so the optimizer and the model file both
see a single contiguous array.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

ACTIVATIONS = ("silu", "tanh")


@dataclass(frozen=True)
class Architecture:
    """Layer layout of the velocity network.

    ``hidden_layers`` convolutions of ``channels`` features (the first lifts
    the map plus a constant time channel, the rest are residual), followed
    by a linear output convolution back to one channel. ``dilations`` holds
    one entry per convolution, output included.
    """

    hidden_layers: int = 4
    channels: int = 32
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8, 1)
    activation: str = "silu"
    time_conditioning: str = "constant_channel"

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.hidden_layers < 1 or self.channels < 1:
            raise ValueError("need at least one hidden layer with one channel")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd and positive")
        if len(self.dilations) != self.hidden_layers + 1 or min(self.dilations) < 1:
            raise ValueError(
                f"need {self.hidden_layers + 1} positive dilations, got {self.dilations}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.time_conditioning != "constant_channel":
            raise ValueError(f"unsupported time conditioning {self.time_conditioning!r}")

    def layer_channels(self) -> list[tuple[int, int]]:
        c = self.channels
        return [(2, c)] + [(c, c)] * (self.hidden_layers - 1) + [(c, 1)]

    def segments(self) -> list[tuple[str, tuple[int, ...]]]:
        k = self.kernel_size
        segs = []
        for idx, (cin, cout) in enumerate(self.layer_channels()):
            segs.append((f"conv{idx}.weight", (cout, cin, k, k)))
            segs.append((f"conv{idx}.bias", (cout,)))
        return segs

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.segments())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**d)


def segment_views(arch: Architecture, theta: np.ndarray) -> dict[str, np.ndarray]:
    views, off = {}, 0
    for name, shape in arch.segments():
        n = int(np.prod(shape))
        views[name] = theta[off:off + n].reshape(shape)
        off += n
    if off != theta.size:
        raise ValueError(f"parameter vector has {theta.size} entries, architecture needs {off}")
    return views


def init_params(arch: Architecture, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    theta = np.zeros(arch.n_params, dtype=dtype)
    views = segment_views(arch, theta)
    n_conv = arch.hidden_layers + 1
    for idx, (cin, _) in enumerate(arch.layer_channels()):
        w = views[f"conv{idx}.weight"]
        fan_in = cin * arch.kernel_size ** 2
        std = np.sqrt(2.0 / fan_in)
        if idx == n_conv - 1:
            std *= 0.1
        elif idx > 0:
            std *= 0.5  # residual branches start small
        w[...] = rng.standard_normal(w.shape) * std
    return theta


def _im2col(x: np.ndarray, k: int, d: int) -> np.ndarray:
    n, c, h, w = x.shape
    p = d * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((n, c, k * k, h, w), dtype=x.dtype)
    for a in range(k):
        for b in range(k):
            cols[:, :, a * k + b] = xp[:, :, a * d:a * d + h, b * d:b * d + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(dcols: np.ndarray, shape, k: int, d: int) -> np.ndarray:
    n, c, h, w = shape
    p = d * (k - 1) // 2
    dcols = dcols.reshape(n, c, k * k, h, w)
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    for a in range(k):
        for b in range(k):
            dxp[:, :, a * d:a * d + h, b * d:b * d + w] += dcols[:, :, a * k + b]
    return dxp[:, :, p:p + h, p:p + w]


def _act(z: np.ndarray, name: str):
    if name == "silu":
        s = 1.0 / (1.0 + np.exp(-z))
        return z * s, s
    a = np.tanh(z)
    return a, a


def _act_grad(z: np.ndarray, aux: np.ndarray, name: str) -> np.ndarray:
    if name == "silu":
        return aux * (1.0 + z * (1.0 - aux))
    return 1.0 - aux * aux


class ConvNet:
    """Forward and backward passes of :class:`Architecture` on ``(N, H, W)`` maps."""

    def __init__(self, arch: Architecture):
        self.arch = arch

    def forward(self, theta: np.ndarray, z: np.ndarray, t, keep: bool = False):
        """Velocity for a batch of maps ``z`` at times ``t`` (scalar or ``(N,)``).

        Computes in ``theta.dtype``. With ``keep=True`` also returns the cache
        needed by :meth:`backward`.
        """
        arch = self.arch
        dtype = theta.dtype
        params = segment_views(arch, theta)
        z = np.asarray(z, dtype=dtype)
        n, h, w = z.shape
        t = np.broadcast_to(np.asarray(t, dtype=dtype), (n,))
        x = np.empty((n, 2, h, w), dtype=dtype)
        x[:, 0] = z
        x[:, 1] = t[:, None, None]
        k = arch.kernel_size
        cache = []
        hcur = x
        last = arch.hidden_layers
        for idx in range(last + 1):
            wgt = params[f"conv{idx}.weight"]
            bias = params[f"conv{idx}.bias"]
            d = arch.dilations[idx]
            cols = _im2col(hcur, k, d)
            pre = np.matmul(wgt.reshape(wgt.shape[0], -1), cols) + bias[:, None]
            pre = pre.reshape(n, wgt.shape[0], h, w)
            if idx == last:
                out = pre[:, 0]
                if keep:
                    cache.append((cols, hcur.shape, None, None))
                break
            a, aux = _act(pre, arch.activation)
            if keep:
                cache.append((cols, hcur.shape, pre, aux))
            hcur = a if idx == 0 else hcur + a
        if keep:
            return out, cache
        return out

    def backward(self, theta: np.ndarray, cache, dout: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(dout * forward(...))`` with respect to ``theta``."""
        arch = self.arch
        params = segment_views(arch, theta)
        grad = np.zeros_like(theta)
        gviews = segment_views(arch, grad)
        k = arch.kernel_size
        last = arch.hidden_layers
        n, h, w = dout.shape
        dpre = dout.astype(theta.dtype)[:, None]
        dh = None
        for idx in range(last, -1, -1):
            cols, in_shape, pre, aux = cache[idx]
            if idx != last:
                # hidden output: a (first layer) or residual h_in + a
                dpre = dh * _act_grad(pre, aux, arch.activation)
            wgt = params[f"conv{idx}.weight"]
            cout = wgt.shape[0]
            dflat = dpre.reshape(n, cout, h * w)
            gviews[f"conv{idx}.bias"][...] = dflat.sum(axis=(0, 2))
            gw = np.matmul(dflat, cols.transpose(0, 2, 1)).sum(axis=0)
            gviews[f"conv{idx}.weight"][...] = gw.reshape(wgt.shape)
            if idx == 0:
                break
            dcols = np.matmul(wgt.reshape(cout, -1).T, dflat)
            dx = _col2im(dcols, in_shape, k, arch.dilations[idx])
            # residual layers pass the incoming gradient straight through
            dh = dx if idx == last else dh + dx
        return grad
