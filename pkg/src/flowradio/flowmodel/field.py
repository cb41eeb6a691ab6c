"""Flow-matching velocity field as a scikit-learn style estimator."""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..core import AffineTransform, GridShape
from ..validation import check_maps
from .network import Architecture, ConvNet, init_params, segment_views

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"FRVF"
MODEL_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the flow-matching loss becomes non-finite."""


class VelocityField(BaseEstimator):
    """Learned velocity ``v(t, Z)`` transporting N(0, 1) noise to radio maps.

    Maps passed to :meth:`fit` are in dB; they are mapped to model space with
    ``transform_`` (dataset min/max onto [-1, 1]) before training. Calling
    the fitted estimator, ``field(t, Z)``, evaluates the network on
    model-space maps.

    Parameters
    ----------
    hidden_layers, channels, kernel_size, dilations, activation :
        Network layout, see :class:`~flowradio.flowmodel.network.Architecture`.
    n_steps : int
        Optimizer steps.
    batch_size : int
    learning_rate : float
        Peak Adam step size; decays on a cosine schedule to
        ``learning_rate * lr_floor``.
    betas, eps : Adam moment parameters.
    grad_clip : float or None
        Global gradient-norm clip.
    random_state : int
        Seeds initialization, batch order, noise and time draws.
    dtype : {"float32", "float64"}
        Parameter and compute precision.
    """

    def __init__(
        self,
        hidden_layers=4,
        channels=32,
        kernel_size=3,
        dilations=(1, 2, 4, 8, 1),
        activation="silu",
        n_steps=2000,
        batch_size=16,
        learning_rate=1e-3,
        lr_floor=0.05,
        betas=(0.9, 0.999),
        eps=1e-8,
        grad_clip=1.0,
        random_state=0,
        dtype="float32",
    ):
        self.hidden_layers = hidden_layers
        self.channels = channels
        self.kernel_size = kernel_size
        self.dilations = dilations
        self.activation = activation
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_floor = lr_floor
        self.betas = betas
        self.eps = eps
        self.grad_clip = grad_clip
        self.random_state = random_state
        self.dtype = dtype

    # construction -----------------------------------------------------

    def _architecture(self) -> Architecture:
        return Architecture(
            hidden_layers=self.hidden_layers,
            channels=self.channels,
            kernel_size=self.kernel_size,
            dilations=tuple(self.dilations),
            activation=self.activation,
        )

    def initialize(self, shape, transform: AffineTransform | None = None) -> "VelocityField":
        """Set up untrained parameters for ``shape`` grids (no data needed)."""
        shape = shape if isinstance(shape, GridShape) else GridShape(*shape)
        self.architecture_ = self._architecture()
        self.shape_ = shape
        self.transform_ = transform or AffineTransform()
        rng = np.random.default_rng(self.random_state)
        self.theta_ = init_params(self.architecture_, rng, np.dtype(self.dtype))
        self.loss_history_ = []
        self._net = ConvNet(self.architecture_)
        return self

    def fit(self, X, y=None, transform: AffineTransform | None = None):
        """Train on dB maps ``X`` of shape ``(n_maps, rows, cols)``.

        ``transform`` defaults to the min/max of ``X``.
        """
        X = check_maps(X)
        if transform is None:
            transform = AffineTransform.from_range(float(X.min()), float(X.max()))
        self.initialize(X.shape[1:], transform)
        data = transform.apply(X)
        self._train(data)
        return self

    def _train(self, data: np.ndarray) -> None:
        for name in ("n_steps", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        rng = np.random.default_rng([int(self.random_state), 1])
        dtype = self.theta_.dtype
        theta = self.theta_
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        b1, b2 = self.betas
        n = len(data)
        bs = min(int(self.batch_size), n)
        order = rng.permutation(n)
        pos = 0
        history = []
        for step in range(1, int(self.n_steps) + 1):
            if pos + bs > n:
                order, pos = rng.permutation(n), 0
            z1 = data[order[pos:pos + bs]]
            pos += bs
            z0 = rng.standard_normal(z1.shape)
            t = rng.uniform(0.0, 1.0, size=bs)
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = self._loss_and_grad(theta, z0, z1, t)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (last finite losses: {history[-5:]})"
                )
            history.append(float(loss))
            if self.grad_clip:
                gnorm = float(np.linalg.norm(grad))
                if gnorm > self.grad_clip:
                    grad *= self.grad_clip / gnorm
            frac = (step - 1) / max(int(self.n_steps) - 1, 1)
            lr = self.learning_rate * (self.lr_floor + (1 - self.lr_floor) * 0.5 * (1 + np.cos(np.pi * frac)))
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            mhat = m / (1 - b1 ** step)
            vhat = v / (1 - b2 ** step)
            theta -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(dtype)
            if step % 200 == 0:
                logger.info("step %d loss %.5f", step, np.mean(history[-200:]))
        self.loss_history_ = history

    # evaluation -------------------------------------------------------

    def __call__(self, t, z):
        """Velocity at time ``t`` for model-space map(s) ``z`` (2-D or stacked)."""
        check_is_fitted(self, "theta_")
        z = np.asarray(z)
        single = z.ndim == 2
        zb = z[None] if single else z
        out = self._net.forward(self.theta_, zb, t).astype(np.float64)
        return out[0] if single else out

    def _loss_and_grad(self, theta, z0, z1, t):
        zt = interpolate_path(z0, z1, t)
        target = z1 - z0
        out, cache = self._net.forward(theta, zt, t, keep=True)
        resid = out - target.astype(theta.dtype)
        b = len(z0)
        loss = float(np.sum(resid.astype(np.float64) ** 2)) / b
        grad = self._net.backward(theta, cache, 2.0 * resid / b)
        return loss, grad

    @property
    def n_params_(self) -> int:
        check_is_fitted(self, "theta_")
        return self.theta_.size

    def named_parameters(self) -> dict[str, np.ndarray]:
        check_is_fitted(self, "theta_")
        return segment_views(self.architecture_, self.theta_)

    # persistence ------------------------------------------------------

    def header(self) -> dict:
        check_is_fitted(self, "theta_")
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "architecture": self.architecture_.to_dict(),
            "segments": [[name, list(shape)] for name, shape in self.architecture_.segments()],
            "n_params": int(self.theta_.size),
            "shape": list(self.shape_.as_tuple()),
            "transform": self.transform_.to_dict(),
            "params": _jsonable(self.get_params()),
            "loss_history": [float(x) for x in self.loss_history_],
            "source": {"distribution": "normal", "mean": 0.0, "std": 1.0},
            "metadata": getattr(self, "metadata_", {}),
        }

    def to_bytes(self) -> bytes:
        head = json.dumps(self.header(), sort_keys=True).encode("utf-8")
        blob = np.asarray(self.theta_, dtype="<f4").tobytes()
        return MODEL_MAGIC + struct.pack("<I", len(head)) + head + blob

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "VelocityField":
        if raw[:4] != MODEL_MAGIC:
            raise ValueError("not a velocity-field model file")
        (hlen,) = struct.unpack("<I", raw[4:8])
        head = json.loads(raw[8:8 + hlen].decode("utf-8"))
        if head.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {head.get('format_version')}")
        params = head["params"]
        params["dilations"] = tuple(params["dilations"])
        params["betas"] = tuple(params["betas"])
        field = cls(**params)
        field.architecture_ = Architecture.from_dict(head["architecture"])
        field.shape_ = GridShape(*head["shape"])
        field.transform_ = AffineTransform(**head["transform"])
        theta = np.frombuffer(raw[8 + hlen:], dtype="<f4")
        if theta.size != field.architecture_.n_params:
            raise ValueError(
                f"parameter blob has {theta.size} values, architecture needs {field.architecture_.n_params}"
            )
        field.theta_ = theta.astype(np.dtype(field.dtype))
        field.loss_history_ = list(head["loss_history"])
        field.metadata_ = head.get("metadata", {})
        field._net = ConvNet(field.architecture_)
        return field

    @classmethod
    def load(cls, path) -> "VelocityField":
        return cls.from_bytes(Path(path).read_bytes())


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# Free functions over any callable field(t, z) -----------------------------


def interpolate_path(z0, z1, t):
    """Straight-line path ``(1 - t) z0 + t z1``; ``t`` scalar or per-map."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ValueError("t must lie in [0, 1]")
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    if z0.shape != z1.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {z1.shape}")
    if t_arr.ndim == 1:
        t_arr = t_arr.reshape((-1,) + (1,) * (z0.ndim - 1))
    return (1.0 - t_arr) * z0 + t_arr * z1


def _stack(batch):
    z0 = np.stack([np.asarray(b[0], dtype=np.float64) for b in batch])
    z1 = np.stack([np.asarray(b[1], dtype=np.float64) for b in batch])
    t = np.array([float(b[2]) for b in batch])
    return z0, z1, t


def fm_loss(field, batch) -> float:
    """Mean over ``(z0, z1, t)`` triples of ``||v(t, z_t) - (z1 - z0)||_F^2``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    total = 0.0
    for z0, z1, t in batch:
        z0 = np.asarray(z0, dtype=np.float64)
        z1 = np.asarray(z1, dtype=np.float64)
        resid = np.asarray(field(t, interpolate_path(z0, z1, t)), dtype=np.float64) - (z1 - z0)
        total += float(np.sum(resid * resid))
    return total / len(batch)


def zero_field_loss(batch) -> float:
    """Loss of the field that always predicts zero velocity."""
    return fm_loss(lambda t, z: np.zeros_like(z), batch)


def loss_gradient(field: VelocityField, batch) -> np.ndarray:
    """Exact gradient of :func:`fm_loss` with respect to ``field.theta_``."""
    check_is_fitted(field, "theta_")
    if len(batch) == 0:
        raise ValueError("empty batch")
    z0, z1, t = _stack(batch)
    return field._loss_and_grad(field.theta_, z0, z1, t)[1]


def euler_integrate(field, z0, steps: int):
    """Explicit Euler flow from t=0 to t=1 in ``steps`` uniform steps."""
    if int(steps) < 1:
        raise ValueError("need at least one Euler step")
    z = np.array(z0, dtype=np.float64)
    h = 1.0 / steps
    for k in range(steps):
        z = z + h * np.asarray(field(k * h, z), dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError(f"non-finite state after Euler step {k + 1}")
    return z


def denoise(field, z, t: float):
    """One-step clean-map estimate ``z + (1 - t) v(t, z)``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    z = np.asarray(z, dtype=np.float64)
    return z + (1.0 - t) * np.asarray(field(t, z), dtype=np.float64)


def sample(field: VelocityField, n: int, steps: int = 50, random_state=0):
    """Draw ``n`` unconditioned dB maps by integrating noise through the flow."""
    check_is_fitted(field, "theta_")
    rng = np.random.default_rng(random_state)
    z0 = rng.standard_normal((n,) + field.shape_.as_tuple())
    return field.transform_.invert(euler_integrate(field, z0, steps))


def train(maps, config: dict | None = None, transform: AffineTransform | None = None) -> VelocityField:
    """Fit a :class:`VelocityField` on dB ``maps`` with keyword ``config``."""
    return VelocityField(**(config or {})).fit(maps, transform=transform)
