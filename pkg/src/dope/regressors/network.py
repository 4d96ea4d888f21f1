"""Single-index bottleneck network trained by full-batch ADAM.

Architecture: ``covariates -> index (1 unit, no bias) -> 100 ReLU units ->
1 output``.  In joint mode the treatment enters the index through an extra
weight ``alpha``.  Training uses the compiled kernel in :mod:`._kernel`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from ..errors import ConfigError, DimensionMismatch
from . import _kernel

HIDDEN_UNITS = 100
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BOTTLENECK_INIT_SD = 0.1

_LOSSES = {"mse": _kernel.MSE, "bce": _kernel.BCE}


@dataclass(frozen=True)
class TrainConfig:
    """Training settings for :func:`fit_single_index_net`.

    Attributes
    ----------
    learning_rate : float
    iterations : int
        Number of full-batch ADAM updates.
    seed : int
        Seeds parameter initialisation.
    loss : {"mse", "bce"}
    mode : {"stratified", "joint"}
        Stratified fits one network per treatment arm; joint fits a single
        network with the treatment entering the index.
    """

    learning_rate: float = 1e-3
    iterations: int = 1200
    seed: int = 0
    loss: str = "mse"
    mode: str = "stratified"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if int(self.iterations) < 1:
            raise ConfigError("iterations must be at least 1")
        if self.loss not in _LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.mode not in ("stratified", "joint"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return TrainConfig(self.learning_rate, self.iterations, int(seed), self.loss, self.mode)


@dataclass
class SingleIndexNet:
    """Parameters of one bottleneck network.

    ``alpha`` is ``None`` for networks without a treatment input.
    """

    theta: np.ndarray
    hidden_w: np.ndarray
    hidden_b: np.ndarray
    out_w: np.ndarray
    out_b: float
    alpha: Optional[float] = None
    output_activation: str = "identity"
    loss_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    @property
    def uses_treatment(self) -> bool:
        return self.alpha is not None

    @property
    def n_params(self) -> int:
        return self.d + (1 if self.uses_treatment else 0) + 3 * self.hidden_w.shape[0] + 1

    def index(self, W, t=None) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        if W.shape[1] != self.d:
            raise DimensionMismatch(f"expected {self.d} covariates, got {W.shape[1]}")
        s = W @ self.theta
        if self.uses_treatment:
            if t is None:
                raise ValueError("joint network needs treatment values")
            s = s + self.alpha * np.broadcast_to(np.asarray(t, dtype=float), s.shape)
        return s

    def forward_index(self, s) -> np.ndarray:
        """Network output as a function of the index value(s)."""
        s = np.ascontiguousarray(s, dtype=float)
        f = _kernel.forward_index(s, self.hidden_w, self.hidden_b, self.out_w, float(self.out_b))
        return expit(f) if self.output_activation == "sigmoid" else f

    def predict(self, W, t=None) -> np.ndarray:
        return self.forward_index(self.index(W, t))

    def normalized_theta(self) -> np.ndarray:
        """``theta`` scaled to unit norm with its first nonzero entry positive."""
        norm = np.linalg.norm(self.theta)
        if norm == 0.0:
            return self.theta.copy()
        u = self.theta / norm
        nz = np.flatnonzero(u)
        return -u if u[nz[0]] < 0 else u

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "alpha": self.alpha,
            "hidden_w": self.hidden_w.tolist(),
            "hidden_b": self.hidden_b.tolist(),
            "out_w": self.out_w.tolist(),
            "out_b": float(self.out_b),
            "output_activation": self.output_activation,
            "theta_normalized": self.normalized_theta().tolist(),
        }


def init_network(d: int, uses_treatment: bool, rng: np.random.Generator,
                 output_activation: str = "identity") -> SingleIndexNet:
    """Bottleneck ~ N(0, 0.1^2); hidden and output weights Glorot-uniform.

    Biases are uniform on ``+-1/sqrt(fan_in)`` so the ReLU kinks start spread
    over the index range instead of all sitting at zero.
    """
    theta = rng.normal(0.0, BOTTLENECK_INIT_SD, size=d)
    alpha = float(rng.normal(0.0, BOTTLENECK_INIT_SD)) if uses_treatment else None
    limit = np.sqrt(6.0 / (1 + HIDDEN_UNITS))
    hidden_w = rng.uniform(-limit, limit, size=HIDDEN_UNITS)
    out_w = rng.uniform(-limit, limit, size=HIDDEN_UNITS)
    hidden_b = rng.uniform(-1.0, 1.0, size=HIDDEN_UNITS)
    out_b = float(rng.uniform(-1.0, 1.0) / np.sqrt(HIDDEN_UNITS))
    return SingleIndexNet(
        theta=theta, hidden_w=hidden_w, hidden_b=hidden_b, out_w=out_w,
        out_b=out_b, alpha=alpha, output_activation=output_activation,
    )


def _as_kernel_args(net: SingleIndexNet, W, t, y=None):
    """Contiguous float inputs for the compiled kernel, checked for shape and
    finiteness since the kernel itself does no bounds checking."""
    X = np.ascontiguousarray(W, dtype=float)
    if X.ndim != 2 or X.shape[1] != net.d:
        raise DimensionMismatch(f"covariates must have shape (n, {net.d})")
    tcol = np.zeros(X.shape[0]) if t is None else np.ascontiguousarray(t, dtype=float).ravel()
    if tcol.shape[0] != X.shape[0] or (y is not None and np.shape(y) != (X.shape[0],)):
        raise DimensionMismatch("covariates, treatments and outcomes differ in length")
    alpha = 0.0 if net.alpha is None else float(net.alpha)
    params = (net.theta, net.hidden_w, net.hidden_b, net.out_w, [net.out_b, alpha])
    if not all(np.all(np.isfinite(a)) for a in (X, tcol, *params)):
        raise ValueError("network inputs and parameters must be finite")
    if y is not None and not np.all(np.isfinite(y)):
        raise ValueError("outcomes must be finite")
    return X, tcol, alpha


def loss_and_gradient(net: SingleIndexNet, W, y, t=None, loss: str = "mse"):
    """Training loss and its gradient at the current parameters.

    Returns ``(loss, grads)`` where ``grads`` has keys ``theta``, ``alpha``,
    ``hidden_w``, ``hidden_b``, ``out_w``, ``out_b``.
    """
    y = np.ascontiguousarray(y, dtype=float)
    X, tcol, alpha = _as_kernel_args(net, W, t, y)
    H = net.hidden_w.shape[0]
    g_theta = np.empty(net.d)
    g_hw, g_hb, g_ow = np.empty(H), np.empty(H), np.empty(H)
    value, g_alpha, g_ob = _kernel.loss_grad(
        X, tcol, y, net.theta, alpha, net.uses_treatment, net.hidden_w, net.hidden_b,
        net.out_w, float(net.out_b), _LOSSES[loss], g_theta, g_hw, g_hb, g_ow,
    )
    grads = {
        "theta": g_theta, "alpha": g_alpha if net.uses_treatment else 0.0,
        "hidden_w": g_hw, "hidden_b": g_hb, "out_w": g_ow, "out_b": g_ob,
    }
    return value, grads


def train_network(W, y, cfg: TrainConfig, t=None, rng: Optional[np.random.Generator] = None) -> SingleIndexNet:
    """Initialise and train one network on ``(W, y)`` (and ``t`` when given)."""
    W = np.ascontiguousarray(W, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if cfg.loss == "bce" and not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce loss requires outcomes in {0, 1}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    act = "sigmoid" if cfg.loss == "bce" else "identity"
    net = init_network(W.shape[1], t is not None, rng, act)
    X, tcol, alpha = _as_kernel_args(net, W, t, y)
    history, alpha, ob = _kernel.train_adam(
        X, tcol, y, net.theta, alpha, net.uses_treatment, net.hidden_w, net.hidden_b,
        net.out_w, float(net.out_b), _LOSSES[cfg.loss], float(cfg.learning_rate), int(cfg.iterations),
        ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
    )
    net.out_b = float(ob)
    if net.uses_treatment:
        net.alpha = float(alpha)
    net.loss_history = history
    return net
