"""Joint training of a stack of GBDT layers through learned inverse mappings.

Each epoch first refreshes every inverse mapping ``G_j`` on noise-perturbed
copies of the layer inputs, then sends a target from the top of the stack
down through the inverses, and finally boosts every forward mapping toward
its target, bottom layer first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .gbdt_core import GBDTRegressor, TreeGrowthParams, boost_more, boost_more_predict, fit_boosted
from .layers import (
    SOFTMAX_CROSS_ENTROPY,
    SQUARED_ERROR,
    Layer,
    LinearClassifier,
    Loss,
    hidden_gradient,
    linear_forward,
    linear_update,
    loss_gradient,
    loss_value,
    predict_classes,
)

log = logging.getLogger(__name__)

MODES = ("classify", "regress", "autoencode")


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters of the training loop.

    ``alpha=None`` picks 0.1 in classify mode and 1.0 otherwise.
    """

    alpha: float | None = None
    gamma: float = 0.1
    k1: int = 5
    k2: int = 5
    epochs: int = 50
    noise_std: float = 0.3
    forward_params: TreeGrowthParams = TreeGrowthParams(max_depth=5)
    inverse_params: TreeGrowthParams = TreeGrowthParams(max_depth=5)
    init_params: TreeGrowthParams = TreeGrowthParams(max_depth=2)
    init_rounds: int = 1
    init_noise_std: float = 1.0
    linear_step_size: float = 0.1
    linear_steps: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("k1", "k2", "epochs", "init_rounds", "linear_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.noise_std < 0 or self.init_noise_std < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be > 0")

    def alpha_for(self, mode: str) -> float:
        if self.alpha is not None:
            return self.alpha
        return 0.1 if mode == "classify" else 1.0


@dataclass(eq=False)
class MGBDTModel:
    layers: list[Layer]
    dims: list[int]
    loss: Loss
    mode: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.dims) != len(self.layers) + 1:
            raise ValueError("dims must have one more entry than layers")
        for i, layer in enumerate(self.layers):
            if (layer.in_dim, layer.out_dim) != (self.dims[i], self.dims[i + 1]):
                raise ValueError(f"layer {i + 1} dims do not chain")
            if layer.is_linear and (self.mode != "classify" or i != len(self.layers) - 1):
                raise ValueError("a linear layer is only allowed on top in classify mode")
        if self.mode == "classify" and not self.layers[-1].is_linear:
            raise ValueError("classify mode needs a linear top layer")
        if self.mode == "autoencode" and self.dims[0] != self.dims[-1]:
            raise ValueError("autoencode mode needs output dim equal to input dim")

    @property
    def n_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class EpochTrace:
    epoch: int
    train_loss: float
    train_accuracy: float | None = None
    test_loss: float | None = None
    test_accuracy: float | None = None


def _loss_for(mode: str) -> Loss:
    return Loss(SOFTMAX_CROSS_ENTROPY if mode == "classify" else SQUARED_ERROR)


def _check_dims(dims, mode):
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError("need at least two positive layer dims")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "autoencode" and dims[0] != dims[-1]:
        raise ValueError(f"autoencode needs output dim {dims[-1]} == input dim {dims[0]}")
    return dims


def initialize(dims, mode: str, config: TrainConfig, X, rng: np.random.Generator):
    """Build the starting stack and its training outputs ``[o_0, ..., o_M]``.

    Each GBDT layer is a few tiny trees fit to Gaussian noise targets on the
    output of the layer below. Inverse mappings start absent.
    """
    dims = _check_dims(dims, mode)
    o = np.ascontiguousarray(X, dtype=np.float64)
    if len(o) == 0:
        raise ValueError("empty training set")
    if o.ndim != 2 or o.shape[1] != dims[0]:
        raise ValueError(f"input width {o.shape[-1]} != structure input dim {dims[0]}")
    outputs = [o]
    layers = []
    n_layers = len(dims) - 1
    for i in range(n_layers):
        d_in, d_out = dims[i], dims[i + 1]
        if mode == "classify" and i == n_layers - 1:
            lc = LinearClassifier.zeros(d_in, d_out, config.linear_step_size)
            layers.append(Layer(lc, d_in, d_out))
            o = linear_forward(lc, o)
        else:
            targets = rng.normal(0.0, config.init_noise_std, size=(len(o), d_out))
            f = fit_boosted(o, targets, config.init_rounds, config.gamma, config.init_params)
            layers.append(Layer(f, d_in, d_out))
            o = f.predict(o)
        outputs.append(o)
    return MGBDTModel(layers, dims, _loss_for(mode), mode), outputs


def top_pseudo_label(o_top, y, alpha: float, loss: Loss) -> np.ndarray:
    """Target for the top layer: one gradient step of size ``alpha`` from ``o_top``."""
    o_top = np.asarray(o_top, dtype=np.float64)
    if loss.kind == SQUARED_ERROR:
        # same step, written so alpha = 1 lands exactly on the labels
        y = np.asarray(y, dtype=np.float64)
        if y.shape != o_top.shape:
            raise ValueError(f"label shape {y.shape} != output shape {o_top.shape}")
        return (1.0 - alpha) * o_top + alpha * y
    return o_top - alpha * loss_gradient(loss, o_top, y)


def update_inverse(layer: Layer, o_prev, config: TrainConfig,
                   rng: np.random.Generator) -> GBDTRegressor | None:
    """Boost the layer's inverse for ``k1`` rounds on freshly perturbed inputs.

    The inverse learns to map ``F(o + eps)`` back to ``o + eps`` with
    ``eps ~ N(0, noise_std^2)``, warm-starting from the current inverse.
    """
    if layer.is_linear:
        raise ValueError("no inverse for linear top layer")
    noisy = o_prev + rng.normal(0.0, config.noise_std, size=o_prev.shape)
    if config.k1 == 0:
        return layer.inverse
    mapped = layer.forward.predict(noisy)
    if layer.inverse is None:
        return fit_boosted(mapped, noisy, config.k1, config.gamma, config.inverse_params)
    return boost_more(layer.inverse, mapped, noisy, config.k1, config.inverse_params)


def propagate_pseudo_labels(model: MGBDTModel, z_top, outputs=None, labels=None,
                            alpha: float | None = None) -> list:
    """Send the top target down the stack through the inverse mappings.

    Returns one target per layer, ``targets[i]`` for ``model.layers[i]``.
    With a linear top layer its own entry is ``None`` and the layer below
    gets ``o - alpha * dL/do`` from the per-row cross-entropy gradient;
    ``outputs``, ``labels`` and ``alpha`` are needed for that case only.
    """
    M = model.n_layers
    targets: list = [None] * M
    top = model.layers[-1]
    if top.is_linear:
        if M == 1:
            return targets
        h = outputs[M - 1]
        z = h - alpha * hidden_gradient(top.forward, h, labels, reduction="none")
    else:
        targets[M - 1] = z = np.asarray(z_top, dtype=np.float64)
        if M > 1:
            z = _through_inverse(top, z, M)
    for i in range(M - 2, -1, -1):
        targets[i] = z
        if i > 0:
            z = _through_inverse(model.layers[i], z, i + 1)
    return targets


def _through_inverse(layer: Layer, z, j):
    if layer.inverse is None:
        raise ValueError(f"inverse not yet trained for layer {j}")
    return layer.inverse.predict(z)


def update_forwards(model: MGBDTModel, X, targets, labels, config: TrainConfig,
                    previous=None):
    """Boost each forward mapping toward its target, bottom layer first.

    Every layer trains on the refreshed output of the already-updated layer
    below. A linear top layer instead takes gradient steps on the true labels.
    Returns the updated model and the new outputs ``[o_0, ..., o_M]``.
    ``previous`` may hold the outputs of the same model on the same ``X``;
    the first layer then reuses its stored output.
    """
    o = np.ascontiguousarray(X, dtype=np.float64)
    outputs = [o]
    layers = []
    for i, (layer, z) in enumerate(zip(model.layers, targets)):
        if layer.is_linear:
            lc = linear_update(layer.forward, o, labels, config.linear_steps)
            layer = replace(layer, forward=lc)
            o = linear_forward(lc, o)
        else:
            if z is None or z.shape != (len(o), layer.out_dim):
                raise ValueError(f"pseudo-label shape mismatch for a layer of width {layer.out_dim}")
            current = previous[1] if previous is not None and i == 0 else None
            f, o = boost_more_predict(layer.forward, o, z, config.k2, config.forward_params,
                                      current)
            layer = replace(layer, forward=f)
        layers.append(layer)
        outputs.append(o)
    return replace(model, layers=layers), outputs


def _targets_for(mode, X, y):
    if mode == "autoencode":
        return np.asarray(X, dtype=np.float64)
    if y is None:
        raise ValueError(f"{mode} mode needs labels")
    if mode == "classify":
        return np.asarray(y, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    return y[:, None] if y.ndim == 1 else y


def _score(model: MGBDTModel, o_top, y):
    train_loss = float(np.mean(loss_value(model.loss, o_top, y)))
    acc = None
    if model.mode == "classify":
        acc = float(np.mean(predict_classes(o_top) == y))
    return train_loss, acc


def fit(X, y, dims, mode: str = "classify", config: TrainConfig = TrainConfig(),
        X_test=None, y_test=None):
    """Train a stack with structure ``dims`` and return it with per-epoch traces.

    In autoencode mode ``y`` is ignored and the input is the target.
    """
    dims = _check_dims(dims, mode)
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = _targets_for(mode, X, y)
    if len(Y) != len(X):
        raise ValueError(f"{len(X)} rows but {len(Y)} targets")
    if mode == "classify" and (Y.min() < 0 or Y.max() >= dims[-1]):
        raise ValueError(f"labels must lie in [0, {dims[-1]})")
    if mode != "classify" and Y.shape[1] != dims[-1]:
        raise ValueError(f"target width {Y.shape[1]} != output dim {dims[-1]}")
    have_test = X_test is not None
    if have_test:
        X_test = np.ascontiguousarray(X_test, dtype=np.float64)
        Y_test = _targets_for(mode, X_test, y_test)

    rng = np.random.default_rng(config.rng_seed)
    alpha = config.alpha_for(mode)
    model, outputs = initialize(dims, mode, config, X, rng)
    traces = []
    for epoch in range(1, config.epochs + 1):
        M = model.n_layers
        z_top = None
        if not model.layers[-1].is_linear:
            z_top = top_pseudo_label(outputs[M], Y, alpha, model.loss)
        layers = list(model.layers)
        for j in range(M, 1, -1):
            if layers[j - 1].is_linear:
                continue
            g = update_inverse(layers[j - 1], outputs[j - 1], config, rng)
            layers[j - 1] = replace(layers[j - 1], inverse=g)
        model = replace(model, layers=layers)
        targets = propagate_pseudo_labels(model, z_top, outputs, Y, alpha)
        model, outputs = update_forwards(model, X, targets, Y, config, outputs)

        train_loss, train_acc = _score(model, outputs[-1], Y)
        test_loss = test_acc = None
        if have_test:
            test_loss, test_acc = _score(model, encode(model, X_test, M), Y_test)
        traces.append(EpochTrace(epoch, train_loss, train_acc, test_loss, test_acc))
        log.info("epoch %d train_loss=%.6g train_acc=%s test_acc=%s",
                 epoch, train_loss, train_acc, test_acc)
    return model, traces


def encode(model: MGBDTModel, X, layer_index: int) -> np.ndarray:
    """Representation ``o_j`` after the first ``layer_index`` layers (0 returns ``X``)."""
    if not 0 <= layer_index <= model.n_layers:
        raise ValueError(f"layer index {layer_index} outside [0, {model.n_layers}]")
    o = np.asarray(X, dtype=np.float64)
    if o.ndim != 2 or o.shape[1] != model.dims[0]:
        raise ValueError(f"expected input width {model.dims[0]}, got shape {o.shape}")
    for layer in model.layers[:layer_index]:
        o = layer.apply(o)
    return o


def predict_model(model: MGBDTModel, X) -> np.ndarray:
    """Class indices in classify mode, output vectors otherwise."""
    out = encode(model, X, model.n_layers)
    return predict_classes(out) if model.mode == "classify" else out
