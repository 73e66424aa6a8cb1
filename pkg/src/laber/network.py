"""Feed-forward networks with explicit per-sample backpropagation.

All parameters live in one flat float64 vector ``theta``; each layer's
weight matrix and bias are views into it, so an SGD step is a single
in-place vector update. Layer order in ``theta`` is ``W_1, b_1, W_2, ...``
with ``W_l`` of shape ``(out, in)`` stored row-major.

The final layer may use a softmax, applied independently to consecutive
groups of ``group_size`` outputs. This is how a categorical (C51-style)
head with one histogram per action is represented.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError
from .flatfile import read_flat, write_flat

ACTIVATIONS = ("relu", "identity", "softmax")
LOSSES = ("l2", "huber", "ce")
HUBER_KAPPA = 1.0
FD_STEP = 1e-5


@dataclass(frozen=True)
class LossSpec:
    kind: str = "l2"

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSSES}")


L2 = LossSpec("l2")
HUBER = LossSpec("huber")
CE = LossSpec("ce")


class Network:
    def __init__(self, sizes, activations, theta=None, group_size=None):
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise ShapeMismatchError("need len(activations) == len(sizes) - 1 >= 1")
        for i, act in enumerate(activations):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if act == "softmax" and i != len(activations) - 1:
                raise ValueError("softmax is only allowed on the final layer")
        self.sizes = sizes
        self.activations = activations
        out = sizes[-1]
        if group_size:
            self.group_size = int(group_size)
        else:
            self.group_size = out if activations[-1] == "softmax" else 1
        if out % self.group_size:
            raise ShapeMismatchError(f"output size {out} is not a multiple of group size {self.group_size}")
        self.n_params = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
        if theta is None:
            theta = np.zeros(self.n_params)
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ShapeMismatchError(f"theta has shape {theta.shape}, expected ({self.n_params},)")
        self.theta = theta.copy()
        self._bind_views()

    def _bind_views(self):
        self.weights, self.biases = [], []
        pos = 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            self.weights.append(self.theta[pos:pos + n_in * n_out].reshape(n_out, n_in))
            pos += n_in * n_out
            self.biases.append(self.theta[pos:pos + n_out])
            pos += n_out

    @classmethod
    def init(cls, sizes, activations, rng, group_size=None):
        """Glorot-uniform weights, zero biases."""
        net = cls(sizes, activations, group_size=group_size)
        for w in net.weights:
            fan_out, fan_in = w.shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w[...] = rng.uniform(-limit, limit, size=w.shape)
        return net

    @property
    def n_inputs(self):
        return self.sizes[0]

    @property
    def n_outputs(self):
        return self.sizes[-1]

    @property
    def n_groups(self):
        return self.n_outputs // self.group_size

    def copy(self):
        return Network(self.sizes, self.activations, self.theta, self.group_size)

    def load_theta(self, theta):
        self.theta[...] = theta

    def layer_slices(self):
        """``(weight_slice, bias_slice)`` into ``theta`` for every layer."""
        out, pos = [], 0
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(pos, pos + n_in * n_out)
            pos += n_in * n_out
            out.append((w, slice(pos, pos + n_out)))
            pos += n_out
        return out

    def forward(self, inputs):
        return forward(self, inputs)

    def __call__(self, inputs):
        return forward(self, inputs).output

    def save(self, path):
        header = {
            "kind": "network",
            "sizes": self.sizes,
            "activations": self.activations,
            "group_size": self.group_size,
        }
        write_flat(path, header, {"theta": self.theta})

    @classmethod
    def load(cls, path):
        header, arrays = read_flat(path)
        if header.get("kind") != "network":
            raise ValueError(f"{path} does not hold a network")
        return cls(header["sizes"], header["activations"], arrays["theta"], header["group_size"])


@dataclass
class ForwardCache:
    inputs: list  # input to each layer, shape (batch, n_in)
    pre: list  # pre-activation of each layer, shape (batch, n_out)
    output: np.ndarray
    activations: list
    group_size: int

    @property
    def batch_size(self):
        return self.output.shape[0]

    @property
    def last_pre(self):
        return self.pre[-1]


def _softmax_groups(z, group_size):
    b, n = z.shape
    g = z.reshape(b, n // group_size, group_size)
    g = g - g.max(axis=2, keepdims=True)
    e = np.exp(g)
    return (e / e.sum(axis=2, keepdims=True)).reshape(b, n)


def _activate(z, act, group_size):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "identity":
        return z
    return _softmax_groups(z, group_size)


def forward(net, inputs):
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.n_inputs:
        raise ShapeMismatchError(f"inputs of shape {x.shape} do not match {net.n_inputs} input units")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("inputs contain NaN or Inf")
    layer_inputs, pre = [], []
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        layer_inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = _activate(z, act, net.group_size)
    return ForwardCache(layer_inputs, pre, a, list(net.activations), net.group_size)


def _resolve_actions(cache, actions):
    n = cache.batch_size
    n_groups = cache.output.shape[1] // cache.group_size
    if actions is None:
        if n_groups != 1:
            raise ShapeMismatchError("actions are required when the network has several output groups")
        return np.zeros(n, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    if actions.shape != (n,):
        raise ShapeMismatchError(f"{actions.size} actions for a batch of {n}")
    if np.any(actions < 0) or np.any(actions >= n_groups):
        raise ShapeMismatchError("action index outside the output range")
    return actions


def _selected(cache, actions):
    """Outputs the loss looks at: one scalar per sample, or one histogram per sample."""
    k = cache.group_size
    rows = np.arange(cache.batch_size)
    if k == 1:
        return cache.output[rows, actions]
    cols = actions[:, None] * k + np.arange(k)
    return cache.output[rows[:, None], cols]


def _check_targets(cache, targets, loss, actions):
    targets = np.asarray(targets, dtype=np.float64)
    n = cache.batch_size
    if loss.kind == "ce":
        if cache.activations[-1] != "softmax":
            raise ShapeMismatchError("categorical cross-entropy requires a softmax output layer")
        if targets.shape != (n, cache.group_size):
            raise ShapeMismatchError(f"CE targets need shape ({n}, {cache.group_size}), got {targets.shape}")
    else:
        if cache.activations[-1] == "softmax":
            raise ShapeMismatchError(f"{loss.kind} loss is not defined on a softmax output layer")
        if cache.group_size != 1:
            raise ShapeMismatchError("scalar losses need one output per action")
        targets = targets.reshape(-1)
        if targets.shape != (n,):
            raise ShapeMismatchError(f"{targets.size} targets for a batch of {n}")
    return targets


def td_errors(cache, targets, actions=None):
    """``delta_i = Q(x_i)[a_i] - y_i`` for scalar heads."""
    actions = _resolve_actions(cache, actions)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    return _selected(cache, actions) - targets


def per_sample_losses(cache, targets, loss, actions=None):
    actions = _resolve_actions(cache, actions)
    targets = _check_targets(cache, targets, loss, actions)
    q = _selected(cache, actions)
    if loss.kind == "ce":
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        return -np.sum(np.where(targets > 0, targets * logq, 0.0), axis=1)
    d = q - targets
    if loss.kind == "l2":
        return 0.5 * d**2
    a = np.abs(d)
    return np.where(a <= HUBER_KAPPA, 0.5 * d**2, HUBER_KAPPA * (a - 0.5 * HUBER_KAPPA))


def last_layer_delta(cache, targets, loss, actions=None):
    """``dl/dz`` at the last layer, i.e. ``Sigma'(z) grad_q l``, shape (batch, n_out)."""
    actions = _resolve_actions(cache, actions)
    targets = _check_targets(cache, targets, loss, actions)
    n = cache.batch_size
    k = cache.group_size
    delta = np.zeros_like(cache.output)
    rows = np.arange(n)
    if loss.kind == "ce":
        # softmax + cross-entropy: dl/dz = q - y on the selected histogram
        cols = actions[:, None] * k + np.arange(k)
        delta[rows[:, None], cols] = cache.output[rows[:, None], cols] - targets
        return delta
    d = cache.output[rows, actions] - targets
    if loss.kind == "huber":
        d = np.clip(d, -HUBER_KAPPA, HUBER_KAPPA)
    if cache.activations[-1] == "relu":
        d = d * (cache.last_pre[rows, actions] > 0)
    delta[rows, actions] = d
    return delta


def surrogate_norm(cache, targets, loss, actions=None):
    """Forward-only gradient-norm surrogate ``||Sigma'(z_i) grad_q l(q_i, y_i)||``.

    The constant bounding ``||dz/dtheta||`` is taken as 1; it cancels once
    the surrogates are normalized into a distribution.
    """
    return np.linalg.norm(last_layer_delta(cache, targets, loss, actions), axis=1)


def _backprop(net, cache, delta, reduce_weights=None):
    """Per-sample gradients from a last-layer delta.

    With ``reduce_weights`` given, returns the single weighted-sum gradient
    instead of the (batch, n_params) matrix.
    """
    n = delta.shape[0]
    slices = net.layer_slices()
    if reduce_weights is None:
        out = np.empty((n, net.n_params))
    else:
        out = np.empty(net.n_params)
        delta = delta * np.asarray(reduce_weights, dtype=np.float64)[:, None]
    for layer in range(len(net.weights) - 1, -1, -1):
        a_prev = cache.inputs[layer]
        ws, bs = slices[layer]
        if reduce_weights is None:
            out[:, ws] = np.einsum("bi,bj->bij", delta, a_prev).reshape(n, -1)
            out[:, bs] = delta
        else:
            out[ws] = (delta.T @ a_prev).ravel()
            out[bs] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ net.weights[layer]
            act = cache.activations[layer - 1]
            if act == "relu":
                delta = delta * (cache.pre[layer - 1] > 0)
    return out


def per_sample_gradients(net, cache, targets, loss, actions=None):
    """Full gradient of each sample's loss w.r.t. ``theta``, shape (batch, n_params)."""
    if cache.output.shape[1] != net.n_outputs or cache.inputs[0].shape[1] != net.n_inputs:
        raise ShapeMismatchError("forward cache does not belong to this network")
    return _backprop(net, cache, last_layer_delta(cache, targets, loss, actions))


def per_sample_gradient_norms(net, cache, targets, loss, actions=None):
    return np.linalg.norm(per_sample_gradients(net, cache, targets, loss, actions), axis=1)


def batch_gradient(net, cache, targets, loss, actions=None, weights=None):
    """``(1/B) sum_i w_i grad l_i`` in one backward pass, without per-sample rows."""
    n = cache.batch_size
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    return _backprop(net, cache, last_layer_delta(cache, targets, loss, actions), w / n)


def output_jacobian(net, cache, sample):
    """Jacobian of the last pre-activation ``z`` w.r.t. ``theta`` for one sample.

    Shape (n_outputs, n_params). Used to check the surrogate bound exactly.
    """
    sub = ForwardCache(
        [a[sample:sample + 1] for a in cache.inputs],
        [z[sample:sample + 1] for z in cache.pre],
        cache.output[sample:sample + 1],
        cache.activations,
        cache.group_size,
    )
    k = net.n_outputs
    rows = []
    for j in range(k):
        e = np.zeros((1, k))
        e[0, j] = 1.0
        rows.append(_backprop(net, sub, e)[0])
    return np.array(rows)


def loss_at(net, theta, x, y, loss, action=None):
    """Scalar loss of one sample evaluated at an arbitrary parameter vector."""
    probe = Network(net.sizes, net.activations, theta, net.group_size)
    cache = forward(probe, x)
    targets = np.asarray(y, dtype=np.float64).reshape(1, -1) if loss.kind == "ce" else np.atleast_1d(y)
    actions = None if action is None else [action]
    return float(per_sample_losses(cache, targets, loss, actions)[0])


def finite_difference_loss_gradient(net, x, y, loss, h=FD_STEP, action=None):
    """Central differences ``(l(theta + h e_j) - l(theta - h e_j)) / 2h`` per coordinate."""
    theta = net.theta.copy()
    grad = np.empty_like(theta)
    for j in range(theta.size):
        orig = theta[j]
        theta[j] = orig + h
        up = loss_at(net, theta, x, y, loss, action)
        theta[j] = orig - h
        down = loss_at(net, theta, x, y, loss, action)
        theta[j] = orig
        grad[j] = (up - down) / (2 * h)
    return grad
