"""Minimal dense neural-network engine with exact analytic gradients.

Everything the value networks need and nothing more: fully-connected
layers with relu/identity/sigmoid activations, embedding tables with a
shared out-of-vocabulary row, huber and binary cross-entropy losses,
bias-corrected Adam, polyak target synchronization, and a central
finite-difference gradient checker that is independent of the backward
pass.

Parameters live in plain ``dict[str, np.ndarray]`` bundles so the
optimizer, the target-sync step, and the checkpoint writer all operate
on one uniform structure.  Gradient bundles mirror those dicts shape
for shape.  Model parameters default to float32 (the checkpoint block
format); the math is dtype-generic, and the numerical tests run on
float64 clones.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InternalError, NumericError

ACTIVATIONS = ("relu", "identity", "sigmoid")


def _apply_activation(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    if kind == "sigmoid":
        return sigmoid(z)
    raise ConfigError(f"unknown activation {kind!r}")


def _activation_grad(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "identity":
        return np.ones_like(z)
    if kind == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    raise ConfigError(f"unknown activation {kind!r}")


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def glorot_init(fan_out: int, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)


class DenseNetwork:
    """Feedforward net: y = act_L(W_L ... act_1(W_1 x + b_1) ... + b_L).

    Weights are stored as (out, in) matrices; inputs may be a single
    vector ``(in,)`` or a batch ``(B, in)``.  ``forward`` returns the
    output together with a cache that ``backward`` consumes to produce
    exact gradients for every parameter and for the input.
    """

    def __init__(self, dims, activations=None, rng=None, dtype=np.float32):
        if len(dims) < 2:
            raise ConfigError("a network needs at least one layer")
        n_layers = len(dims) - 1
        if activations is None:
            activations = ["relu"] * (n_layers - 1) + ["identity"]
        if len(activations) != n_layers:
            raise ConfigError("one activation per layer required")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")
        self.dims = tuple(int(d) for d in dims)
        self.activations = list(activations)
        self.weights = []
        self.biases = []
        if rng is None:
            rng = np.random.default_rng(0)
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            self.weights.append(glorot_init(fan_out, fan_in, rng, dtype))
            self.biases.append(np.zeros(fan_out, dtype=dtype))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self, prefix: str = "") -> dict:
        """Live views of the parameter arrays, keyed w0,b0,w1,b1,..."""
        out = {}
        for i in range(self.n_layers):
            out[f"{prefix}w{i}"] = self.weights[i]
            out[f"{prefix}b{i}"] = self.biases[i]
        return out

    def set_params(self, params: dict, prefix: str = "") -> None:
        for i in range(self.n_layers):
            w = params[f"{prefix}w{i}"]
            b = params[f"{prefix}b{i}"]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ConfigError("parameter shape mismatch in set_params")
            self.weights[i] = w
            self.biases[i] = b

    def astype(self, dtype) -> "DenseNetwork":
        clone = DenseNetwork(self.dims, self.activations, dtype=dtype)
        clone.weights = [w.astype(dtype) for w in self.weights]
        clone.biases = [b.astype(dtype) for b in self.biases]
        return clone

    def forward(self, x: np.ndarray):
        """Returns (y, cache); cache holds layer inputs and pre-activations."""
        x = np.asarray(x)
        squeeze = x.ndim == 1
        a = x[None, :] if squeeze else x
        if a.shape[-1] != self.dims[0]:
            raise ConfigError(f"input width {a.shape[-1]} != first layer width {self.dims[0]}")
        inputs = []
        preacts = []
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(a)
            z = a @ w.T + b
            preacts.append(z)
            a = _apply_activation(act, z)
        y = a[0] if squeeze else a
        cache = {"inputs": inputs, "preacts": preacts, "squeeze": squeeze, "net": self}
        return y, cache

    def backward(self, grad_y: np.ndarray, cache):
        """Gradients of a scalar loss wrt every parameter and the input.

        ``grad_y`` is dL/dy with the same shape the forward output had.
        Returns (grads dict, grad_x).
        """
        if cache.get("net") is not self:
            raise InternalError("cache does not belong to this network")
        grad_y = np.asarray(grad_y)
        squeeze = cache["squeeze"]
        g = grad_y[None, :] if squeeze else grad_y
        grads = {}
        for i in range(self.n_layers - 1, -1, -1):
            z = cache["preacts"][i]
            a_prev = cache["inputs"][i]
            dz = g * _activation_grad(self.activations[i], z)
            grads[f"w{i}"] = dz.T @ a_prev
            grads[f"b{i}"] = dz.sum(axis=0)
            g = dz @ self.weights[i]
        grad_x = g[0] if squeeze else g
        return grads, grad_x


def dense_forward(x: np.ndarray, net: DenseNetwork):
    return net.forward(x)


def dense_backward(grad_y: np.ndarray, cache):
    return cache["net"].backward(grad_y, cache)


class EmbeddingTable:
    """id -> row of width ``dim``; ids outside [0, vocab) share the OOV row.

    The OOV row is the trailing row of the storage, so lookups are total
    and gradients for unseen ids accumulate in one dedicated slot.
    """

    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, dtype=np.float32, scale: float = 0.05):
        if vocab < 1 or dim < 1:
            raise ConfigError("vocab and dim must be positive")
        self.vocab = int(vocab)
        self.dim = int(dim)
        self.rows = rng.uniform(-scale, scale, size=(self.vocab + 1, self.dim)).astype(dtype)

    def indices(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        return np.where((ids >= 0) & (ids < self.vocab), ids, self.vocab).astype(np.int64)

    def lookup(self, ids) -> np.ndarray:
        return self.rows[self.indices(ids)]

    def grad_rows(self) -> np.ndarray:
        return np.zeros_like(self.rows)


def huber(pred, target, delta: float = 1.0):
    """Elementwise huber loss: quadratic inside |e|<=delta, linear outside."""
    if delta <= 0:
        raise ConfigError("huber delta must be positive")
    pred = np.asarray(pred)
    target = np.asarray(target)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(target))):
        raise NumericError("non-finite input to huber")
    e = pred - target
    ae = np.abs(e)
    return np.where(ae <= delta, 0.5 * e * e, delta * (ae - 0.5 * delta))


def huber_grad(pred, target, delta: float = 1.0):
    """dL/dpred of the elementwise huber loss."""
    if delta <= 0:
        raise ConfigError("huber delta must be positive")
    e = np.asarray(pred) - np.asarray(target)
    return np.clip(e, -delta, delta)


def bce(logit, label):
    """Elementwise binary cross entropy on logits, log-sum-exp form."""
    logit = np.asarray(logit)
    label = np.asarray(label)
    if not np.all(np.isfinite(logit)):
        raise NumericError("non-finite logit in bce")
    return np.maximum(logit, 0.0) - logit * label + np.log1p(np.exp(-np.abs(logit)))


def bce_grad(logit, label):
    """dL/dlogit = sigmoid(logit) - label."""
    return sigmoid(np.asarray(logit)) - np.asarray(label)


class AdamState:
    """First/second moment accumulators and the shared step counter."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        g = grads.get(key)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape mismatch for {key!r}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)


def soft_update(target: dict, online: dict, tau: float) -> None:
    """Polyak sync: target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 < tau <= 1.0:
        raise ConfigError("tau must be in (0, 1]")
    for key, t in target.items():
        o = online[key]
        if o.shape != t.shape:
            raise ConfigError(f"shape mismatch for {key!r} in soft_update")
        t *= 1.0 - tau
        t += tau * o


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scales all gradients in place so the global L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return float(norm)


def accumulate(into: dict, grads: dict, prefix: str = "") -> None:
    """Adds ``grads`` into the bundle ``into`` under ``prefix`` keys."""
    for key, g in grads.items():
        full = prefix + key
        if full in into:
            into[full] += g
        else:
            into[full] = g.copy()


def _suffix_forward(net: DenseNetwork, layer: int, z: np.ndarray) -> np.ndarray:
    """Finishes a forward pass given layer ``layer``'s pre-activations."""
    a = _apply_activation(net.activations[layer], z)
    for i in range(layer + 1, net.n_layers):
        a = _apply_activation(net.activations[i], a @ net.weights[i].T + net.biases[i])
    return a


def grad_check(net: DenseNetwork, x: np.ndarray, eps: float = 1e-5, rng: np.random.Generator | None = None) -> float:
    """Max relative error of analytic vs central-difference gradients at ``x``.

    Checks every weight and bias of the network against the finite
    difference of the scalar probe L = c . y (fixed random c).  The
    perturbed-layer evaluations are vectorized but remain plain forward
    passes; no backward logic is reused.
    """
    if not 1e-7 < eps < 1e-3:
        raise ConfigError("eps out of the supported range")
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)
    net64 = net.astype(np.float64)
    y, cache = net64.forward(x)
    c = rng.standard_normal(y.shape)
    analytic, _ = net64.backward(c, cache)

    worst = 0.0
    for layer in range(net64.n_layers):
        a_prev = cache["inputs"][layer][0]
        z_base = cache["preacts"][layer][0]
        out_dim, in_dim = net64.weights[layer].shape

        # Weight sweep: perturbing w[r, cc] shifts z[r] by eps * a_prev[cc].
        n = out_dim * in_dim
        rows, cols = np.divmod(np.arange(n), in_dim)
        shift = a_prev[cols]
        fd_w = _central_diff(net64, layer, z_base, rows, shift, eps, c)
        worst = max(worst, _max_rel_err(analytic[f"w{layer}"].ravel(), fd_w))

        # Bias sweep: perturbing b[r] shifts z[r] by eps.
        rows_b = np.arange(out_dim)
        fd_b = _central_diff(net64, layer, z_base, rows_b, np.ones(out_dim), eps, c)
        worst = max(worst, _max_rel_err(analytic[f"b{layer}"], fd_b))
    return worst


def _central_diff(net, layer, z_base, rows, shift, eps, c):
    n = rows.shape[0]
    vals = {}
    for sign in (1.0, -1.0):
        z = np.tile(z_base, (n, 1))
        z[np.arange(n), rows] += sign * eps * shift
        y = _suffix_forward(net, layer, z)
        vals[sign] = y @ c
    return (vals[1.0] - vals[-1.0]) / (2.0 * eps)


def _max_rel_err(a: np.ndarray, b: np.ndarray) -> float:
    diff = np.abs(a - b)
    denom = np.abs(a) + np.abs(b) + 1e-6
    return float(np.max(diff / denom))


def fd_gradient(params: dict, fn, eps: float = 1e-5) -> dict:
    """Dumb central-difference gradient of scalar ``fn()`` wrt every entry.

    ``fn`` must read the (temporarily mutated) arrays in ``params``.
    Slow but fully general; used for composites the fast checker does
    not cover, e.g. embeddings feeding an MLP.
    """
    out = {}
    for key, p in params.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn()
            flat[i] = orig - eps
            down = fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        out[key] = g
    return out


def max_rel_err_bundle(analytic: dict, fd: dict) -> float:
    worst = 0.0
    for key in fd:
        worst = max(worst, _max_rel_err(np.asarray(analytic[key]).ravel(), fd[key].ravel()))
    return worst
