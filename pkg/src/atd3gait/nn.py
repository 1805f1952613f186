"""Small differentiable building blocks: dense layers, a GRU cell, Adam.

Every network keeps its parameters in one flat float64 vector; layers hold
views into it. That makes optimizer steps, soft target updates and
checkpointing single vectorised operations.

Batch convention: inputs are ``(batch, features)`` for dense layers and
``(batch, time, features)`` for the GRU. Backward passes *assign* parameter
gradients (they do not accumulate across calls), so a backward always refers
to the most recent forward on the same object.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


def sigmoid(x):
    # tanh form: overflow-free and much cheaper than exp-based variants here
    return 0.5 * np.tanh(0.5 * x) + 0.5


def _activate(pre, kind):
    if kind == "relu":
        return np.maximum(pre, 0.0)
    if kind == "tanh":
        return np.tanh(pre)
    return pre


def _activation_grad(grad_out, pre, out, kind):
    if kind == "relu":
        return grad_out * (pre > 0.0)
    if kind == "tanh":
        return grad_out * (1.0 - out * out)
    return grad_out


class Layer:
    """Base class: declares parameter shapes, receives views on bind()."""

    shapes: dict[str, tuple[int, ...]]

    def __init__(self):
        self.p: dict[str, np.ndarray] = {}
        self.g: dict[str, np.ndarray] = {}
        self._cache = None

    @property
    def size(self):
        return sum(int(np.prod(s)) for s in self.shapes.values())

    def bind(self, params, grads):
        off = 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape))
            self.p[name] = params[off:off + n].reshape(shape)
            self.g[name] = grads[off:off + n].reshape(shape)
            off += n

    def init(self, rng):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache


class Dense(Layer):
    def __init__(self, n_in, n_out, activation="identity"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.shapes = {"W": (n_out, n_in), "b": (n_out,)}

    def init(self, rng):
        bound = 1.0 / np.sqrt(self.n_in)
        self.p["W"][...] = rng.uniform(-bound, bound, size=self.shapes["W"])
        self.p["b"][...] = rng.uniform(-bound, bound, size=self.shapes["b"])

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"Dense expects {self.n_in} inputs, got {x.shape[-1]}")
        pre = np.dot(x, self.p["W"].T) + self.p["b"]
        out = _activate(pre, self.activation)
        self._cache = (x, pre, out)
        return out

    def backward(self, grad_out):
        x, pre, out = self._need_cache()
        gpre = _activation_grad(grad_out, pre, out, self.activation)
        if x.ndim == 1:
            self.g["W"][...] = np.outer(gpre, x)
            self.g["b"][...] = gpre
        else:
            self.g["W"][...] = np.dot(gpre.T, x)
            self.g["b"][...] = gpre.sum(axis=0)
        return np.dot(gpre, self.p["W"])


class GRU(Layer):
    """GRU over a sequence, returning the final hidden state.

    Gates: z (update), r (reset); candidate c = tanh(W_c x + U_c (r*h) + b_c);
    h' = (1 - z) * h + z * c. Stacked row blocks are ordered [z, r, c].
    """

    def __init__(self, n_in, hidden):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        self.shapes = {"W": (3 * hidden, n_in), "U": (3 * hidden, hidden), "b": (3 * hidden,)}

    def init(self, rng):
        bound = 1.0 / np.sqrt(self.hidden)
        for name, shape in self.shapes.items():
            self.p[name][...] = rng.uniform(-bound, bound, size=shape)

    def step(self, x, h, xw=None):
        """One recurrence step for a batch; returns (h_new, cache).

        ``h=None`` means a zero hidden state: the reset gate and recurrent
        matmuls drop out. ``xw`` optionally supplies ``x @ W.T + b``.
        """
        H = self.hidden
        U = self.p["U"]
        if xw is None:
            xw = np.dot(x, self.p["W"].T) + self.p["b"]
        if h is None:
            z = sigmoid(xw[:, :H])
            c = np.tanh(xw[:, 2 * H:])
            return z * c, (None, z, None, None, c)
        zr = sigmoid(xw[:, :2 * H] + np.dot(h, U[:2 * H].T))
        z, r = zr[:, :H], zr[:, H:]
        rh = r * h
        c = np.tanh(xw[:, 2 * H:] + np.dot(rh, U[2 * H:].T))
        h_new = h + z * (c - h)
        return h_new, (h, z, r, rh, c)

    def forward(self, seq):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 3 or seq.shape[-1] != self.n_in:
            raise ValueError(f"GRU expects (batch, time, {self.n_in}), got {seq.shape}")
        # input projections for all time steps in one matmul
        xw = np.dot(seq.reshape(-1, self.n_in), self.p["W"].T).reshape(seq.shape[0], seq.shape[1], -1) + self.p["b"]
        h = None
        caches = []
        for t in range(seq.shape[1]):
            h, c = self.step(None, h, xw[:, t])
            caches.append(c)
        self._cache = (seq, caches)
        return h

    def backward(self, grad_h):
        seq, caches = self._need_cache()
        H = self.hidden
        U = self.p["U"]
        B, T = seq.shape[0], len(caches)
        gU = np.zeros_like(U)
        dall = np.zeros((B, T, 3 * H))
        dh = grad_h
        for t in range(T - 1, -1, -1):
            h, z, r, rh, c = caches[t]
            d = dall[:, t]
            if h is None:
                # zero initial state: no reset-gate or recurrent gradient
                d[:, :H] = dh * c * z * (1.0 - z)
                d[:, 2 * H:] = dh * z * (1.0 - c * c)
                continue
            dac = dh * z * (1.0 - c * c)
            d[:, 2 * H:] = dac
            drh = np.dot(dac, U[2 * H:])
            d[:, :H] = dh * (c - h) * z * (1.0 - z)
            d[:, H:2 * H] = drh * h * r * (1.0 - r)
            dzr = d[:, :2 * H]
            gU[:2 * H] += np.dot(dzr.T, h)
            gU[2 * H:] += np.dot(dac.T, rh)
            dh = dh * (1.0 - z) + drh * r + np.dot(dzr, U[:2 * H])
        flat = dall.reshape(B * T, 3 * H)
        self.g["W"][...] = np.dot(flat.T, seq.reshape(B * T, self.n_in))
        self.g["U"][...] = gU
        self.g["b"][...] = flat.sum(axis=0)
        return np.dot(flat, self.p["W"]).reshape(B, T, self.n_in)


def gru_step(cell: GRU, x, h):
    """Single-sample convenience wrapper around :meth:`GRU.step`."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape[-1] != cell.n_in or h.shape[-1] != cell.hidden:
        raise ValueError("gru_step: input/hidden size mismatch")
    h_new, _ = cell.step(np.atleast_2d(x), np.atleast_2d(h).astype(np.float64))
    return h_new[0] if x.ndim == 1 else h_new


class Network:
    """A set of named layers sharing one flat parameter/gradient vector."""

    def __init__(self, layers: dict[str, Layer], rng=None):
        self.layers = layers
        total = sum(layer.size for layer in layers.values())
        self.params = np.zeros(total)
        self.grads = np.zeros(total)
        self._bind()
        if rng is not None:
            for layer in layers.values():
                layer.init(rng)

    def _bind(self):
        off = 0
        for layer in self.layers.values():
            n = layer.size
            layer.bind(self.params[off:off + n], self.grads[off:off + n])
            off += n

    def copy(self):
        clone = copy.copy(self)
        clone.layers = {k: copy.deepcopy(v) for k, v in self.layers.items()}
        for layer in clone.layers.values():
            layer._cache = None
        clone.params = self.params.copy()
        clone.grads = np.zeros_like(self.grads)
        clone._bind()
        return clone

    def named_arrays(self):
        for lname, layer in self.layers.items():
            for pname in layer.shapes:
                yield f"{lname}.{pname}", layer.p[pname]

    def architecture(self) -> dict:
        raise NotImplementedError


def soft_update(live: Network, target: Network, tau: float):
    """target <- tau * live + (1 - tau) * target, in place."""
    if live.params.shape != target.params.shape:
        raise ValueError("soft_update: parameter shape mismatch")
    target.params[:] = tau * live.params + (1.0 - tau) * target.params


def mse(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    diff = np.asarray(pred, dtype=np.float64) - target
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def for_params(cls, params, **kw):
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), **kw)

    def to_dict(self):
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "t": self.t, "m": self.m.tolist(), "v": self.v.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"], t=d["t"],
                   m=np.array(d["m"], dtype=np.float64), v=np.array(d["v"], dtype=np.float64))


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """Bias-corrected Adam update applied to ``params`` in place."""
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("adam_step: shape mismatch")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    mhat = state.m / (1.0 - state.beta1 ** state.t)
    vhat = state.v / (1.0 - state.beta2 ** state.t)
    params -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params


# ---------------------------------------------------------------- networks


class Actor(Network):
    """State sequence -> action in [-1, 1].

    Recurrent: GRU -> dense(relu) -> dense(tanh). Feed-forward: the GRU is
    replaced by a dense(relu) layer on the latest observation.
    """

    def __init__(self, obs_dim, act_dim, hidden=64, recurrent=False, rng=None):
        self.obs_dim, self.act_dim, self.hidden, self.recurrent = obs_dim, act_dim, hidden, recurrent
        enc = GRU(obs_dim, hidden) if recurrent else Dense(obs_dim, hidden, "relu")
        super().__init__({"enc": enc,
                          "fc1": Dense(hidden, hidden, "relu"),
                          "out": Dense(hidden, act_dim, "tanh")}, rng)

    def architecture(self):
        return {"kind": "actor", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "hidden": self.hidden, "recurrent": self.recurrent}

    def forward(self, seq):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 3 or seq.shape[-1] != self.obs_dim:
            raise ValueError(f"actor expects (batch, T, {self.obs_dim}), got {seq.shape}")
        L = self.layers
        h = L["enc"].forward(seq if self.recurrent else seq[:, -1, :])
        return L["out"].forward(L["fc1"].forward(h))

    def backward(self, grad_action):
        L = self.layers
        g = L["fc1"].backward(L["out"].backward(grad_action))
        return L["enc"].backward(g)


class Critic(Network):
    """(state sequence, action) -> scalar Q.

    Encoder (GRU or dense relu) -> concat action -> dense relu -> dense relu
    -> dense(1).
    """

    def __init__(self, obs_dim, act_dim, hidden=64, recurrent=False, rng=None):
        self.obs_dim, self.act_dim, self.hidden, self.recurrent = obs_dim, act_dim, hidden, recurrent
        enc = GRU(obs_dim, hidden) if recurrent else Dense(obs_dim, hidden, "relu")
        super().__init__({"enc": enc,
                          "fc1": Dense(hidden + act_dim, hidden, "relu"),
                          "fc2": Dense(hidden, hidden, "relu"),
                          "out": Dense(hidden, 1)}, rng)

    def architecture(self):
        return {"kind": "critic", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
                "hidden": self.hidden, "recurrent": self.recurrent}

    def forward(self, seq, action):
        seq = np.asarray(seq, dtype=np.float64)
        action = np.asarray(action, dtype=np.float64)
        if seq.ndim != 3 or seq.shape[-1] != self.obs_dim:
            raise ValueError(f"critic expects (batch, T, {self.obs_dim}), got {seq.shape}")
        if action.shape != (seq.shape[0], self.act_dim):
            raise ValueError(f"critic expects actions of shape ({seq.shape[0]}, {self.act_dim})")
        L = self.layers
        h = L["enc"].forward(seq if self.recurrent else seq[:, -1, :])
        x = np.concatenate([h, action], axis=1)
        return L["out"].forward(L["fc2"].forward(L["fc1"].forward(x)))[:, 0]

    def backward(self, grad_q):
        """Assigns parameter gradients; returns the gradient w.r.t. the action."""
        L = self.layers
        g = L["fc1"].backward(L["fc2"].backward(L["out"].backward(grad_q[:, None])))
        L["enc"].backward(g[:, :self.hidden])
        return g[:, self.hidden:]


def build_network(arch: dict, rng=None) -> Network:
    cls = {"actor": Actor, "critic": Critic}[arch["kind"]]
    return cls(arch["obs_dim"], arch["act_dim"], hidden=arch["hidden"],
               recurrent=arch["recurrent"], rng=rng)


# -------------------------------------------------------------- checkpoints

CHECKPOINT_VERSION = 1


def network_to_dict(net: Network) -> dict:
    return {name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in net.named_arrays()}


def load_network_dict(net: Network, d: dict):
    for name, arr in net.named_arrays():
        if name not in d:
            raise ValueError(f"checkpoint missing array {name!r}")
        entry = d[name]
        if tuple(entry["shape"]) != arr.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}: "
                             f"{entry['shape']} vs {list(arr.shape)}")
        arr[...] = np.asarray(entry["data"], dtype=np.float64).reshape(arr.shape)


def save_checkpoint(path, networks: dict[str, Network], metadata: dict, extra: dict | None = None):
    doc = {
        "version": CHECKPOINT_VERSION,
        "metadata": metadata,
        "architecture": {k: n.architecture() for k, n in networks.items()},
        "layers": {k: network_to_dict(n) for k, n in networks.items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> tuple[dict[str, Network], dict, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    nets = {}
    for name, arch in doc["architecture"].items():
        net = build_network(arch)
        load_network_dict(net, doc["layers"][name])
        nets[name] = net
    return nets, doc["metadata"], doc.get("extra", {})
