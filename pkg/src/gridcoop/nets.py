"""Actor and critic networks with hand-written backprop, Adam and DDPG updates.

Tensors are NHWC.  Every layer caches what its backward pass needs during
``forward`` and returns the input gradient from ``backward`` while storing
parameter gradients in ``grads``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

EDGE, CLOUD = "edge", "cloud"
ACTION_SCALE = 3.0

# (input width, conv filters, actor dense, critic dense) per tier
ARCH = {
    EDGE: dict(width=15, conv=(32, 16), actor=(96, 96, 15), critic=(96, 96, 48, 12, 1)),
    CLOUD: dict(width=60, conv=(32, 32, 16), actor=(512, 256, 60), critic=(512, 256, 128, 54, 1)),
}
FLAT = {EDGE: 144, CLOUD: 576}


def conv_out(n: int, k: int = 3, s: int = 2) -> int:
    return (n - k) // s + 1


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2D(Layer):
    """3x3 stride-2 valid convolution."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, k: int = 3, stride: int = 2,
                 input_grad: bool = True):
        super().__init__()
        self.k, self.stride, self.cin, self.cout = k, stride, cin, cout
        self.input_grad = input_grad  # the first layer never needs dL/dx
        bound = 1.0 / math.sqrt(k * k * cin)
        self.params["W"] = rng.uniform(-bound, bound, (k * k * cin, cout))
        self.params["b"] = rng.uniform(-bound, bound, cout)

    def forward(self, x):
        n, h, w, c = x.shape
        if c != self.cin:
            raise ValueError(f"conv expects {self.cin} channels, got {c}")
        k, s = self.k, self.stride
        ho, wo = conv_out(h, k, s), conv_out(w, k, s)
        win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
        # (n, ho, wo, c, k, k) -> (n, ho, wo, k, k, c)
        win = win[:, ::s, ::s][:, :ho, :wo].transpose(0, 1, 2, 4, 5, 3)
        cols = win.reshape(n * ho * wo, k * k * c)
        self.cache = (x.shape, cols, ho, wo)
        y = cols @ self.params["W"] + self.params["b"]
        return y.reshape(n, ho, wo, self.cout)

    def backward(self, dy):
        shape, cols, ho, wo = self.cache
        n, h, w, c = shape
        k, s = self.k, self.stride
        d2 = dy.reshape(-1, self.cout)
        self.grads["W"] = cols.T @ d2
        self.grads["b"] = d2.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (d2 @ self.params["W"].T).reshape(n, ho, wo, k, k, c)
        dx = np.zeros(shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
        return dx


class Dense(Layer):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(nin)
        self.params["W"] = rng.uniform(-bound, bound, (nin, nout))
        self.params["b"] = rng.uniform(-bound, bound, nout)

    def forward(self, x):
        self.cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy):
        x = self.cache
        self.grads["W"] = x.T @ dy
        self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.params["g"] = np.ones(dim)
        self.params["b"] = np.zeros(dim)

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + self.eps)
        xh = xc * inv
        self.cache = (xh, inv)
        return xh * self.params["g"] + self.params["b"]

    def backward(self, dy):
        xh, inv = self.cache
        self.grads["g"] = (dy * xh).sum(axis=0)
        self.grads["b"] = dy.sum(axis=0)
        dxh = dy * self.params["g"]
        m = xh.shape[-1]
        return inv / m * (m * dxh - dxh.sum(-1, keepdims=True) - xh * (dxh * xh).sum(-1, keepdims=True))


class Tanh(Layer):
    def forward(self, x):
        self.cache = np.tanh(x)
        return self.cache

    def backward(self, dy):
        return dy * (1.0 - self.cache ** 2)


class ReLU(Layer):
    def forward(self, x):
        self.cache = x > 0
        return np.where(self.cache, x, 0.0)

    def backward(self, dy):
        return dy * self.cache


class Flatten(Layer):
    def forward(self, x):
        self.cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self.cache)


class Scale(Layer):
    def __init__(self, factor: float):
        super().__init__()
        self.factor = factor

    def forward(self, x):
        return x * self.factor

    def backward(self, dy):
        return dy * self.factor


class Network:
    """Named layers with a flat ``name.param`` view of their parameters."""

    def __init__(self, tier: str, dtype=np.float64):
        if tier not in ARCH:
            raise ValueError(f"unknown tier {tier!r}")
        self.tier = tier
        self.dtype = np.dtype(dtype)
        self.width = ARCH[tier]["width"]
        self.layers: list[tuple[str, Layer]] = []

    def add(self, name: str, layer: Layer) -> Layer:
        for p in layer.params:
            layer.params[p] = layer.params[p].astype(self.dtype)
        self.layers.append((name, layer))
        return layer

    def named(self):
        for lname, layer in self.layers:
            for pname in layer.params:
                yield f"{lname}.{pname}", layer, pname

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {n: layer.params[p] for n, layer, p in self.named()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {n: layer.grads[p] for n, layer, p in self.named()}

    def load(self, tensors: Mapping[str, np.ndarray]) -> None:
        for n, layer, p in self.named():
            if n not in tensors:
                raise KeyError(f"missing tensor {n}")
            t = np.asarray(tensors[n], dtype=self.dtype)
            if t.shape != layer.params[p].shape:
                raise ValueError(f"shape mismatch for {n}: {t.shape} vs {layer.params[p].shape}")
            layer.params[p] = t.copy()

    def copy_from(self, other: "Network") -> None:
        self.load(other.params)

    def zero(self) -> None:
        for _, layer, p in self.named():
            layer.params[p] = np.zeros_like(layer.params[p])

    def _check_state(self, s):
        s = np.asarray(s, dtype=self.dtype)
        if s.ndim == 3:
            s = s[None]
        if s.shape[1:] != (self.width, self.width, 3):
            raise ValueError(f"{self.tier} net expects (*, {self.width}, {self.width}, 3), got {s.shape}")
        return s


def _conv_stack(net: Network, rng, act) -> int:
    side, cin = net.width, 3
    for i, cout in enumerate(ARCH[net.tier]["conv"], 1):
        net.add(f"conv{i}", Conv2D(cin, cout, rng, input_grad=i > 1))
        net.add(f"conv{i}_act", act())
        side, cin = conv_out(side), cout
    net.add("flatten", Flatten())
    flat = side * side * cin
    if flat != FLAT[net.tier]:
        raise AssertionError(f"{net.tier} flatten is {flat}, expected {FLAT[net.tier]}")
    return flat


class ActorNet(Network):
    """State graph -> one acceleration per column, in [-3, 3]."""

    def __init__(self, tier: str, rng: np.random.Generator, dtype=np.float64):
        super().__init__(tier, dtype)
        self.flat = _conv_stack(self, rng, Tanh)
        nin = self.flat
        dense = ARCH[tier]["actor"]
        for i, nout in enumerate(dense, 1):
            self.add(f"fc{i}", Dense(nin, nout, rng))
            self.add(f"fc{i}_act", Tanh())
            nin = nout
        self.add("scale", Scale(ACTION_SCALE))
        self.action_dim = dense[-1]
        if self.action_dim != self.width:
            raise AssertionError("action width must equal the graph width")

    def forward(self, s):
        x = self._check_state(s)
        for _, layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, da):
        for _, layer in reversed(self.layers):
            da = layer.backward(da)
        return da


class CriticNet(Network):
    """(state graph, action set) -> scalar value; actions join after flatten."""

    def __init__(self, tier: str, rng: np.random.Generator, dtype=np.float64):
        super().__init__(tier, dtype)
        self.flat = _conv_stack(self, rng, ReLU)
        self.n_conv = len(self.layers)
        self.action_dim = self.width
        nin = self.flat + self.action_dim
        self.concat_width = nin
        dense = ARCH[tier]["critic"]
        for i, nout in enumerate(dense, 1):
            self.add(f"fc{i}", Dense(nin, nout, rng))
            if i < len(dense):
                self.add(f"ln{i}", LayerNorm(nout))
                self.add(f"fc{i}_act", ReLU())
            nin = nout

    def forward(self, s, a):
        x = self._check_state(s)
        a = np.asarray(a, dtype=self.dtype).reshape(x.shape[0], -1)
        if a.shape[1] != self.action_dim:
            raise ValueError(f"critic expects {self.action_dim} actions, got {a.shape[1]}")
        for _, layer in self.layers[:self.n_conv]:
            x = layer.forward(x)
        x = np.concatenate([x, a], axis=1)
        for _, layer in self.layers[self.n_conv:]:
            x = layer.forward(x)
        return x[:, 0]

    def backward(self, dq, conv: bool = True):
        """Backprop ``dL/dq``; returns ``dL/da``.

        ``conv=False`` stops at the concatenation, which is all the actor
        update needs (conv gradients are then stale).
        """
        d = np.asarray(dq, dtype=self.dtype).reshape(-1, 1)
        for _, layer in reversed(self.layers[self.n_conv:]):
            d = layer.backward(d)
        da = d[:, self.flat:]
        if not conv:
            return da
        d = d[:, :self.flat]
        for _, layer in reversed(self.layers[:self.n_conv]):
            d = layer.backward(d)
        return da


class Adam:
    def __init__(self, net: Network, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.net, self.lr, self.b1, self.b2, self.eps = net, lr, b1, b2, eps
        self.m = {n: np.zeros_like(p) for n, p in net.params.items()}
        self.v = {n: np.zeros_like(p) for n, p in net.params.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for n, layer, p in self.net.named():
            g = layer.grads[p]
            m = self.m[n]
            v = self.v[n]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            layer.params[p] = layer.params[p] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class Hyperparams:
    gamma: float = 0.8
    batch: int = 48
    tau: float = 0.99
    episodes: int = 50
    lr_actor: float = 1e-3
    lr_critic: float = 0.05
    sigma_start: float = 0.5
    sigma_end: float = 0.05

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0 <= self.tau <= 1:
            raise ValueError("tau must lie in [0, 1]")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    def fraction(self, episode: int) -> float:
        return min(max(episode / self.episodes, 0.0), 1.0)

    def lr_at(self, episode: int) -> tuple[float, float]:
        """(actor, critic) learning rates, decaying linearly to 0 at the last episode."""
        keep = 1.0 - self.fraction(episode)
        return self.lr_actor * keep, self.lr_critic * keep

    def sigma_at(self, episode: int) -> float:
        span = max(self.episodes - 1, 1)
        f = min(max(episode / span, 0.0), 1.0)
        return self.sigma_start + (self.sigma_end - self.sigma_start) * f


class ReplayBuffer:
    """FIFO experience store (float32) with uniform sampling without replacement."""

    def __init__(self, capacity: int, width: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity, self.width = int(capacity), width
        shape = (self.capacity, width, width, 3)
        self.s = np.zeros(shape, dtype=np.float32)
        self.s2 = np.zeros(shape, dtype=np.float32)
        self.a = np.zeros((self.capacity, width), dtype=np.float32)
        self.r = np.zeros(self.capacity, dtype=np.float32)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def store(self, s, a, r: float, s2) -> None:
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, r, s2
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < batch:
            raise ValueError(f"buffer holds {self.size} < {batch} transitions")
        return rng.choice(self.size, batch, replace=False)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = self.sample_indices(batch, rng)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx]


class DivergenceError(RuntimeError):
    pass


@dataclass
class Agent:
    """Evaluation and target networks of one tier plus their optimisers."""
    actor: ActorNet
    critic: CriticNet
    target_actor: ActorNet
    target_critic: CriticNet
    hp: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        self.actor_opt = Adam(self.actor, self.hp.lr_actor)
        self.critic_opt = Adam(self.critic, self.hp.lr_critic)

    @classmethod
    def create(cls, tier: str, seed: int = 0, hp: Hyperparams | None = None,
               dtype=np.float64) -> "Agent":
        rng = np.random.default_rng(seed)
        actor, critic = ActorNet(tier, rng, dtype), CriticNet(tier, rng, dtype)
        ta, tc = ActorNet(tier, rng, dtype), CriticNet(tier, rng, dtype)
        ta.copy_from(actor)
        tc.copy_from(critic)
        return cls(actor, critic, ta, tc, hp or Hyperparams())

    @property
    def tier(self) -> str:
        return self.actor.tier

    def set_episode(self, episode: int) -> None:
        self.actor_opt.lr, self.critic_opt.lr = self.hp.lr_at(episode)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("target_actor", self.target_actor), ("target_critic", self.target_critic)):
            for n, p in net.params.items():
                out[f"{tag}.{n}"] = p
        return out

    def load(self, tensors: Mapping[str, np.ndarray]) -> None:
        for tag, net in (("actor", self.actor), ("critic", self.critic),
                         ("target_actor", self.target_actor), ("target_critic", self.target_critic)):
            pre = tag + "."
            net.load({k[len(pre):]: v for k, v in tensors.items() if k.startswith(pre)})


def _finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {name}")


def critic_update(agent: Agent, batch) -> float:
    s, a, r, s2 = batch
    hp = agent.hp
    y = r + hp.gamma * agent.target_critic.forward(s2, agent.target_actor.forward(s2))
    q = agent.critic.forward(s, a)
    err = y - q
    loss = float(np.mean(err ** 2))
    _finite("critic loss", loss)
    agent.critic.backward(-2.0 * err / len(err))
    for g in agent.critic.grads.values():
        _finite("critic gradient", g)
    agent.critic_opt.step()
    return loss


def actor_update(agent: Agent, batch) -> float:
    """One ascent step on mean Q(s, mu(s)); the critic is left untouched."""
    s = batch[0]
    act = agent.actor.forward(s)
    q = agent.critic.forward(s, act)
    objective = float(np.mean(q))
    _finite("actor objective", objective)
    da = agent.critic.backward(-np.ones_like(q) / len(q), conv=False)
    agent.actor.backward(da)
    for g in agent.actor.grads.values():
        _finite("actor gradient", g)
    agent.actor_opt.step()
    return objective


def soft_update(theta: np.ndarray, theta_t: np.ndarray, tau: float) -> np.ndarray:
    return tau * theta + (1.0 - tau) * theta_t


def target_sync(agent: Agent) -> None:
    tau = agent.hp.tau
    for src, dst in ((agent.actor, agent.target_actor), (agent.critic, agent.target_critic)):
        for (n, layer, p), (_, tl, tp) in zip(src.named(), dst.named()):
            tl.params[tp] = soft_update(layer.params[p], tl.params[tp], tau)


def select_action(actor: ActorNet, sg, sigma: float = 0.0, rng: np.random.Generator | None = None):
    a = actor.forward(sg)[0]
    if sigma > 0:
        if rng is None:
            raise ValueError("exploration noise needs an rng")
        a = a + rng.normal(0.0, sigma, a.shape)
    return np.clip(a, -ACTION_SCALE, ACTION_SCALE)


# checkpoint: little-endian; magic, u32 version, u32 count, then per tensor
# u16 name length, utf-8 name, u8 ndim, u32 dims, f64 row-major values
MAGIC = b"GCNETCKP"
VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        t = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(t.tobytes())
    meta = dict(meta or {})
    blob = "\n".join(f"{k}={meta[k]}" for k in sorted(meta)).encode()
    parts.append(struct.pack("<I", len(blob)) + blob)
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path, with_meta: bool = False):
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 16
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape).astype(float)
        off += 8 * size
    meta = {}
    if off < len(buf):
        (mlen,) = struct.unpack_from("<I", buf, off)
        text = buf[off + 4:off + 4 + mlen].decode()
        meta = dict(line.split("=", 1) for line in text.splitlines() if line)
    return (out, meta) if with_meta else out
