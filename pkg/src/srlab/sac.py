"""Soft Actor-Critic over a 1-dim continuous action, in plain numpy.

All gradients are hand-derived reverse-mode passes; nothing here depends on
an autodiff framework.  The agent bundles

* a tanh-squashed Gaussian policy: one MLP whose two outputs are the mean
  and the (clamped) log standard deviation of the pre-squash Gaussian,
* twin Q critics on the concatenated (state, action) input, each with a
  polyak-averaged target copy,
* one Adam optimizer per network and a plain gradient step on the entropy
  temperature in log space.

Update order within one call is fixed (critics, targets, actor,
temperature), which together with explicit rng threading makes training
bit-reproducible for a fixed seed on one platform.

Model files are a one-line JSON manifest followed by raw little-endian
float64 blocks; the exact layout lives in docs/model_format.md and is
enforced by the round-trip tests.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
TANH_CORRECTION_EPS = 1e-6
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

MODEL_FORMAT = "srlab-sac"
MODEL_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class SchemaMismatch(Exception):
    """Model file does not carry the expected format/version/size."""


# ---------------------------------------------------------------------------
# Multilayer perceptron with explicit backward pass


class Mlp:
    """Fully connected net, rectifier hidden layers, linear output.

    Parameters live in ``weights[i]`` of shape (fan_in, fan_out) and
    ``biases[i]``; a forward pass returns the output plus the cache the
    backward pass needs.  ``backward`` produces both the parameter
    gradients and the gradient with respect to the input, the latter being
    what lets critic gradients flow back into policy actions.
    """

    def __init__(self, sizes, rng):
        self.sizes = [int(n) for n in sizes]
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.weights = []
        self.biases = []
        last = len(self.sizes) - 2
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            scale = math.sqrt((2.0 if i < last else 1.0) / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x):
        """Batched forward pass; ``x`` is (batch, fan_in).

        Returns ``(y, cache)`` where cache holds the input of every layer.
        """
        h = np.asarray(x, dtype=float)
        cache = []
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = h @ w + b
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h, cache

    def backward(self, cache, dout):
        """Gradients of ``sum(dout * forward(x))`` w.r.t. params and input."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = np.asarray(dout, dtype=float)
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache[i]
            if i < len(self.weights) - 1:
                # cached input of layer i+1 is the rectified output of layer i
                delta = delta * (cache[i + 1] > 0.0)
            grads_w[i] = h_in.T @ delta
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend((gw, gb))
        return delta, grads

    def param_list(self):
        """Flat parameter views, alternating weight and bias per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def load_param_list(self, arrays):
        params = self.param_list()
        if len(arrays) != len(params):
            raise ValueError("parameter count mismatch")
        for dst, src in zip(params, arrays):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src

    def copy_from(self, other):
        self.load_param_list(other.param_list())


class Adam:
    """Standard Adam with bias correction over a flat list of arrays."""

    def __init__(self, params, lr):
        self.lr = float(lr)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - ADAM_BETA1**self.t
        b2t = 1.0 - ADAM_BETA2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Replay


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform batched sampling."""

    def __init__(self, capacity, state_dim, action_dim=1):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, state_dim))
        self.a = np.zeros((self.capacity, action_dim))
        self.r = np.zeros(self.capacity)
        self.s2 = np.zeros((self.capacity, state_dim))
        self.done = np.zeros(self.capacity)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done):
        i = self._next
        self.s[i] = s
        self.a[i] = a
        self.r[i] = r
        self.s2[i] = s2
        self.done[i] = 1.0 if done else 0.0
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch, rng):
        """Uniform batch without replacement within the batch."""
        if batch > self.size:
            raise ValueError("batch larger than buffer contents")
        idx = rng.choice(self.size, size=batch, replace=False)
        return (
            self.s[idx],
            self.a[idx],
            self.r[idx],
            self.s2[idx],
            self.done[idx],
        )


# ---------------------------------------------------------------------------
# Agent


@dataclass(frozen=True)
class SacConfig:
    """Algorithmic knobs; the environment/mission side lives in the harness."""

    state_dim: int = 12
    action_dim: int = 1
    hidden: tuple = (256, 256)
    gamma: float = 0.99
    lr: float = 3e-4
    lr_beta: float = 1e-3
    batch: int = 256
    warmup: int = 3000
    updates_per_step: int = 1
    tau: float = 0.005
    capacity: int = 100_000
    target_entropy: float = -3.0
    init_beta: float = 0.2
    total_steps: int = 20_000

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.init_beta > 0.0:
            raise ValueError("init_beta must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        for name in ("lr", "lr_beta", "batch", "capacity", "total_steps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.warmup < 0:
            raise ValueError("warmup cannot be negative")


class SacAgent:
    """Twin-critic SAC with automatic entropy temperature."""

    def __init__(self, config: SacConfig, rng):
        self.config = config
        sd, ad, hidden = config.state_dim, config.action_dim, config.hidden
        self.policy = Mlp([sd, *hidden, 2 * ad], rng)
        self.q1 = Mlp([sd + ad, *hidden, 1], rng)
        self.q2 = Mlp([sd + ad, *hidden, 1], rng)
        self.target_q1 = Mlp([sd + ad, *hidden, 1], rng)
        self.target_q2 = Mlp([sd + ad, *hidden, 1], rng)
        self.target_q1.copy_from(self.q1)
        self.target_q2.copy_from(self.q2)
        self.adam_policy = Adam(self.policy.param_list(), config.lr)
        self.adam_q1 = Adam(self.q1.param_list(), config.lr)
        self.adam_q2 = Adam(self.q2.param_list(), config.lr)
        self.log_beta = math.log(config.init_beta)

    @property
    def beta(self):
        return math.exp(self.log_beta)

    # -- policy heads -------------------------------------------------------

    def _heads(self, s):
        out, cache = self.policy.forward(s)
        ad = self.config.action_dim
        mean = out[:, :ad]
        raw_log_std = out[:, ad:]
        log_std = np.clip(raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        clamp_mask = (raw_log_std > LOG_STD_MIN) & (raw_log_std < LOG_STD_MAX)
        return mean, log_std, clamp_mask, cache

    def _squash(self, mean, log_std, eps):
        std = np.exp(log_std)
        z = mean + std * eps
        a = np.tanh(z)
        logp = (
            -0.5 * eps * eps
            - log_std
            - LOG_SQRT_2PI
            - np.log(1.0 - a * a + TANH_CORRECTION_EPS)
        ).sum(axis=1, keepdims=True)
        return a, logp, std

    def sample_actions(self, s, eps):
        """Actions and log-probs for given states and given normal draws."""
        mean, log_std, _, _ = self._heads(np.atleast_2d(s))
        a, logp, _ = self._squash(mean, log_std, eps)
        return a, logp

    def act(self, s, deterministic=False, rng=None):
        """Raw action in (-1, 1) for a single state."""
        s = np.asarray(s, dtype=float).reshape(1, -1)
        mean, log_std, _, _ = self._heads(s)
        if deterministic:
            return float(np.tanh(mean[0, 0]))
        if rng is None:
            raise ValueError("stochastic action needs an rng")
        eps = rng.standard_normal(size=(1, self.config.action_dim))
        a, _, _ = self._squash(mean, log_std, eps)
        return float(a[0, 0])

    # -- loss/gradient cores (also exercised directly by the test suite) ----

    def _critic_loss_and_grads(self, s, a, y):
        """Mean-squared Bellman error of both critics against targets ``y``."""
        xin = np.concatenate([s, a], axis=1)
        n = xin.shape[0]
        q1, c1 = self.q1.forward(xin)
        q2, c2 = self.q2.forward(xin)
        e1 = q1 - y
        e2 = q2 - y
        loss1 = float(np.mean(e1 * e1))
        loss2 = float(np.mean(e2 * e2))
        _, g1 = self.q1.backward(c1, 2.0 * e1 / n)
        _, g2 = self.q2.backward(c2, 2.0 * e2 / n)
        return loss1, loss2, g1, g2

    def _actor_loss_and_grads(self, s, eps):
        """Reparameterized actor objective and its policy gradients.

        Returns ``(loss, policy grads, logp)`` where the loss is
        mean(beta * logp - min(Q1, Q2)) under fixed noise ``eps``.
        """
        beta = self.beta
        n = s.shape[0]
        mean, log_std, clamp_mask, cache = self._heads(s)
        a, logp, std = self._squash(mean, log_std, eps)
        xin = np.concatenate([s, a], axis=1)
        q1, c1 = self.q1.forward(xin)
        q2, c2 = self.q2.forward(xin)
        use_q1 = q1 <= q2
        qmin = np.where(use_q1, q1, q2)
        loss = float(np.mean(beta * logp - qmin))

        sd = self.config.state_dim
        # dLoss/da through the selected critic only (parameters untouched)
        din1, _ = self.q1.backward(c1, np.where(use_q1, -1.0 / n, 0.0))
        din2, _ = self.q2.backward(c2, np.where(use_q1, 0.0, -1.0 / n))
        dq_da = din1[:, sd:] + din2[:, sd:]
        # dLoss/da through the squash correction of logp
        da = dq_da + (beta / n) * 2.0 * a / (1.0 - a * a + TANH_CORRECTION_EPS)
        dz = da * (1.0 - a * a)
        dmean = dz
        # log_std feeds z via std*eps and logp directly with slope -1
        dlog_std = (dz * std * eps - beta / n) * clamp_mask
        dout = np.concatenate([dmean, dlog_std], axis=1)
        _, grads = self.policy.backward(cache, dout)
        return loss, grads, logp

    # -- update steps -------------------------------------------------------

    def critic_step(self, s, a, r, s2, done, rng):
        """Soft Bellman regression step plus polyak target trail."""
        cfg = self.config
        eps2 = rng.standard_normal(size=(s2.shape[0], cfg.action_dim))
        a2, logp2 = self.sample_actions(s2, eps2)
        xin2 = np.concatenate([s2, a2], axis=1)
        qt1, _ = self.target_q1.forward(xin2)
        qt2, _ = self.target_q2.forward(xin2)
        qt = np.minimum(qt1, qt2) - self.beta * logp2
        y = r.reshape(-1, 1) + cfg.gamma * (1.0 - done.reshape(-1, 1)) * qt
        loss1, loss2, g1, g2 = self._critic_loss_and_grads(s, a, y)
        self.adam_q1.step(self.q1.param_list(), g1)
        self.adam_q2.step(self.q2.param_list(), g2)
        self._polyak(self.target_q1, self.q1)
        self._polyak(self.target_q2, self.q2)
        return loss1, loss2

    def actor_step(self, s, rng):
        """One Adam step on the policy followed by the temperature step."""
        eps = rng.standard_normal(size=(s.shape[0], self.config.action_dim))
        loss, grads, logp = self._actor_loss_and_grads(s, eps)
        self.adam_policy.step(self.policy.param_list(), grads)
        self._temperature_step(logp)
        return loss

    def update(self, buffer: ReplayBuffer, rng):
        """One full SAC update from a uniformly sampled batch."""
        s, a, r, s2, done = buffer.sample(self.config.batch, rng)
        loss1, loss2, = self.critic_step(s, a, r, s2, done, rng)
        actor_loss = self.actor_step(s, rng)
        return {
            "critic_loss": 0.5 * (loss1 + loss2),
            "policy_loss": actor_loss,
            "beta": self.beta,
        }

    def _temperature_step(self, logp):
        # gradient of mean(-beta * (logp + target_entropy)) w.r.t. beta,
        # applied as a plain step on log(beta)
        err = float(np.mean(logp)) + self.config.target_entropy
        self.log_beta += self.config.lr_beta * err

    def _polyak(self, target: Mlp, online: Mlp):
        tau = self.config.tau
        for tp, op in zip(target.param_list(), online.param_list()):
            tp *= 1.0 - tau
            tp += tau * op

    # -- persistence --------------------------------------------------------

    def _blocks(self):
        """Named parameter blocks in file order."""
        ad = self.config.action_dim
        pol = self.policy.param_list()
        w_out, b_out = pol[-2], pol[-1]
        blocks = []
        for i, arr in enumerate(pol[:-2]):
            kind = "w" if i % 2 == 0 else "b"
            blocks.append((f"policy_trunk_{kind}{i // 2 + 1}", arr))
        blocks.append(("policy_mean_w", w_out[:, :ad]))
        blocks.append(("policy_mean_b", b_out[:ad]))
        blocks.append(("policy_log_std_w", w_out[:, ad:]))
        blocks.append(("policy_log_std_b", b_out[ad:]))
        for name, net in (
            ("q1", self.q1),
            ("q2", self.q2),
            ("target_q1", self.target_q1),
            ("target_q2", self.target_q2),
        ):
            for i, arr in enumerate(net.param_list()):
                kind = "w" if i % 2 == 0 else "b"
                blocks.append((f"{name}_{kind}{i // 2 + 1}", arr))
        for name, adam in (
            ("policy", self.adam_policy),
            ("q1", self.adam_q1),
            ("q2", self.adam_q2),
        ):
            for i, (m, v) in enumerate(zip(adam.m, adam.v)):
                kind = "w" if i % 2 == 0 else "b"
                blocks.append((f"adam_{name}_m_{kind}{i // 2 + 1}", m))
                blocks.append((f"adam_{name}_v_{kind}{i // 2 + 1}", v))
        return blocks

    def save(self, path, alpha_max=None):
        """Write manifest line plus little-endian float64 parameter blocks."""
        cfg = self.config
        blocks = self._blocks()
        manifest = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "state_dim": cfg.state_dim,
            "action_dim": cfg.action_dim,
            "hidden": list(cfg.hidden),
            "gamma": cfg.gamma,
            "lr": cfg.lr,
            "lr_beta": cfg.lr_beta,
            "tau": cfg.tau,
            "target_entropy": cfg.target_entropy,
            "log_beta": self.log_beta,
            "alpha_max": alpha_max,
            "adam_t": {
                "policy": self.adam_policy.t,
                "q1": self.adam_q1.t,
                "q2": self.adam_q2.t,
            },
            "blocks": [[name, list(arr.shape)] for name, arr in blocks],
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(manifest).encode("ascii") + b"\n")
            for _, arr in blocks:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        """Rebuild an agent (and the stored alpha_max) from ``save`` output."""
        with open(path, "rb") as fh:
            header = fh.readline()
            try:
                manifest = json.loads(header.decode("ascii"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise SchemaMismatch(f"unreadable manifest: {exc}") from exc
            if manifest.get("format") != MODEL_FORMAT:
                raise SchemaMismatch(f"not a {MODEL_FORMAT} file")
            if manifest.get("version") != MODEL_VERSION:
                raise SchemaMismatch(
                    f"unsupported version {manifest.get('version')!r}"
                )
            payload = fh.read()

        config = SacConfig(
            state_dim=int(manifest["state_dim"]),
            action_dim=int(manifest["action_dim"]),
            hidden=tuple(int(h) for h in manifest["hidden"]),
            gamma=float(manifest["gamma"]),
            lr=float(manifest["lr"]),
            lr_beta=float(manifest["lr_beta"]),
            tau=float(manifest["tau"]),
            target_entropy=float(manifest["target_entropy"]),
        )
        agent = cls(config, np.random.default_rng(0))
        blocks = agent._blocks()
        names = [name for name, _ in blocks]
        if [b[0] for b in manifest["blocks"]] != names:
            raise SchemaMismatch("block list does not match this layout")
        offset = 0
        for (name, arr), (_, shape) in zip(blocks, manifest["blocks"]):
            if list(arr.shape) != list(shape):
                raise SchemaMismatch(f"block {name} has unexpected shape {shape}")
            nbytes = arr.size * 8
            chunk = payload[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise SchemaMismatch(f"file truncated inside block {name}")
            arr[...] = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape)
            offset += nbytes
        if offset != len(payload):
            raise SchemaMismatch("trailing bytes after final block")
        agent.log_beta = float(manifest["log_beta"])
        agent.adam_policy.t = int(manifest["adam_t"]["policy"])
        agent.adam_q1.t = int(manifest["adam_t"]["q1"])
        agent.adam_q2.t = int(manifest["adam_t"]["q2"])
        return agent, manifest.get("alpha_max")
