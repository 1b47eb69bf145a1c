"""Proximal policy optimization on the decomposition environment, in plain numpy.

Actor-critic MLP with a shared tanh trunk and separate policy/value heads,
hand-written backprop, Adam with bias correction, GAE, and the clipped
surrogate objective. A PPO update runs after every ``rollouts_per_update``
episodes (one by default).
"""

from __future__ import annotations

import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .env import DecompositionEnv, EnvConfig
from .graph import CallGraph
from .io import write_bytes_atomic
from .metrics import Decomposition

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "svcdecomp-policy/1"


class AgentError(RuntimeError):
    pass


class ShapeMismatch(AgentError, ValueError):
    pass


class EmptyBuffer(AgentError, ValueError):
    pass


class NonFiniteLoss(AgentError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 1500
    learning_rate: float = 3e-4
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    update_epochs: int = 4
    minibatch_size: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: tuple[int, ...] = (128, 128)
    seed: int = 0
    patience: int | None = None
    rollouts_per_update: int = 1

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        for name in ("learning_rate", "gamma", "gae_lambda", "value_coef", "max_grad_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be non-negative")
        if self.update_epochs < 1 or self.minibatch_size < 1:
            raise ValueError("update_epochs and minibatch_size must be >= 1")
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden layer sizes must be >= 1")
        if self.rollouts_per_update < 1:
            raise ValueError("rollouts_per_update must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


class ActorCritic:
    """MLP trunk -> (policy logits, state value). Parameters live in ``self.params``."""

    def __init__(self, obs_dim: int, n_actions: int, hidden=(128, 128), rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        self.params: dict[str, np.ndarray] = {}
        sizes = (obs_dim,) + self.hidden
        for i in range(len(self.hidden)):
            self.params[f"W{i}"] = _orthogonal(rng, sizes[i], sizes[i + 1], np.sqrt(2.0))
            self.params[f"b{i}"] = np.zeros(sizes[i + 1])
        self.params["Wp"] = _orthogonal(rng, sizes[-1], n_actions, 0.01)
        self.params["bp"] = np.zeros(n_actions)
        self.params["Wv"] = _orthogonal(rng, sizes[-1], 1, 1.0)
        self.params["bv"] = np.zeros(1)

    def _trunk(self, obs: np.ndarray) -> list[np.ndarray]:
        acts = [obs]
        h = obs
        for i in range(len(self.hidden)):
            h = np.tanh(h @ self.params[f"W{i}"] + self.params[f"b{i}"])
            acts.append(h)
        return acts

    def forward(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        obs = np.atleast_2d(obs)
        if obs.shape[1] != self.obs_dim:
            raise ShapeMismatch(f"observation has length {obs.shape[1]}, network expects {self.obs_dim}")
        acts = self._trunk(obs)
        h = acts[-1]
        logits = h @ self.params["Wp"] + self.params["bp"]
        value = (h @ self.params["Wv"] + self.params["bv"])[:, 0]
        return logits, value, acts

    def probabilities(self, obs: np.ndarray) -> np.ndarray:
        logits, _, _ = self.forward(obs)
        return _softmax(logits)

    def backward(self, acts: list[np.ndarray], d_logits: np.ndarray, d_value: np.ndarray) -> dict[str, np.ndarray]:
        h = acts[-1]
        grads = {
            "Wp": h.T @ d_logits,
            "bp": d_logits.sum(axis=0),
            "Wv": h.T @ d_value[:, None],
            "bv": np.array([d_value.sum()]),
        }
        dh = d_logits @ self.params["Wp"].T + d_value[:, None] @ self.params["Wv"].T
        for i in reversed(range(len(self.hidden))):
            dz = dh * (1.0 - acts[i + 1] ** 2)
            grads[f"W{i}"] = acts[i].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            if i > 0:
                dh = dz @ self.params[f"W{i}"].T
        return grads

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params.values())


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def select_action(
    net: ActorCritic, obs: np.ndarray, rng: np.random.Generator | None = None, greedy: bool = False
) -> tuple[int, float, float]:
    """Sample (or argmax) an action; returns (action, log-probability, value estimate)."""
    logits, value, _ = net.forward(obs)
    logp = _log_softmax(logits)[0]
    if greedy:
        action = int(np.argmax(logits[0]))
    else:
        if rng is None:
            raise ValueError("sampling needs a random generator")
        cdf = np.cumsum(np.exp(logp))
        action = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        action = min(action, net.n_actions - 1)
    return action, float(logp[action]), float(value[0])


@dataclass
class RolloutBuffer:
    observations: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)

    def add(self, obs, action, log_prob, value, reward, done) -> None:
        self.observations.append(obs)
        self.actions.append(action)
        self.log_probs.append(log_prob)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)

    def __len__(self) -> int:
        return len(self.rewards)

    def clear(self) -> None:
        for lst in (self.observations, self.actions, self.log_probs, self.values, self.rewards, self.dones):
            lst.clear()


def compute_gae(
    buffer: RolloutBuffer, gamma: float, lam: float, last_value: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets, not normalized.

    ``last_value`` bootstraps the state after the final step when that step
    is not terminal.
    """
    n = len(buffer)
    if n == 0:
        raise EmptyBuffer("no transitions to estimate advantages from")
    rewards = np.asarray(buffer.rewards, dtype=float)
    values = np.asarray(buffer.values, dtype=float)
    dones = np.asarray(buffer.dones, dtype=float)
    next_values = np.append(values[1:], last_value)
    adv = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_values[t] * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    return adv, adv + values


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def ppo_loss(net: ActorCritic, batch: Batch, cfg: TrainConfig) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Clipped-surrogate loss plus value and entropy terms, with its gradient."""
    n = batch.actions.size
    logits, value, acts = net.forward(batch.obs)
    logp_all = _log_softmax(logits)
    probs = np.exp(logp_all)
    rows = np.arange(n)
    logp = logp_all[rows, batch.actions]
    ratio = np.exp(logp - batch.old_log_probs)
    adv = batch.advantages
    eps = cfg.clip_epsilon
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    policy_loss = -np.minimum(surr1, surr2).mean()
    value_loss = ((value - batch.returns) ** 2).mean()
    entropy = -(probs * logp_all).sum(axis=1)
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy.mean()

    # where the clipped branch is strictly smaller the ratio sits outside the
    # trust region and the term has zero gradient
    d_logp = -(adv * ratio * (surr1 <= surr2)) / n
    onehot = np.zeros_like(probs)
    onehot[rows, batch.actions] = 1.0
    d_logits = d_logp[:, None] * (onehot - probs)
    d_logits += (cfg.entropy_coef / n) * probs * (logp_all + entropy[:, None])
    d_value = cfg.value_coef * 2.0 * (value - batch.returns) / n
    grads = net.backward(acts, d_logits, d_value)
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy.mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > eps).mean()),
    }
    return float(loss), grads, stats


def ppo_update(
    net: ActorCritic,
    opt: Adam,
    buffer: RolloutBuffer,
    cfg: TrainConfig,
    rng: np.random.Generator,
    last_value: float = 0.0,
) -> dict[str, float]:
    adv, returns = compute_gae(buffer, cfg.gamma, cfg.gae_lambda, last_value)
    std = adv.std()
    adv = (adv - adv.mean()) / (std + 1e-8)
    data = Batch(
        obs=np.asarray(buffer.observations),
        actions=np.asarray(buffer.actions, dtype=np.int64),
        old_log_probs=np.asarray(buffer.log_probs),
        advantages=adv,
        returns=returns,
    )
    n = len(buffer)
    stats: dict[str, float] = {}
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            mb = Batch(data.obs[idx], data.actions[idx], data.old_log_probs[idx], data.advantages[idx], data.returns[idx])
            loss, grads, stats = ppo_loss(net, mb, cfg)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss {loss}; last stats {stats}")
            stats["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(net.params, grads)
    if not net.all_finite():
        raise NonFiniteLoss("parameters became non-finite after update")
    buffer.clear()
    return stats


@dataclass
class EpisodeLog:
    episode: int
    episode_best: float
    global_best: float
    wall_time: float


@dataclass
class TrainResult:
    best: Decomposition
    best_objective: float
    log: list[EpisodeLog]
    net: ActorCritic
    optimizer: Adam
    greedy_objective: float | None = None


def run_episode(
    env: DecompositionEnv,
    net: ActorCritic,
    rng: np.random.Generator | None = None,
    greedy: bool = False,
    buffer: RolloutBuffer | None = None,
) -> float:
    obs = env.reset()
    done = False
    while not done:
        action, logp, value = select_action(net, obs, rng, greedy=greedy)
        out = env.step(action)
        if buffer is not None:
            buffer.add(obs, action, logp, value, out.reward, out.done)
        obs, done = out.observation, out.done
    return env.state.obj_best


def train(
    g: CallGraph,
    env_cfg: EnvConfig,
    train_cfg: TrainConfig,
    on_episode: Callable[[EpisodeLog], None] | None = None,
) -> TrainResult:
    """Train for ``train_cfg.episodes`` episodes and keep the best decomposition seen.

    After training, one greedy rollout of the final policy is also considered.
    With ``patience`` set, training stops once the global best has not
    improved for that many episodes.
    """
    env = DecompositionEnv(g, env_cfg)
    rng = np.random.default_rng(train_cfg.seed)
    net = ActorCritic(env_cfg.obs_dim, env_cfg.s_max, train_cfg.hidden, rng)
    opt = Adam(net.params, lr=train_cfg.learning_rate)
    buffer = RolloutBuffer()

    env.reset()
    best_obj = env.state.obj_best
    best_assignment = env.state.best_assignment.copy()
    history: list[EpisodeLog] = []
    t0 = time.perf_counter()
    stale = 0
    for ep in range(train_cfg.episodes):
        ep_best = run_episode(env, net, rng, buffer=buffer)
        if ep_best > best_obj:
            best_obj = ep_best
            best_assignment = env.state.best_assignment.copy()
            stale = 0
        else:
            stale += 1
        last = ep + 1 == train_cfg.episodes
        stop = train_cfg.patience is not None and stale >= train_cfg.patience
        if len(buffer) >= train_cfg.rollouts_per_update * env_cfg.horizon or last or stop:
            ppo_update(net, opt, buffer, train_cfg, rng)
        entry = EpisodeLog(ep, ep_best, best_obj, time.perf_counter() - t0)
        history.append(entry)
        if on_episode is not None:
            on_episode(entry)
        if ep % 100 == 0:
            log.debug("episode %d best %.6f global %.6f", ep, ep_best, best_obj)
        if stop:
            log.info("stopping after %d episodes without improvement", stale)
            break

    greedy_obj = None
    if train_cfg.episodes > 0:
        greedy_obj = run_episode(env, net, greedy=True)
        if greedy_obj > best_obj:
            best_obj = greedy_obj
            best_assignment = env.state.best_assignment.copy()
    return TrainResult(
        best=Decomposition(best_assignment).compacted(),
        best_objective=best_obj,
        log=history,
        net=net,
        optimizer=opt,
        greedy_objective=greedy_obj,
    )


def save_checkpoint(path: str | Path, result: TrainResult, train_cfg: TrainConfig, env_cfg: EnvConfig) -> bytes:
    """Serialize network weights, Adam moments and both configs into an ``.npz`` blob."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "train_config": asdict(train_cfg),
        "env_config": {
            "n_methods": env_cfg.n_methods,
            "p_max": env_cfg.p_max,
            "objective": str(env_cfg.objective),
            "seed": env_cfg.seed,
            "fractional": env_cfg.fractional,
        },
        "obs_dim": result.net.obs_dim,
        "n_actions": result.net.n_actions,
        "hidden": list(result.net.hidden),
        "adam_t": result.optimizer.t,
    }
    arrays = {f"param/{k}": v for k, v in result.net.params.items()}
    arrays.update({f"adam_m/{k}": v for k, v in result.optimizer.m.items()})
    arrays.update({f"adam_v/{k}": v for k, v in result.optimizer.v.items()})
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    data = buf.getvalue()
    if path is not None:
        write_bytes_atomic(path, data)
    return data


def load_checkpoint(path: str | Path) -> tuple[ActorCritic, Adam, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise AgentError(f"unsupported checkpoint format {meta.get('format')!r}")
        net = ActorCritic(meta["obs_dim"], meta["n_actions"], tuple(meta["hidden"]))
        for k in net.params:
            net.params[k] = z[f"param/{k}"].copy()
        opt = Adam(net.params, lr=meta["train_config"]["learning_rate"])
        for k in net.params:
            opt.m[k] = z[f"adam_m/{k}"].copy()
            opt.v[k] = z[f"adam_v/{k}"].copy()
        opt.t = meta["adam_t"]
    return net, opt, meta

