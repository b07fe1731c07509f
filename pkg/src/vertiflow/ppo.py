"""Clipped-surrogate policy-gradient trainer.

Rollouts are whole episodes collected from one or more environment workers
stepping in lockstep (one batched forward per step), so a single CPU core
spends its time in BLAS instead of per-worker python. Advantages are
one-step TD by default; the value target is the empirical discounted
return to episode end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .neural import PolicyNetwork, Tensor, no_grad


@dataclass
class TrainConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    value_coef: float = 1.0
    lr: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    rollout_steps: int = 2048
    grad_clip: float = 0.5
    reward_scale: float = 0.01
    normalize_advantage: bool = True
    entropy_coef: float = 0.0
    use_gae: bool = False
    gae_lambda: float = 0.95
    n_workers: int = 1
    lr_final_scale: float = 1.0
    # decay horizon for the lr ramp; None ties it to the run length, a larger
    # value lets a shorter run retrace the prefix of a longer schedule
    schedule_updates: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if self.value_coef < 0:
            raise ValueError("value_coef must be non-negative")
        if self.lr <= 0 or self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("lr, epochs and minibatch_size must be positive")
        if self.rollout_steps < 1 or self.n_workers < 1:
            raise ValueError("rollout_steps and n_workers must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not 0.0 <= self.lr_final_scale <= 1.0:
            raise ValueError("lr_final_scale must lie in [0, 1]")
        if self.schedule_updates is not None and self.schedule_updates < 1:
            raise ValueError("schedule_updates must be positive")


# -- loss algebra --------------------------------------------------------------


def advantage(rewards, gamma: float, v_next, v):
    """One-step TD advantage r + gamma * V(next) - V(current).

    Terminal steps must pass v_next = 0.
    """
    return np.asarray(rewards) + gamma * np.asarray(v_next) - np.asarray(v)


def ratio(logp_new, logp_old):
    """exp(logp_new - logp_old); keeps the graph when logp_new is a Tensor."""
    if isinstance(logp_new, Tensor):
        return (logp_new - Tensor(np.asarray(logp_old))).exp()
    return np.exp(np.asarray(logp_new) - np.asarray(logp_old))


def _select(mask: np.ndarray, a, b):
    """Elementwise a-where-mask-else-b; gradients flow to the taken branch."""
    m = mask.astype(np.float64)
    return a * m + b * (1.0 - m)


def clip_loss(rho, adv, eps: float):
    """Per-sample clipped surrogate min(rho*A, clip(rho, 1-eps, 1+eps)*A)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(rho, Tensor):
        clipped_data = np.clip(rho.data, 1.0 - eps, 1.0 + eps)
        inside = (rho.data >= 1.0 - eps) & (rho.data <= 1.0 + eps)
        rho_clipped = _select(inside, rho, Tensor(clipped_data))
        adv_t = Tensor(np.asarray(adv))
        lhs = rho * adv_t
        rhs = rho_clipped * adv_t
        return _select(lhs.data <= rhs.data, lhs, rhs)
    rho = np.asarray(rho)
    adv = np.asarray(adv)
    return np.minimum(rho * adv, np.clip(rho, 1.0 - eps, 1.0 + eps) * adv)


def value_loss(predictions, returns):
    """Mean squared error against empirical discounted returns."""
    preds = predictions.data if isinstance(predictions, Tensor) else np.asarray(predictions)
    if preds.size == 0:
        raise ValueError("value loss needs a non-empty batch")
    if isinstance(predictions, Tensor):
        diff = predictions - Tensor(np.asarray(returns))
        return (diff * diff).mean()
    return float(np.mean((preds - np.asarray(returns)) ** 2))


def discounted_returns(rewards: np.ndarray, dones: np.ndarray,
                       gamma: float) -> np.ndarray:
    """Per-step discounted return to the end of its own episode."""
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if dones[t]:
            acc = 0.0
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


# -- optimizer ------------------------------------------------------------------


class Adam:
    """Adam with bias correction; parameters without gradients are skipped."""

    def __init__(self, params: Sequence[Tuple[str, Tensor]], lr: float = 3e-4,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self._m[name] = b1 * self._m[name] + (1 - b1) * p.grad
            v = self._v[name] = b2 * self._v[name] + (1 - b2) * p.grad ** 2
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_grad_norm(params: Sequence[Tuple[str, Tensor]], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total_sq = 0.0
    for _, p in params:
        if p.grad is not None:
            total_sq += float(np.sum(p.grad ** 2))
    total = math.sqrt(total_sq)
    if total > max_norm > 0:
        scale = max_norm / total
        for _, p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


# -- rollouts ---------------------------------------------------------------------


@dataclass
class RolloutBuffer:
    stacks: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    next_values: np.ndarray
    dones: np.ndarray
    episode_slices: List[Tuple[int, int]] = field(default_factory=list)
    episode_returns: List[float] = field(default_factory=list)
    episode_seeds: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def slice(self, start: int, end: int) -> "RolloutBuffer":
        return RolloutBuffer(self.stacks[start:end], self.actions[start:end],
                             self.log_probs[start:end], self.rewards[start:end],
                             self.values[start:end], self.next_values[start:end],
                             self.dones[start:end])

    def targets(self, cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
        """Advantages and value targets in reward-scaled units."""
        scaled = self.rewards * cfg.reward_scale
        deltas = advantage(scaled, cfg.gamma, self.next_values, self.values)
        if cfg.use_gae:
            adv = np.zeros(len(scaled))
            acc = 0.0
            for t in range(len(scaled) - 1, -1, -1):
                if self.dones[t]:
                    acc = 0.0
                acc = deltas[t] + cfg.gamma * cfg.gae_lambda * acc
                adv[t] = acc
        else:
            adv = deltas
        returns = discounted_returns(scaled, self.dones, cfg.gamma)
        return adv, returns


def _episode_seed(seed: int, worker: int, episode: int) -> int:
    return (seed * 1_000_003 + worker) * 10_007 + episode


def collect_rollout(env_factory: Callable[[], object], net: PolicyNetwork,
                    n_steps: int, seed: int, n_workers: int = 1) -> RolloutBuffer:
    """Run whole episodes until every worker holds >= ceil(n_steps/workers)
    steps; workers step in lockstep so action selection is one batched
    forward per step. Transitions are concatenated by worker id.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    if n_workers < 1:
        raise ValueError("n_workers must be positive")

    target = -(-n_steps // n_workers)
    envs = [env_factory() for _ in range(n_workers)]
    rngs = [np.random.default_rng(np.random.SeedSequence((seed, w, 0xA)))
            for w in range(n_workers)]

    # per-worker accumulation; episodes stay contiguous
    steps: List[List[tuple]] = [[] for _ in range(n_workers)]
    episodes: List[List[Tuple[int, int, int]]] = [[] for _ in range(n_workers)]
    ep_counts = [0] * n_workers
    ep_starts = [0] * n_workers
    obs: List[Optional[np.ndarray]] = [None] * n_workers
    active: List[int] = []

    def start_episode(w: int) -> None:
        ep_seed = _episode_seed(seed, w, ep_counts[w])
        obs[w] = envs[w].reset(ep_seed)
        ep_starts[w] = len(steps[w])
        episodes[w].append((ep_seed, ep_starts[w], -1))
        active.append(w)

    for w in range(n_workers):
        start_episode(w)

    while active:
        batch = np.stack([obs[w] for w in active])
        with no_grad():
            logits, values = net.forward(batch)
            log_probs = logits.log_softmax(axis=-1).data
        vals = values.data

        finished = []
        for i, w in enumerate(active):
            probs = np.exp(log_probs[i])
            probs = probs / probs.sum()
            a = int(rngs[w].choice(len(probs), p=probs))
            nxt, r, done, _ = envs[w].step(a)
            steps[w].append((obs[w], a, float(log_probs[i][a]), float(r),
                             float(vals[i]), bool(done)))
            obs[w] = nxt
            if done:
                ep_seed, start, _ = episodes[w][-1]
                episodes[w][-1] = (ep_seed, start, len(steps[w]))
                ep_counts[w] += 1
                finished.append(w)

        for w in finished:
            active.remove(w)
            if len(steps[w]) < target:
                start_episode(w)

    stacks, actions, logp, rewards, values_arr, dones = [], [], [], [], [], []
    next_values = []
    episode_slices, episode_returns, episode_seeds = [], [], []
    offset = 0
    for w in range(n_workers):
        w_values = [s[4] for s in steps[w]]
        for t, (ob, a, lp, r, v, d) in enumerate(steps[w]):
            stacks.append(ob)
            actions.append(a)
            logp.append(lp)
            rewards.append(r)
            values_arr.append(v)
            dones.append(d)
            next_values.append(0.0 if d else w_values[t + 1])
        for ep_seed, start, end in episodes[w]:
            episode_slices.append((offset + start, offset + end))
            episode_returns.append(float(sum(s[3] for s in steps[w][start:end])))
            episode_seeds.append(ep_seed)
        offset += len(steps[w])

    return RolloutBuffer(np.stack(stacks), np.array(actions, dtype=np.int64),
                         np.array(logp), np.array(rewards), np.array(values_arr),
                         np.array(next_values), np.array(dones, dtype=bool),
                         episode_slices, episode_returns, episode_seeds)


# -- updates -----------------------------------------------------------------------


def _minibatch_loss(net: PolicyNetwork, buf: RolloutBuffer, idx: np.ndarray,
                    adv: np.ndarray, returns: np.ndarray,
                    cfg: TrainConfig) -> Tuple[Tensor, Dict[str, float]]:
    logits, values = net.forward(buf.stacks[idx])
    logp_all = logits.log_softmax(axis=-1)
    logp_new = logp_all[np.arange(len(idx)), buf.actions[idx]]

    rho = ratio(logp_new, buf.log_probs[idx])
    surrogate = clip_loss(rho, adv[idx], cfg.clip_eps)
    policy_obj = surrogate.mean()
    v_loss = value_loss(values, returns[idx])
    objective = policy_obj - v_loss * cfg.value_coef
    if cfg.entropy_coef > 0:
        entropy = -(logp_all.exp() * logp_all).sum(axis=-1).mean()
        objective = objective + entropy * cfg.entropy_coef
        entropy_val = float(entropy.data)
    else:
        with no_grad():
            probs = np.exp(logp_all.data)
            entropy_val = float(-(probs * logp_all.data).sum(axis=-1).mean())

    diag = {
        "policy_obj": float(policy_obj.data),
        "value_loss": float(v_loss.data),
        "entropy": entropy_val,
        "mean_ratio": float(rho.data.mean()),
        "clip_fraction": float(np.mean(np.abs(rho.data - 1.0) > cfg.clip_eps)),
    }
    return -objective, diag


def _diagnostic_dump(net: PolicyNetwork, diag: Dict[str, float]) -> str:
    lines = [f"  {k} = {v}" for k, v in sorted(diag.items())]
    for name, p in net.parameters():
        g = "none" if p.grad is None else f"{np.linalg.norm(p.grad):.3e}"
        lines.append(f"  |{name}| = {np.linalg.norm(p.data):.3e}, |grad| = {g}")
    return "\n".join(lines)


def ppo_update(net: PolicyNetwork, optimizer: Adam, buf: RolloutBuffer,
               cfg: TrainConfig, rng: np.random.Generator) -> Dict[str, float]:
    """Run `epochs` shuffled minibatch passes maximizing the clipped objective."""
    n = len(buf)
    if n == 0:
        raise ValueError("rollout buffer is empty")

    adv, returns = buf.targets(cfg)
    if cfg.normalize_advantage and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    agg: Dict[str, float] = {}
    first: Dict[str, float] = {}
    n_batches = 0
    grad_norm_sum = 0.0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            net.zero_grad()
            loss, diag = _minibatch_loss(net, buf, idx, adv, returns, cfg)
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    "non-finite loss during update; diagnostics:\n"
                    + _diagnostic_dump(net, diag))
            loss.backward()
            grad_norm_sum += clip_grad_norm(net.parameters(), cfg.grad_clip)
            optimizer.step()

            if not first:
                first = dict(diag)
            for k, v in diag.items():
                agg[k] = agg.get(k, 0.0) + v
            n_batches += 1

    out = {k: v / n_batches for k, v in agg.items()}
    out["grad_norm"] = grad_norm_sum / n_batches
    out["first_ratio_mean"] = first["mean_ratio"]
    out["first_clip_fraction"] = first["clip_fraction"]
    out["n_samples"] = float(n)
    return out


def train(env_factory: Callable[[], object], net: PolicyNetwork,
          cfg: TrainConfig, n_updates: int, seed: int,
          log_fn: Optional[Callable[[dict], None]] = None) -> List[dict]:
    """Alternate rollout collection and updates; one history record each."""
    optimizer = Adam(net.parameters(), lr=cfg.lr)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB)))
    history: List[dict] = []
    horizon = n_updates if cfg.schedule_updates is None else cfg.schedule_updates
    for update in range(n_updates):
        frac = update / max(horizon - 1, 1)
        optimizer.lr = cfg.lr * (1.0 + (cfg.lr_final_scale - 1.0) * frac)
        buf = collect_rollout(env_factory, net, cfg.rollout_steps,
                              seed=_episode_seed(seed, 0xC, update),
                              n_workers=cfg.n_workers)
        diag = ppo_update(net, optimizer, buf, cfg, shuffle_rng)
        mean_return = float(np.mean(buf.episode_returns))
        record = {"update": update,
                  "mean_return": mean_return,
                  "att_estimate": -mean_return,
                  "n_episodes": len(buf.episode_returns),
                  "lr": optimizer.lr,
                  **diag}
        history.append(record)
        if log_fn is not None:
            log_fn(record)
    return history


class LearnedPolicy:
    """Vertiport chooser backed by a trained network.

    Greedy by default (argmax logit); pass a generator to sample instead.
    """

    def __init__(self, net: PolicyNetwork, rng: Optional[np.random.Generator] = None):
        self.net = net
        self.rng = rng

    def act(self, stack: np.ndarray) -> int:
        with no_grad():
            logits, _ = self.net.forward(stack[None])
        if self.rng is None:
            return int(np.argmax(logits.data[0]))
        logp = logits.log_softmax(axis=-1).data[0]
        probs = np.exp(logp)
        return int(self.rng.choice(len(probs), p=probs / probs.sum()))
