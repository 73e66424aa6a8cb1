"""DQN and C51-lite agents with pluggable replay sampling.

Samplers:

* ``uniform``: i.i.d. uniform mini-batch.
* ``per`` / ``ger``: mini-batch drawn from stored, outdated priorities
  (absolute TD errors or exact per-sample gradient norms); the selected
  indices get refreshed priorities after each step.
* ``laber-mean`` / ``laber-lazy`` / ``laber-max``: uniform large batch of
  ``m * B`` distinct transitions, down-sampled to ``B`` in proportion to
  up-to-date gradient-norm estimates. The suffix picks the step scaling.
* ``per-laber`` / ``ger-laber``: the large batch is drawn from the PER/GER
  priorities instead of uniformly.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .diagnostics import DiagRecord
from .errors import ConfigError, InsufficientDataError, ZeroSurrogateError
from .flatfile import read_flat, write_flat
from .network import (
    CE,
    HUBER,
    L2,
    ForwardCache,
    Network,
    forward,
    per_sample_gradients,
    per_sample_losses,
    surrogate_norm,
    td_errors,
)
from .replay import (
    GER_ALPHA,
    GER_C,
    PER_ALPHA,
    PER_C,
    PriorityStore,
    ReplayBuffer,
    Transition,
    sample_prioritized,
    sample_uniform,
    sample_uniform_large_batch,
)
from .sampling import sample_indices, total_variation

SAMPLERS = ("uniform", "per", "ger", "laber-mean", "laber-lazy", "laber-max", "per-laber", "ger-laber")
SCALINGS = ("mean", "lazy", "max")
PRIORITY_SOURCES = ("surrogate", "exact_grad_norm")


@dataclass
class AgentConfig:
    gamma: float = 0.9
    lr: float = 0.05
    batch_size: int = 32
    m: int = 4
    target_update_period: int = 100
    sampler: str = "uniform"
    scaling: str = None  # defaults to the laber-* suffix, else "mean"
    priority_source: str = "surrogate"
    loss: str = "l2"
    hidden: tuple = (32,)
    buffer_capacity: int = 10_000
    learning_starts: int = 200
    train_every: int = 1
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int = 10_000
    max_weight_norm: bool = True
    optimizer: str = "sgd"
    rms_decay: float = 0.95
    rms_eps: float = 1e-6
    per_alpha: float = PER_ALPHA
    per_c: float = PER_C
    ger_alpha: float = GER_ALPHA
    ger_c: float = GER_C
    distributional: bool = False
    n_atoms: int = 11
    v_min: float = -10.0
    v_max: float = 10.0
    record_tv: bool = False
    record_variance: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.scaling is None:
            self.scaling = self.sampler.split("-")[1] if self.sampler.startswith("laber-") else "mean"
        self.validate()

    def validate(self):
        def bad(key, msg):
            raise ConfigError(f"{key}: {msg}", key=key)

        if self.sampler not in SAMPLERS:
            bad("sampler", f"unknown sampler {self.sampler!r}; choose from {', '.join(SAMPLERS)}")
        if self.scaling not in SCALINGS:
            bad("scaling", f"unknown scaling {self.scaling!r}")
        if self.priority_source not in PRIORITY_SOURCES:
            bad("priority_source", f"unknown priority source {self.priority_source!r}")
        if self.loss not in ("l2", "huber"):
            bad("loss", f"unknown loss {self.loss!r}; choose l2 or huber")
        if self.optimizer not in ("sgd", "rmsprop"):
            bad("optimizer", f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.gamma < 1.0:
            bad("gamma", f"must be in [0, 1), got {self.gamma}")
        if not self.lr >= 0:
            bad("lr", f"must be >= 0, got {self.lr}")
        for key in ("batch_size", "m", "target_update_period", "buffer_capacity", "train_every", "n_atoms"):
            if getattr(self, key) < 1:
                bad(key, f"must be >= 1, got {getattr(self, key)}")
        if self.learning_starts < 0:
            bad("learning_starts", "must be >= 0")
        if self.n_atoms < 2:
            bad("n_atoms", "need at least 2 atoms")
        if self.v_max <= self.v_min:
            bad("v_max", "must exceed v_min")
        if self.uses_large_batch and self.m * self.batch_size > self.buffer_capacity:
            bad("m", f"large batch m*B={self.m * self.batch_size} exceeds buffer capacity")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            bad("eps_start", "need 0 <= eps_end <= eps_start <= 1")

    @property
    def uses_large_batch(self):
        return "laber" in self.sampler

    @property
    def store_kind(self):
        if self.sampler.startswith("per"):
            return "per"
        if self.sampler.startswith("ger"):
            return "ger"
        return None

    @property
    def min_buffer(self):
        need = self.m * self.batch_size if self.uses_large_batch else self.batch_size
        return max(need, self.learning_starts)

    @property
    def support(self):
        return np.linspace(self.v_min, self.v_max, self.n_atoms)

    def loss_spec(self):
        if self.distributional:
            return CE
        return HUBER if self.loss == "huber" else L2


# -- targets -------------------------------------------------------------------


def dqn_target(transition, target_net, gamma):
    """``y = r`` at terminal transitions, else ``r + gamma * max_a' Q_target(s', a')``."""
    if transition.done:
        return float(transition.reward)
    q_next = target_net(transition.next_state)[0]
    return float(transition.reward + gamma * q_next.max())


def dqn_targets(rewards, next_states, dones, target_net, gamma):
    q_next = target_net(next_states).max(axis=1)
    return rewards + gamma * np.where(dones, 0.0, q_next)


def action_values(net, states, support):
    """Expected return per action from a categorical head, shape (batch, n_actions)."""
    probs = net(states)
    k = support.size
    return probs.reshape(probs.shape[0], -1, k) @ support


def project_distribution(next_probs, rewards, dones, gamma, support):
    """Project ``r + gamma * z`` onto the fixed support, one histogram per row."""
    v_min, v_max = support[0], support[-1]
    dz = support[1] - support[0]
    n, k = next_probs.shape
    tz = rewards[:, None] + gamma * np.where(dones, 0.0, 1.0)[:, None] * support[None, :]
    tz = np.clip(tz, v_min, v_max)
    b = (tz - v_min) / dz
    lo = np.floor(b).astype(np.int64)
    hi = np.ceil(b).astype(np.int64)
    # float error can push b a hair past an integer
    lo = np.clip(lo, 0, k - 1)
    hi = np.clip(hi, 0, k - 1)
    out = np.zeros((n, k))
    rows = np.repeat(np.arange(n), k)
    same = lo == hi
    w_lo = np.where(same, 1.0, hi - b) * next_probs
    w_hi = np.where(same, 0.0, b - lo) * next_probs
    np.add.at(out, (rows, lo.ravel()), w_lo.ravel())
    np.add.at(out, (rows, hi.ravel()), w_hi.ravel())
    return out


def c51_targets(rewards, next_states, dones, target_net, gamma, support):
    k = support.size
    probs = target_net(next_states).reshape(len(rewards), -1, k)
    greedy = np.argmax(probs @ support, axis=1)
    next_probs = probs[np.arange(len(rewards)), greedy]
    return project_distribution(next_probs, rewards, dones, gamma, support)


def c51_target(transition, target_net, gamma, atom_support):
    """Projected categorical Bellman target for a single transition."""
    support = np.asarray(atom_support, dtype=np.float64)
    return c51_targets(
        np.array([transition.reward]),
        np.asarray(transition.next_state, dtype=np.float64)[None, :],
        np.array([transition.done]),
        target_net,
        gamma,
        support,
    )[0]


# -- descent directions --------------------------------------------------------


def descent_direction(per_sample_grads, g_selected, g_large_batch, scaling, batch_size, m):
    """Down-sampled LaBER update direction.

    ``mean``: ``(sum_LB G / mB) * (1/B) sum_i grad_i / G_i``;
    ``lazy``: drops the leading factor;
    ``max``:  replaces it with ``min_i G_i`` over the mini-batch.
    """
    g_sel = np.asarray(g_selected, dtype=np.float64)
    if np.any(g_sel <= 0):
        raise ZeroSurrogateError("selected surrogate values must be > 0")
    grads = np.asarray(per_sample_grads, dtype=np.float64)
    base = (grads / g_sel[:, None]).sum(axis=0) / batch_size
    if scaling == "mean":
        return (np.sum(g_large_batch) / (m * batch_size)) * base
    if scaling == "lazy":
        return base
    if scaling == "max":
        return g_sel.min() * base
    raise ValueError(f"unknown scaling {scaling!r}")


def scale_factor(g_selected, g_large_batch, scaling, batch_size, m):
    """The scalar multiplying ``(1/B) sum grad_i / G_i`` for each scaling."""
    if scaling == "mean":
        return float(np.sum(g_large_batch) / (m * batch_size))
    if scaling == "lazy":
        return 1.0
    return float(np.min(g_selected))


# -- agent ---------------------------------------------------------------------


@dataclass
class StepResult:
    """What one sampler produced before the parameters move."""

    direction: np.ndarray
    indices: np.ndarray
    loss: float
    variance_term: float
    tv_surrogate: float = None
    tv_uniform: float = None
    extra: dict = field(default_factory=dict)


def _take(cache, idx):
    return ForwardCache(
        [a[idx] for a in cache.inputs],
        [z[idx] for z in cache.pre],
        cache.output[idx],
        cache.activations,
        cache.group_size,
    )


class Agent:
    def __init__(self, env, config, seed=0):
        self.env = env
        self.config = config
        self.seed = int(seed)
        # independent streams for initialisation, environment, sampling, exploration
        init_ss, env_ss, sample_ss, explore_ss = np.random.SeedSequence(self.seed).spawn(4)
        self.env.rng = np.random.default_rng(env_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.explore_rng = np.random.default_rng(explore_ss)
        n_actions = env.n_actions
        sizes = [env.obs_dim, *config.hidden]
        acts = ["relu"] * len(config.hidden)
        if config.distributional:
            sizes.append(n_actions * config.n_atoms)
            acts.append("softmax")
            group = config.n_atoms
        else:
            sizes.append(n_actions)
            acts.append("identity")
            group = 1
        self.net = Network.init(sizes, acts, np.random.default_rng(init_ss), group_size=group)
        self.target = self.net.copy()
        self.loss = config.loss_spec()
        self.buffer = ReplayBuffer(config.buffer_capacity, env.obs_dim, n_actions)
        self.store = None
        if config.store_kind == "per":
            self.store = self.buffer.attach(PriorityStore(config.buffer_capacity, config.per_alpha, config.per_c))
        elif config.store_kind == "ger":
            self.store = self.buffer.attach(PriorityStore(config.buffer_capacity, config.ger_alpha, config.ger_c))
        self.rms = np.zeros(self.net.n_params)
        self.env_steps = 0
        self.grad_steps = 0
        self.episode_return = 0.0
        self.obs = self.env.reset()

    # -- evaluation helpers ------------------------------------------------

    def q_values(self, states):
        if self.config.distributional:
            return action_values(self.net, states, self.config.support)
        return self.net(states)

    def greedy_policy(self):
        states = np.eye(self.env.n_states)
        return np.argmax(self.q_values(states), axis=1)

    def epsilon(self):
        c = self.config
        frac = min(1.0, self.env_steps / c.eps_decay_steps)
        return c.eps_start + frac * (c.eps_end - c.eps_start)

    def act(self, obs):
        if self.explore_rng.random() < self.epsilon():
            return int(self.explore_rng.integers(self.env.n_actions))
        return int(np.argmax(self.q_values(obs[None, :])[0]))

    def targets(self, indices):
        _, _, rewards, next_states, dones = self.buffer.arrays(indices)
        if self.config.distributional:
            return c51_targets(rewards, next_states, dones, self.target, self.config.gamma, self.config.support)
        return dqn_targets(rewards, next_states, dones, self.target, self.config.gamma)

    def evaluate(self, indices):
        """Forward cache, targets and actions for the given buffer indices."""
        states, actions, _, _, _ = self.buffer.arrays(indices)
        return forward(self.net, states), self.targets(indices), actions

    def _losses(self, cache, targets, actions):
        return per_sample_losses(cache, targets, self.loss, actions)

    def _td_priority(self, cache, targets, actions):
        """PER's raw priority: |delta| for scalar heads, the per-atom error norm for categorical heads."""
        if self.config.distributional:
            return surrogate_norm(cache, targets, self.loss, actions)
        return np.abs(td_errors(cache, targets, actions))

    # -- sampler-specific directions ----------------------------------------

    def direction_uniform(self):
        c = self.config
        if self.buffer.size < 1:
            raise InsufficientDataError("buffer is empty")
        batch = sample_uniform(self.buffer, c.batch_size, self.sample_rng)
        cache, y, a = self.evaluate(batch.indices)
        grads = per_sample_gradients(self.net, cache, y, self.loss, a)
        return StepResult(
            grads.mean(axis=0),
            batch.indices,
            float(self._losses(cache, y, a).mean()),
            float(np.mean(np.sum(grads**2, axis=1))),
        )

    def direction_prioritized(self, update_store=True):
        c = self.config
        batch = sample_prioritized(self.buffer, self.store, c.batch_size, self.sample_rng)
        cache, y, a = self.evaluate(batch.indices)
        grads = per_sample_gradients(self.net, cache, y, self.loss, a)
        w = batch.weights
        contrib = w[:, None] * grads
        variance = float(np.mean(np.sum(contrib**2, axis=1)))
        if c.max_weight_norm:
            w = w / w.max()
        direction = (w[:, None] * grads).mean(axis=0)
        if c.store_kind == "per":
            fresh = self._td_priority(cache, y, a)
        else:
            fresh = np.linalg.norm(grads, axis=1)
        if update_store:
            self.store.update(batch.indices, fresh)
        return StepResult(direction, batch.indices, float(self._losses(cache, y, a).mean()), variance,
                          extra={"priorities": fresh, "probs": batch.probs})

    def _large_batch_norms(self, cache, y, a):
        if self.config.priority_source == "exact_grad_norm" or self.config.record_tv:
            grads = per_sample_gradients(self.net, cache, y, self.loss, a)
            exact = np.linalg.norm(grads, axis=1)
        else:
            grads, exact = None, None
        if self.config.priority_source == "exact_grad_norm":
            g_hat = exact
        else:
            g_hat = surrogate_norm(cache, y, self.loss, a)
        return g_hat, exact, grads

    def direction_laber(self, update_store=True):
        """One LaBER direction; the large batch is uniform or priority-driven per the sampler."""
        c = self.config
        k = c.m * c.batch_size
        if c.store_kind is None:
            lb = sample_uniform_large_batch(self.buffer, c.m, c.batch_size, self.sample_rng)
            stage_w = np.ones(k)
        else:
            if self.buffer.size < k:
                raise InsufficientDataError(f"need {k} transitions for the large batch, have {self.buffer.size}")
            lb = sample_prioritized(self.buffer, self.store, k, self.sample_rng)
            # 1 / (N q_i): makes each large-batch item an unbiased stand-in for the buffer mean
            stage_w = lb.weights
        cache, y, a = self.evaluate(lb.indices)
        g_hat, exact, lb_grads = self._large_batch_norms(cache, y, a)
        tv_s = tv_u = None
        if c.record_tv and exact.sum() > 0 and g_hat.sum() > 0:
            p_star = exact / exact.sum()
            tv_s = min(total_variation(g_hat / g_hat.sum(), p_star), 2.0)
            tv_u = min(total_variation(np.full(k, 1.0 / k), p_star), 2.0)
        total = g_hat.sum()
        if total <= 0:
            # every gradient in the large batch is exactly zero, so is the update
            sel = np.arange(c.batch_size)
            direction = np.zeros(self.net.n_params)
            losses = self._losses(_take(cache, sel), y[sel], a[sel])
            return StepResult(direction, lb.indices[sel], float(losses.mean()), 0.0, tv_s, tv_u)
        sel = sample_indices(g_hat / total, c.batch_size, self.sample_rng)
        sub = _take(cache, sel)
        grads = lb_grads[sel] if lb_grads is not None else per_sample_gradients(self.net, sub, y[sel], self.loss, a[sel])
        weighted = grads * stage_w[sel][:, None]
        direction = descent_direction(weighted, g_hat[sel], g_hat, c.scaling, c.batch_size, c.m)
        factor = scale_factor(g_hat[sel], g_hat, c.scaling, c.batch_size, c.m)
        contrib = factor * weighted / g_hat[sel][:, None]
        variance = float(np.mean(np.sum(contrib**2, axis=1)))
        losses = self._losses(sub, y[sel], a[sel])
        chosen = lb.indices[sel]
        if c.store_kind is not None and update_store:
            if c.store_kind == "per":
                fresh = self._td_priority(sub, y[sel], a[sel])
            else:
                fresh = np.linalg.norm(grads, axis=1)
            self.store.update(chosen, fresh)
        return StepResult(direction, chosen, float(losses.mean()), variance, tv_s, tv_u,
                          extra={"large_batch": lb.indices, "surrogates": g_hat, "selected": sel})

    def direction(self, update_store=True):
        s = self.config.sampler
        if s == "uniform":
            return self.direction_uniform()
        if s in ("per", "ger"):
            return self.direction_prioritized(update_store)
        return self.direction_laber(update_store)

    # -- updates -------------------------------------------------------------

    def apply(self, direction):
        c = self.config
        if c.optimizer == "rmsprop":
            self.rms = c.rms_decay * self.rms + (1 - c.rms_decay) * direction**2
            direction = direction / (np.sqrt(self.rms) + c.rms_eps)
        self.net.theta -= c.lr * direction
        self.grad_steps += 1
        if self.grad_steps % c.target_update_period == 0:
            self.target.load_theta(self.net.theta)

    def train_step(self):
        return self.finish(self.direction())

    def finish(self, result):
        self.apply(result.direction)
        return DiagRecord(
            step=self.env_steps,
            loss=result.loss,
            sampler=self.config.sampler,
            variance_term=result.variance_term if self.config.record_variance else None,
            tv_surrogate=result.tv_surrogate,
            tv_uniform=result.tv_uniform,
        )

    def step(self):
        """One environment interaction, followed by a gradient step when due."""
        a = self.act(self.obs)
        obs2, r, done, truncated = self.env.step(a)
        self.buffer.push(Transition(self.obs, a, r, obs2, done))
        self.episode_return += r
        self.env_steps += 1
        c = self.config
        record = None
        if self.buffer.size >= c.min_buffer and self.env_steps % c.train_every == 0:
            record = self.train_step()
        if record is None:
            record = DiagRecord(step=self.env_steps, sampler=c.sampler)
        else:
            record.step = self.env_steps
        if done or truncated:
            record.episode_return = self.episode_return
            self.episode_return = 0.0
            self.obs = self.env.reset()
        else:
            self.obs = obs2
        return record

    def run(self, n_steps, callback=None):
        records = []
        for _ in range(n_steps):
            rec = self.step()
            records.append(rec)
            if callback is not None and callback(self, rec):
                break
        return records

    # -- checkpoints -----------------------------------------------------------

    def save(self, path):
        meta = {
            "kind": "checkpoint",
            "seed": self.seed,
            "config": _config_to_json(self.config),
            "env_steps": self.env_steps,
            "grad_steps": self.grad_steps,
            "episode_return": self.episode_return,
            "env": self.env.get_state(),
            "sample_rng": self.sample_rng.bit_generator.state,
            "explore_rng": self.explore_rng.bit_generator.state,
            "buffer": {"size": self.buffer.size, "cursor": self.buffer.cursor},
        }
        arrays = {
            "theta": self.net.theta,
            "target_theta": self.target.theta,
            "rms": self.rms,
            "obs": self.obs,
            "states": self.buffer.states,
            "actions": self.buffer.actions,
            "rewards": self.buffer.rewards,
            "next_states": self.buffer.next_states,
            "dones": self.buffer.dones.astype(np.uint8),
        }
        if self.store is not None:
            arrays.update(self.store.state_arrays("store"))
        write_flat(path, meta, arrays)

    def restore(self, path):
        meta, arrays = read_flat(path)
        if meta.get("kind") != "checkpoint":
            raise ValueError(f"{path} is not a checkpoint")
        self.net.load_theta(arrays["theta"])
        self.target.load_theta(arrays["target_theta"])
        self.rms[...] = arrays["rms"]
        self.obs = arrays["obs"].copy()
        buf = self.buffer
        buf.states[...] = arrays["states"]
        buf.actions[...] = arrays["actions"]
        buf.rewards[...] = arrays["rewards"]
        buf.next_states[...] = arrays["next_states"]
        buf.dones[...] = arrays["dones"].astype(bool)
        buf.size = meta["buffer"]["size"]
        buf.cursor = meta["buffer"]["cursor"]
        if self.store is not None:
            self.store.restore(arrays, "store")
        self.env_steps = meta["env_steps"]
        self.grad_steps = meta["grad_steps"]
        self.episode_return = meta["episode_return"]
        self.env.set_state(meta["env"])
        self.sample_rng.bit_generator.state = meta["sample_rng"]
        self.explore_rng.bit_generator.state = meta["explore_rng"]

    @classmethod
    def from_checkpoint(cls, path, env):
        meta, _ = read_flat(path)
        agent = cls(env, _config_from_json(meta["config"]), meta["seed"])
        agent.restore(path)
        return agent


def train_step_uniform(agent):
    return agent.finish(agent.direction_uniform())


def train_step_prioritized(agent, store=None):
    """PER/GER step: sample from stored priorities, refresh the selected ones, SGD update."""
    if store is not None:
        agent.store = store
    return agent.finish(agent.direction_prioritized())


def train_step_laber(agent):
    return agent.finish(agent.direction_laber())


def train_step_combined(agent, store=None):
    """PER-LaBER / GER-LaBER step: priority-driven large batch, surrogate down-sampling."""
    if store is not None:
        agent.store = store
    return agent.finish(agent.direction_laber())


def _config_to_json(config):
    d = asdict(config)
    d["hidden"] = list(d["hidden"])
    return d


def _config_from_json(d):
    return AgentConfig(**d)


def config_json(config):
    return json.dumps(_config_to_json(config), sort_keys=True)


def greedy_matches(agent, oracle_policy, env):
    """True when the agent's greedy action equals the oracle's at every non-terminal state."""
    policy = agent.greedy_policy()
    live = [s for s in range(env.n_states) if not env.is_terminal(s)]
    return bool(np.all(policy[live] == oracle_policy[live]))


def learning_curve_auc(values):
    """Trapezoidal area under a curve sampled at evenly spaced checkpoints, normalized by length."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float(values.sum())
    return float(np.trapezoid(values) / (values.size - 1))


__all__ = [
    "AgentConfig",
    "Agent",
    "SAMPLERS",
    "dqn_target",
    "c51_target",
    "descent_direction",
    "scale_factor",
    "project_distribution",
    "train_step_uniform",
    "train_step_prioritized",
    "train_step_laber",
    "train_step_combined",
]
