"""Small enumerable MDPs with exactly computable optimal Q-functions.

Observations are one-hot state encodings so an MLP can represent ``Q*``
exactly. Every environment exposes its full transition model through
``model(s, a)`` for value iteration.
"""

import csv

import numpy as np

from .errors import GoalOnTrapError, NotEnumerableError

EPISODE_CAP = 200
MAX_ENUMERABLE = 10_000


class TabularEnv:
    """Finite MDP driven by ``model(s, a) -> [(prob, next_state, reward, done), ...]``."""

    n_states: int
    n_actions: int
    start_state: int = 0

    def __init__(self, seed=None, episode_cap=EPISODE_CAP):
        self.rng = np.random.default_rng(seed)
        self.episode_cap = int(episode_cap)
        self.state = self.start_state
        self.t = 0
        self.done = False

    @property
    def obs_dim(self):
        return self.n_states

    def encode(self, state):
        obs = np.zeros(self.n_states)
        obs[state] = 1.0
        return obs

    def is_terminal(self, state):
        return False

    def model(self, state, action):
        raise NotImplementedError

    def reward_bounds(self):
        rewards = [r for s in range(self.n_states) for a in range(self.n_actions) for _, _, r, _ in self.model(s, a)]
        return min(rewards), max(rewards)

    def reset(self):
        self.state = self.start_state
        self.t = 0
        self.done = False
        return self.encode(self.state)

    def step(self, action):
        """Returns ``(obs, reward, done, truncated)``.

        ``done`` marks a terminal state; ``truncated`` marks the episode cap.
        Stepping after a terminal state yields no reward.
        """
        if not 0 <= action < self.n_actions:
            raise ValueError(f"action {action} outside [0, {self.n_actions})")
        if self.done:
            return self.encode(self.state), 0.0, True, False
        outcomes = self.model(self.state, action)
        if len(outcomes) == 1:
            _, s2, r, done = outcomes[0]
        else:
            probs = np.array([o[0] for o in outcomes])
            k = self.rng.choice(len(outcomes), p=probs)
            _, s2, r, done = outcomes[k]
        self.state = s2
        self.done = done
        self.t += 1
        truncated = not done and self.t >= self.episode_cap
        return self.encode(s2), float(r), bool(done), truncated

    def get_state(self):
        return {"state": int(self.state), "t": self.t, "done": self.done, "rng": self.rng.bit_generator.state}

    def set_state(self, snap):
        self.state = snap["state"]
        self.t = snap["t"]
        self.done = snap["done"]
        self.rng.bit_generator.state = snap["rng"]


class ChainMDP(TabularEnv):
    """Linear chain; actions 0 = left, 1 = right. The rightmost state is terminal.

    Entering the terminus pays ``goal_reward``; every other step pays
    ``-step_penalty``. With probability ``slip_prob`` the move is reversed.
    Moving left from state 0 stays put.
    """

    n_actions = 2

    def __init__(self, n_states, slip_prob=0.0, step_penalty=0.01, goal_reward=1.0, seed=None,
                 episode_cap=EPISODE_CAP):
        if n_states < 3:
            raise ValueError(f"a chain needs at least 3 states, got {n_states}")
        if not 0.0 <= slip_prob <= 0.5:
            raise ValueError(f"slip_prob must be in [0, 0.5], got {slip_prob}")
        self.n_states = int(n_states)
        self.slip_prob = float(slip_prob)
        self.step_penalty = float(step_penalty)
        self.goal_reward = float(goal_reward)
        super().__init__(seed, episode_cap)

    def is_terminal(self, state):
        return state == self.n_states - 1

    def _move(self, state, direction):
        s2 = min(max(state + direction, 0), self.n_states - 1)
        done = self.is_terminal(s2)
        return s2, (self.goal_reward if done else -self.step_penalty), done

    def model(self, state, action):
        if self.is_terminal(state):
            return [(1.0, state, 0.0, True)]
        direction = 1 if action == 1 else -1
        out = [(1.0 - self.slip_prob, *self._move(state, direction))]
        if self.slip_prob > 0:
            out.append((self.slip_prob, *self._move(state, -direction)))
        return out


def chain_mdp(n_states, slip_prob=0.0, **kwargs):
    return ChainMDP(n_states, slip_prob, **kwargs)


class GridWorld(TabularEnv):
    """4-action gridworld: 0 up, 1 right, 2 down, 3 left.

    Each move costs -1; entering the goal pays +10 and entering a trap -10,
    both terminal. Moves into the border leave the agent in place. Cells are
    ``(x, y)`` with state index ``y * width + x``.
    """

    n_actions = 4
    MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))
    STEP_REWARD, GOAL_REWARD, TRAP_REWARD = -1.0, 10.0, -10.0

    def __init__(self, width, height, goal, traps=(), start=(0, 0), seed=None, episode_cap=EPISODE_CAP):
        self.width, self.height = int(width), int(height)
        self.goal = tuple(goal)
        self.traps = {tuple(t) for t in traps}
        self.start = tuple(start)
        for name, cell in [("goal", self.goal), ("start", self.start), *(("trap", t) for t in self.traps)]:
            if not (0 <= cell[0] < self.width and 0 <= cell[1] < self.height):
                raise ValueError(f"{name} {cell} lies outside the {self.width}x{self.height} grid")
        if self.goal in self.traps:
            raise GoalOnTrapError(f"goal {self.goal} coincides with a trap")
        if self.start == self.goal or self.start in self.traps:
            raise ValueError("start cell must not be the goal or a trap")
        self.n_states = self.width * self.height
        self.start_state = self.index(self.start)
        super().__init__(seed, episode_cap)

    def index(self, cell):
        return cell[1] * self.width + cell[0]

    def cell(self, state):
        return state % self.width, state // self.width

    def is_terminal(self, state):
        c = self.cell(state)
        return c == self.goal or c in self.traps

    def model(self, state, action):
        if self.is_terminal(state):
            return [(1.0, state, 0.0, True)]
        x, y = self.cell(state)
        dx, dy = self.MOVES[action]
        nx = min(max(x + dx, 0), self.width - 1)
        ny = min(max(y + dy, 0), self.height - 1)
        s2 = self.index((nx, ny))
        if (nx, ny) == self.goal:
            return [(1.0, s2, self.GOAL_REWARD, True)]
        if (nx, ny) in self.traps:
            return [(1.0, s2, self.TRAP_REWARD, True)]
        return [(1.0, s2, self.STEP_REWARD, False)]


def gridworld(width, height, goal, traps=(), **kwargs):
    return GridWorld(width, height, goal, traps, **kwargs)


def value_iteration(env, gamma, tol=1e-10, max_iter=100_000, return_history=False):
    """Optimal Q table by repeated Bellman optimality backups.

    Stops once ``||Q_{k+1} - Q_k||_inf < tol``. Terminal states keep Q = 0.
    """
    n_s, n_a = env.n_states, env.n_actions
    if n_s * n_a > MAX_ENUMERABLE:
        raise NotEnumerableError(f"{n_s * n_a} state-action pairs exceed {MAX_ENUMERABLE}")
    # dense model: P[s, a, s'] and expected reward, with terminal flags folded in
    P = np.zeros((n_s, n_a, n_s))
    R = np.zeros((n_s, n_a))
    for s in range(n_s):
        for a in range(n_a):
            if env.is_terminal(s):
                continue
            for prob, s2, r, done in env.model(s, a):
                R[s, a] += prob * r
                if not done:
                    P[s, a, s2] += prob
    Q = np.zeros((n_s, n_a))
    history = [Q.copy()]
    for _ in range(max_iter):
        Q_new = R + gamma * P @ Q.max(axis=1)
        diff = np.max(np.abs(Q_new - Q))
        Q = Q_new
        if return_history:
            history.append(Q.copy())
        if diff < tol:
            break
    return (Q, history) if return_history else Q


def bellman_residual(env, Q, gamma):
    worst = 0.0
    for s in range(env.n_states):
        if env.is_terminal(s):
            continue
        for a in range(env.n_actions):
            backup = sum(p * (r + (0.0 if d else gamma * Q[s2].max())) for p, s2, r, d in env.model(s, a))
            worst = max(worst, abs(backup - Q[s, a]))
    return worst


def greedy_policy(Q, env=None):
    """Greedy action per state; terminal states get -1 when ``env`` is given."""
    policy = np.argmax(Q, axis=1)
    if env is not None:
        for s in range(env.n_states):
            if env.is_terminal(s):
                policy[s] = -1
    return policy


def export_q_table(Q, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state"] + [f"a{a}" for a in range(Q.shape[1])])
        for s, row in enumerate(Q):
            writer.writerow([s] + [repr(float(v)) for v in row])


def read_q_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]])
