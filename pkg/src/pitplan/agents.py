"""Adaptive controllers steering optimizer parameters during a run.

Three roles (parameter / scheduling / resource) implemented as
policy-gradient contextual bandits over small discrete action sets: a
feedforward preference map produces softmax action probabilities, and
observed rewards (NPV improvement, constraint satisfaction, efficiency,
risk penalty) move probability mass toward above-baseline actions.
Disabling the agents reproduces fixed-parameter runs bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgs
from .nn import Mlp
from .rng import substream

ROLE_PARAMETER = "Parameter"
ROLE_SCHEDULING = "Scheduling"
ROLE_RESOURCE = "Resource"

PARAMETER_ACTIONS: list = [
    (alpha, frac) for alpha in (0.90, 0.95, 0.99) for frac in (0.1, 0.2, 0.3)
]
SCHEDULING_ACTIONS: list = ["ga-heavy", "lns-heavy", "balanced"]
RESOURCE_ACTIONS: list = [0.95, 1.0, 1.05]

STATE_DIM = 6

_ROLE_DEFAULTS = {
    # role: (learning_rate, discount, reward weights, hidden sizes, actions)
    ROLE_PARAMETER: (0.0005, 0.95, (0.4, 0.3, 0.2, 0.1), (64, 32), PARAMETER_ACTIONS),
    ROLE_SCHEDULING: (0.001, 0.99, (0.5, 0.3, 0.1, 0.1), (128, 64), SCHEDULING_ACTIONS),
    ROLE_RESOURCE: (0.0008, 0.90, (0.3, 0.4, 0.2, 0.1), (64, 32), RESOURCE_ACTIONS),
}


@dataclass
class AgentSpec:
    role: str
    learning_rate: float
    discount: float
    reward_weights: tuple[float, float, float, float]
    hidden: tuple[int, ...]
    actions: list

    def validate(self):
        if self.learning_rate < 0:
            raise InvalidArgs("learning rate must be >= 0")
        if abs(sum(self.reward_weights) - 1.0) > 1e-9:
            raise InvalidArgs("reward weights must sum to 1")


def make_spec(role: str, learning_rate: float | None = None) -> AgentSpec:
    if role not in _ROLE_DEFAULTS:
        raise InvalidArgs(f"unknown agent role {role!r}")
    lr, disc, weights, hidden, actions = _ROLE_DEFAULTS[role]
    spec = AgentSpec(
        role=role,
        learning_rate=lr if learning_rate is None else learning_rate,
        discount=disc,
        reward_weights=weights,
        hidden=hidden,
        actions=list(actions),
    )
    spec.validate()
    return spec


@dataclass
class RlState:
    features: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.shape != (STATE_DIM,):
            raise InvalidArgs(f"state must have {STATE_DIM} features")
        if not np.all(np.isfinite(self.features)):
            raise InvalidArgs("state features must be finite")


def make_state(
    improvement_rate: float,
    violation: float,
    iters_since_improvement: int,
    eps: float,
    eps0: float,
    temperature: float,
    t0: float,
    pool_fill: float = 0.0,
) -> RlState:
    """Normalize raw optimizer signals into [0, 1] features."""
    return RlState(
        np.clip(
            [
                improvement_rate,
                violation / (1.0 + violation),
                iters_since_improvement / (10.0 + iters_since_improvement),
                eps / eps0 if eps0 > 0 else 0.0,
                temperature / t0 if t0 > 0 else 0.0,
                pool_fill,
            ],
            0.0,
            1.0,
        )
    )


@dataclass
class Agent:
    spec: AgentSpec
    net: Mlp
    baseline: float = 0.0
    n_rewards: int = 0
    pending: tuple | None = field(default=None)
    reward_history: list = field(default_factory=list)

    @property
    def n_actions(self) -> int:
        return len(self.spec.actions)


def make_agent(role: str, seed: int = 0, learning_rate: float | None = None) -> Agent:
    spec = make_spec(role, learning_rate)
    net = Mlp.init([STATE_DIM, *spec.hidden, len(spec.actions)], substream(seed, "agent", role))
    return Agent(spec=spec, net=net)


def default_agents(seed: int = 0) -> dict[str, Agent]:
    return {
        "parameter": make_agent(ROLE_PARAMETER, seed),
        "scheduling": make_agent(ROLE_SCHEDULING, seed),
        "resource": make_agent(ROLE_RESOURCE, seed),
    }


def reward(delta_npv: float, constraint_sat: float, efficiency: float, risk: float, weights) -> float:
    """R = a*dNPV + b*constraints + c*efficiency - d*risk."""
    vals = np.array([delta_npv, constraint_sat, efficiency, risk], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InvalidArgs("reward inputs must be finite")
    a, b, c, d = weights
    return float(a * delta_npv + b * constraint_sat + c * efficiency - d * risk)


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def action_probabilities(agent: Agent, state: RlState) -> np.ndarray:
    logits = agent.net.forward(state.features[None, :])[0]
    return _softmax(logits)


def _policy_update(agent: Agent, state_vec: np.ndarray, action_idx: int, observed: float) -> None:
    advantage = observed - agent.baseline
    agent.n_rewards += 1
    agent.baseline += (observed - agent.baseline) / agent.n_rewards
    agent.reward_history.append(float(observed))
    if agent.spec.learning_rate == 0.0 or advantage == 0.0:
        return
    cache: list = []
    logits = agent.net.forward(state_vec[None, :], cache)[0]
    probs = _softmax(logits)
    onehot = np.zeros_like(probs)
    onehot[action_idx] = 1.0
    d_logits = (advantage * (onehot - probs))[None, :]
    _, grads = agent.net.backward(cache, d_logits)
    lr = agent.spec.learning_rate
    for layer, (gW, gb) in zip(agent.net.layers, grads):
        layer.W += lr * gW
        layer.b += lr * gb


def agent_step(agent: Agent, state: RlState, observed_reward: float | None, seed) -> tuple:
    """Apply the pending policy-gradient update (if a reward arrived), then
    sample the next action from the softmax policy. Deterministic in seed."""
    if observed_reward is not None and agent.pending is not None:
        state_vec, action_idx = agent.pending
        _policy_update(agent, state_vec, action_idx, float(observed_reward))
        agent.pending = None
    probs = action_probabilities(agent, state)
    if isinstance(seed, tuple):
        rng = substream(seed[0], *seed[1:])
    else:
        rng = substream(seed, "action")
    idx = int(rng.choice(len(probs), p=probs))
    agent.pending = (state.features.copy(), idx)
    return agent.spec.actions[idx], agent


def observe_reward(
    agent: Agent, delta_npv: float, constraint_sat: float, efficiency: float, risk: float
) -> float:
    """Score the pending action with the role's reward weights and update."""
    r = reward(delta_npv, constraint_sat, efficiency, risk, agent.spec.reward_weights)
    if agent.pending is not None:
        state_vec, action_idx = agent.pending
        _policy_update(agent, state_vec, action_idx, r)
        agent.pending = None
    return r


def agent_to_dict(agent: Agent) -> dict:
    return {
        "role": agent.spec.role,
        "learning_rate": agent.spec.learning_rate,
        "params": [p.tolist() for p in agent.net.params()],
        "baseline": agent.baseline,
        "n_rewards": agent.n_rewards,
        "pending": None
        if agent.pending is None
        else {"state": agent.pending[0].tolist(), "action": agent.pending[1]},
        "reward_history": list(agent.reward_history),
    }


def agent_restore(agent: Agent, doc: dict) -> None:
    for p, saved in zip(agent.net.params(), doc["params"]):
        p[...] = np.array(saved, dtype=float)
    agent.baseline = doc["baseline"]
    agent.n_rewards = doc["n_rewards"]
    pending = doc.get("pending")
    agent.pending = None if pending is None else (np.array(pending["state"]), pending["action"])
    agent.reward_history = list(doc.get("reward_history", []))


def write_reward_trace_csv(agent: Agent, path, smoothing: float = 0.1) -> None:
    """(episode, smoothed reward, deterministic-eval reward) rows from the
    agent's observed-reward history; smoothed = exponential moving average."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "smoothed_reward", "eval_reward"])
        ema = None
        for episode, value in enumerate(agent.reward_history):
            ema = value if ema is None else (1 - smoothing) * ema + smoothing * value
            writer.writerow([episode, repr(float(ema)), repr(float(value))])
