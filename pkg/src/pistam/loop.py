"""The policy-improvement loop: roll-in, gated UCT, aggregation, refitting.

Seed discipline: every random choice draws from ``derive_seed(master_seed,
STREAM, ...)``, where STREAM names the purpose (spawn draws, search
epsilon-draws, EM seeding, evaluation episodes, ...). Affordance and
baseline runs with the same master seed therefore see the same spawn
states and evaluation episodes.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import mdp
from .env import EnvConfig, EnvState, HandoverEnv
from .mdp import Action, LabeledDataset, dataset_aggregate
from .policy import PolicyModel, UniformPolicy, policy_act, random_policy_dataset, train_policy
from .stam import DEFAULT_PROJECTION, AffordanceSignature, derive_seed, fit_signatures
from .uct import ExpansionStats, SearchConfig, uct_search

log = logging.getLogger(__name__)

# Stream identifiers for derive_seed.
D0_STREAM = 1
RESET_STREAM = 2
SEARCH_STREAM = 3
POLICY_STREAM = 4
SIGNATURE_STREAM = 5
EVAL_STREAM = 6
ROLLIN_STREAM = 7
PRIOR_STREAM = 8


@dataclass(frozen=True)
class RunConfig:
    iterations: int = 3
    rollin_timesteps: int = 20
    search: SearchConfig = field(default_factory=SearchConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    n_components: int = 3
    master_seed: int = 0
    baseline_mode: bool = False
    prior_dataset_path: str = ""
    d0_pairs: int = 100
    delta_min: float = 0.45
    delta_max: float = 0.60
    eval_trials: int = 10
    eval_episode_len: int = 30
    epsilon_decay: bool = False
    initial_policy: str = "trained"  # or "uniform"
    affordance_projection: tuple = DEFAULT_PROJECTION

    def __post_init__(self):
        if self.iterations < 0 or self.rollin_timesteps < 1:
            raise ValueError("iterations must be >= 0 and rollin_timesteps >= 1")
        if self.initial_policy not in ("trained", "uniform"):
            raise ValueError("initial_policy must be 'trained' or 'uniform'")

    @property
    def rho(self) -> float:
        return self.search.rho


@dataclass
class RewardStats:
    mean: float
    std: float
    min: float
    max: float
    success_rate: float
    episode_means: list = field(default_factory=list)


@dataclass
class IterationMetrics:
    iteration: int
    reward: RewardStats
    stats: ExpansionStats
    wall_ms: float
    dataset_size: int
    epsilon: float
    roots: list = field(default_factory=list)  # per-root ExpansionStats

    def row(self) -> dict:
        s = self.stats
        return {
            "iteration": self.iteration,
            "mean_reward": self.reward.mean,
            "std_reward": self.reward.std,
            "evals_affordance": s.per_node("evals_affordance"),
            "evals_random": s.per_node("evals_random"),
            "evals_total": s.per_node("evals_total"),
            "wall_ms": self.wall_ms,
            "nodes": s.nodes,
            "draws": s.draws,
            "admitted": s.evals_random,
            "dataset_size": self.dataset_size,
        }


@dataclass
class RunArtifacts:
    policies: list
    signatures: list
    metrics: list
    dataset: LabeledDataset
    initial_reward: RewardStats | None = None

    @property
    def policy(self):
        return self.policies[-1]

    @property
    def signature(self) -> AffordanceSignature:
        return self.signatures[-1]


def initialize(d0: LabeledDataset, cfg: RunConfig):
    """Train the first policy and signature from the seed dataset."""
    if len(d0) == 0:
        raise ValueError("initial dataset is empty")
    seed = cfg.master_seed
    if cfg.initial_policy == "uniform":
        pi0 = UniformPolicy(derive_seed(seed, ROLLIN_STREAM, 0))
    else:
        pi0 = train_policy(d0, cfg.n_components, derive_seed(seed, POLICY_STREAM, 0))
    theta0 = fit_signatures(d0, cfg.n_components, derive_seed(seed, SIGNATURE_STREAM, 0),
                            projection=cfg.affordance_projection)
    return pi0, theta0


def initial_dataset(env: HandoverEnv, cfg: RunConfig) -> LabeledDataset:
    if cfg.prior_dataset_path:
        d0 = LabeledDataset.from_csv(cfg.prior_dataset_path)
        if d0.rho != cfg.rho:
            raise ValueError("threshold mismatch")
        return d0
    return random_policy_dataset(env, cfg.d0_pairs, derive_seed(cfg.master_seed, D0_STREAM), cfg.rho,
                                 delta_min=cfg.delta_min, delta_max=cfg.delta_max)


def _act(policy, s) -> int:
    return policy_act(policy, s) if isinstance(policy, PolicyModel) else int(policy(s))


def iteration_epsilon(cfg: RunConfig, i: int) -> float:
    if cfg.epsilon_decay and cfg.iterations > 0:
        return cfg.search.epsilon * (1.0 - i / cfg.iterations)
    return cfg.search.epsilon


def run_iteration(i: int, policy, sig: AffordanceSignature, d: LabeledDataset, env: HandoverEnv, cfg: RunConfig):
    """One pass: roll in the previous policy, search at every visited state, retrain.

    Returns ``(policy_i, sig_i, dataset, metrics)``. In baseline mode the
    search ignores affordances and the signature is passed through unchanged.
    Any exception leaves the caller's dataset untouched.
    """
    start = time.perf_counter()
    seed = cfg.master_seed
    eps = iteration_epsilon(cfg, i)
    search_cfg = replace(cfg.search, epsilon=eps)
    gate = None if cfg.baseline_mode else sig
    st: EnvState = env.reset(cfg.delta_min, cfg.delta_max, seed=derive_seed(seed, RESET_STREAM, i))
    total = ExpansionStats()
    roots = []
    work = d
    for t in range(1, cfg.rollin_timesteps + 1):
        st = env.step(st, _act(policy, env.observe(st)))
        labels, stats = uct_search(env, st, gate, replace(search_cfg, seed=derive_seed(seed, SEARCH_STREAM, i, t)))
        work = dataset_aggregate(work, labels)
        total = total + stats
        roots.append(stats)
    new_policy = train_policy(work, cfg.n_components, derive_seed(seed, POLICY_STREAM, i))
    if cfg.baseline_mode:
        new_sig = sig
    else:
        new_sig = fit_signatures(work, cfg.n_components, derive_seed(seed, SIGNATURE_STREAM, i),
                                 projection=cfg.affordance_projection)
    wall_ms = (time.perf_counter() - start) * 1000.0
    metrics = IterationMetrics(i, None, total, wall_ms, len(work), eps, roots)
    log.info("iteration %d: |D|=%d nodes=%d evals/node=%.2f wall=%.0fms",
             i, len(work), total.nodes, total.per_node("evals_total"), wall_ms)
    return new_policy, new_sig, work, metrics


def evaluate_policy(
    policy,
    env: HandoverEnv,
    n_trials: int = 10,
    episode_len: int = 30,
    seed: int = 0,
    delta_min: float = 0.45,
    delta_max: float = 0.60,
    reset: Callable[[int], EnvState] | None = None,
) -> RewardStats:
    """Average per-step reward of greedy episodes, summarized over trials."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    means, successes = [], 0
    for trial in range(n_trials):
        trial_seed = derive_seed(seed, EVAL_STREAM, trial)
        st = reset(trial_seed) if reset else env.reset(delta_min, delta_max, seed=trial_seed)
        rewards, success = [], False
        for _ in range(episode_len):
            st = env.step(st, _act(policy, env.observe(st)))
            rewards.append(env.reward(st))
            success = success or env.is_success(st)
        means.append(float(np.mean(rewards)) if rewards else 0.0)
        successes += success
    arr = np.array(means)
    return RewardStats(float(arr.mean()), float(arr.std()), float(arr.min()), float(arr.max()),
                       successes / n_trials, means)


def run(cfg: RunConfig, env: HandoverEnv | None = None, d0: LabeledDataset | None = None,
        on_iteration: Callable | None = None) -> RunArtifacts:
    """Initialize from the seed dataset and run ``cfg.iterations`` iterations."""
    env = env or HandoverEnv(cfg.env)
    d0 = d0 if d0 is not None else initial_dataset(env, cfg)
    policy, sig = initialize(d0, cfg)
    eval_seed = derive_seed(cfg.master_seed, EVAL_STREAM)

    def evaluate(p):
        return evaluate_policy(p, env, cfg.eval_trials, cfg.eval_episode_len, eval_seed,
                               cfg.delta_min, cfg.delta_max)

    artifacts = RunArtifacts([policy], [sig], [], d0, evaluate(policy))
    d = d0
    for i in range(1, cfg.iterations + 1):
        policy, sig, d, metrics = run_iteration(i, policy, sig, d, env, cfg)
        metrics.reward = evaluate(policy)
        artifacts.policies.append(policy)
        artifacts.signatures.append(sig)
        artifacts.metrics.append(metrics)
        artifacts.dataset = d
        if on_iteration:
            on_iteration(metrics)
    return artifacts


def eye_contact_prior(env: HandoverEnv, n_per_group: int = 40, seed: int = 0,
                      rho: float = mdp.DEFAULT_RHO) -> LabeledDataset:
    """Hand-built seed dataset encoding "no handover without eye contact".

    With the attention bit off only head rotations and the null action are
    labeled (null three times as often); with it on every action appears,
    and right-arm-forward is concentrated at reaching distance.
    """
    rng = np.random.default_rng(derive_seed(seed, PRIOR_STREAM))

    def sample(attention: float, near: bool = False) -> np.ndarray:
        dist = rng.uniform(0.20, 0.30) if near else rng.uniform(0.20, 0.60)
        s = mdp.make_state(
            body_x=env.config.target_x - dist,
            body_y=env.config.target_y + rng.uniform(-0.08, 0.08),
            body_heading=rng.uniform(-0.15, 0.15),
            head_pan=rng.uniform(-0.3, 0.3),
            head_tilt=rng.uniform(-0.2, 0.4),
            left_hand_open=1.0, right_hand_open=1.0,
        )
        s[mdp.LEFT_ARM_DX:mdp.LEFT_ARM_DZ + 1] = (0.05, 0.0, -0.15)
        s[mdp.RIGHT_ARM_DX:mdp.RIGHT_ARM_DZ + 1] = (0.05, 0.0, -0.15)
        s = env.derive(s)
        s[mdp.ATTENTION] = attention
        return s

    pairs = []
    for a in mdp.HEAD_ACTIONS:
        pairs += [(sample(0.0), int(a)) for _ in range(n_per_group)]
    pairs += [(sample(0.0), int(Action.NULL)) for _ in range(3 * n_per_group)]
    for a in Action:
        near = a == Action.RIGHT_ARM_FORWARD
        pairs += [(sample(1.0, near), int(a)) for _ in range(n_per_group)]
    order = rng.permutation(len(pairs))
    return LabeledDataset.from_pairs([pairs[i] for i in order], rho)


def probe_state(env: HandoverEnv, attention: float, distance: float = 0.25) -> np.ndarray:
    """Centered, head-level state at ``distance`` in front of the target."""
    s = mdp.make_state(body_x=env.config.target_x - distance, body_y=env.config.target_y,
                       left_hand_open=1.0, right_hand_open=1.0)
    s[mdp.LEFT_ARM_DX:mdp.LEFT_ARM_DZ + 1] = (0.05, 0.0, -0.15)
    s[mdp.RIGHT_ARM_DX:mdp.RIGHT_ARM_DZ + 1] = (0.05, 0.0, -0.15)
    s = env.derive(s)
    s[mdp.ATTENTION] = attention
    return s
