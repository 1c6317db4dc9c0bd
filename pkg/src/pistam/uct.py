"""Depth-limited UCT restricted to affordance-legal actions."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import mdp
from .mdp import LabeledDataset
from .stam import AffordanceSignature, LegalitySample, legal_actions

log = logging.getLogger(__name__)


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    horizon: int = 4
    simulations: int = 64
    exploration: float = math.sqrt(2)
    epsilon: float = 0.3
    rho: float = mdp.DEFAULT_RHO
    seed: int = 0
    gamma: float = 1.0
    merge_rho: bool = False
    workers: int = 1
    min_label_visits: int = 2

    def __post_init__(self):
        if self.horizon < 1 or self.simulations < 1:
            raise ValueError("horizon and simulations must be >= 1")
        if self.exploration < 0:
            raise ValueError("exploration constant must be >= 0")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.min_label_visits < 1:
            raise ValueError("min_label_visits must be >= 1")


@dataclass
class ExpansionStats:
    """Counters for one search (or a sum of searches).

    ``evals_*`` add up the legal-set sizes of expanded nodes, i.e. how many
    child transitions were simulated; ``draws`` counts below-threshold
    actions offered to the epsilon draw and ``traversals`` the edges walked
    by all episodes (K * H without aborts).
    """

    nodes: int = 0
    evals_affordance: int = 0
    evals_random: int = 0
    evals_total: int = 0
    draws: int = 0
    traversals: int = 0
    episodes: int = 0
    aborted: int = 0
    wallclock_ms: float = 0.0

    def record(self, sample: LegalitySample) -> None:
        self.nodes += 1
        self.evals_affordance += len(sample.via_affordance)
        self.evals_random += len(sample.via_random)
        self.evals_total += len(sample.legal)
        self.draws += sample.draws

    def __add__(self, other: ExpansionStats) -> ExpansionStats:
        return ExpansionStats(*(getattr(self, f) + getattr(other, f) for f in self.__dataclass_fields__))

    def per_node(self, name: str) -> float:
        return getattr(self, name) / self.nodes if self.nodes else 0.0


class SearchNode:
    __slots__ = ("state", "depth", "children", "visits", "value_sum", "legal", "_reward")

    def __init__(self, state, depth: int):
        self.state = state
        self.depth = depth
        self.children: dict[int, SearchNode] = {}
        self.visits: dict[int, int] = {}
        self.value_sum: dict[int, float] = {}
        self.legal: LegalitySample | None = None
        self._reward: float | None = None

    @property
    def expanded(self) -> bool:
        return self.legal is not None

    @property
    def total_visits(self) -> int:
        return sum(self.visits.values())

    def value_mean(self, a: int) -> float:
        n = self.visits[a]
        return self.value_sum[a] / n if n else 0.0


def ucb_score(value_mean: float, n_sa: int, n_s_total: int, C: float) -> float:
    if n_sa == 0:
        return math.inf
    return value_mean + C * math.sqrt(math.log(n_s_total) / n_sa)


def _all_legal(actions) -> LegalitySample:
    legal = frozenset(int(a) for a in actions)
    return LegalitySample(legal, legal, frozenset(), 0.0, 0)


class _Tree:
    def __init__(self, env, root_state, sig, cfg: SearchConfig, rng: np.random.Generator):
        self.env = env
        self.sig = sig
        self.cfg = cfg
        self.rng = rng
        self.stats = ExpansionStats()
        self.root = SearchNode(root_state, 0)
        self.bounds = getattr(env, "bounds", mdp.STATE_BOUNDS)
        self._by_depth: dict[int, list[tuple[np.ndarray, SearchNode]]] = {}

    def _legal(self, node: SearchNode) -> LegalitySample:
        if self.sig is None:
            return _all_legal(self.env.actions)
        return legal_actions(self.env.observe(node.state), self.sig, self.cfg.epsilon, self.rng)

    def _child(self, state, depth: int) -> SearchNode:
        if not self.cfg.merge_rho:
            return SearchNode(state, depth)
        key = mdp.normalize_state(self.env.observe(state), self.bounds)
        bucket = self._by_depth.setdefault(depth, [])
        for other, node in bucket:
            if np.max(np.abs(other - key)) < self.cfg.rho:
                return node
        node = SearchNode(state, depth)
        bucket.append((key, node))
        return node

    def expand(self, node: SearchNode) -> None:
        sample = self._legal(node)
        children = {}
        for a in sorted(sample.legal):
            children[a] = self._child(self.env.step(node.state, a), node.depth + 1)
        node.children = children
        node.visits = {a: 0 for a in children}
        node.value_sum = {a: 0.0 for a in children}
        node.legal = sample
        self.stats.record(sample)

    def select(self, node: SearchNode) -> int:
        total = node.total_visits
        best, best_score = None, -math.inf
        for a in sorted(node.children):
            score = ucb_score(node.value_mean(a), node.visits[a], total, self.cfg.exploration)
            if score == math.inf:
                return a
            if score > best_score:
                best, best_score = a, score
        return best

    def reward(self, node: SearchNode) -> float:
        if node._reward is None:
            node._reward = float(self.env.reward(node.state))
        return node._reward

    def episode(self) -> None:
        path = []
        node = self.root
        for _ in range(self.cfg.horizon):
            if not node.expanded:
                self.expand(node)
            a = self.select(node)
            path.append((node, a))
            node = node.children[a]
        r = self.reward(node)
        for h, (n, a) in enumerate(path):
            n.visits[a] += 1
            n.value_sum[a] += r * self.cfg.gamma ** (len(path) - 1 - h)
        self.stats.traversals += len(path)

    def run(self, episodes: int) -> None:
        for _ in range(episodes):
            try:
                self.episode()
                self.stats.episodes += 1
            except Exception as exc:  # noqa: BLE001 - a failing simulator only costs the episode
                log.warning("search episode aborted: %s", exc)
                self.stats.aborted += 1


def _merge(into: SearchNode, other: SearchNode) -> None:
    for a, child in other.children.items():
        if a in into.children:
            into.visits[a] += other.visits[a]
            into.value_sum[a] += other.value_sum[a]
            _merge(into.children[a], child)
        else:
            into.children[a] = child
            into.visits[a] = other.visits[a]
            into.value_sum[a] = other.value_sum[a]


def greedy_labels(env, root: SearchNode, horizon: int, rho: float, min_visits: int = 1) -> LabeledDataset:
    """Follow the most visited child (lowest index on ties) and label each state.

    The root is always labeled. Below it the path stops at the first node
    whose best action has fewer than ``min_visits`` visits: a tie among
    single-visit children carries no preference, and labeling it would
    just teach the lowest action index.
    """
    pairs = []
    node = root
    while node.depth < horizon and node.children:
        visited = {a: n for a, n in node.visits.items() if n > 0}
        if not visited:
            break
        a = min(visited, key=lambda k: (-visited[k], k))
        if node is not root and visited[a] < min_visits:
            break
        pairs.append((env.observe(node.state), a))
        node = node.children[a]
    bounds = getattr(env, "bounds", mdp.STATE_BOUNDS)
    return LabeledDataset.from_pairs(pairs, rho, bounds, dim=len(bounds))


def uct_search(env, s_t, sig: AffordanceSignature | None, cfg: SearchConfig, return_tree: bool = False):
    """Run ``cfg.simulations`` UCT episodes from ``s_t``.

    Nodes store simulator states, so every episode restarts from the root
    snapshot. With ``sig=None`` every action is legal (baseline). Returns the
    greedy-path labels and the expansion statistics (plus the root node
    when ``return_tree`` is set).
    """
    start = time.perf_counter()
    if cfg.workers == 1:
        tree = _Tree(env, s_t, sig, cfg, np.random.default_rng(cfg.seed))
        tree.run(cfg.simulations)
        root, stats = tree.root, tree.stats
    else:
        chunks = [cfg.simulations // cfg.workers + (i < cfg.simulations % cfg.workers) for i in range(cfg.workers)]
        streams = np.random.SeedSequence(cfg.seed).spawn(cfg.workers)
        trees = [_Tree(env, s_t, sig, cfg, np.random.default_rng(s)) for s in streams]
        with ThreadPoolExecutor(cfg.workers) as pool:
            list(pool.map(lambda tk: tk[0].run(tk[1]), zip(trees, chunks)))
        root, stats = trees[0].root, trees[0].stats
        for t in trees[1:]:
            _merge(root, t.root)
            stats = stats + t.stats
    if stats.episodes == 0:
        raise SearchError("every search episode failed")
    stats.wallclock_ms = (time.perf_counter() - start) * 1000.0
    labels = greedy_labels(env, root, cfg.horizon, cfg.rho, min(cfg.min_label_visits, cfg.simulations))
    return (labels, stats, root) if return_tree else (labels, stats)


def with_seed(cfg: SearchConfig, seed: int) -> SearchConfig:
    return replace(cfg, seed=seed)
