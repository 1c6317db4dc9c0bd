"""Generative GMM classifier used as the policy, plus the random seed dataset."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import mdp
from .gmm import MixtureBank, MixtureModel, gmm_classify, gmm_fit_em
from .mdp import LabeledDataset
from .stam import FULL_PROJECTION, derive_seed, project

POLICY_VERSION = 1


@dataclass(frozen=True, eq=False)
class PolicyModel:
    class_models: dict
    class_priors: dict
    feature_projection: tuple = FULL_PROJECTION
    _ordered: list = field(default=None, init=False, repr=False)
    _bank: MixtureBank = field(default=None, init=False, repr=False)

    def __post_init__(self):
        present = [a for a, p in self.class_priors.items() if p > 0]
        if present and abs(sum(self.class_priors[a] for a in present) - 1.0) > 1e-9:
            raise ValueError("class priors must sum to 1")
        ordered = sorted((a, self.class_models[a], self.class_priors[a]) for a in present)
        object.__setattr__(self, "_ordered", ordered)
        if ordered:
            object.__setattr__(self, "_bank", MixtureBank([m for _, m, _ in ordered]))

    def act(self, s) -> int:
        return policy_act(self, s)

    __call__ = act

    def to_json(self) -> dict:
        return {
            "version": POLICY_VERSION,
            "projection": list(self.feature_projection),
            "classes": {
                str(a): {"prior": float(self.class_priors[a]), "model": self.class_models[a].to_json()}
                for a in sorted(self.class_models)
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> PolicyModel:
        if doc.get("version") != POLICY_VERSION:
            raise ValueError(f"unsupported policy version {doc.get('version')!r}")
        classes = doc["classes"]
        return cls(
            {int(a): MixtureModel.from_json(c["model"]) for a, c in classes.items()},
            {int(a): float(c["prior"]) for a, c in classes.items()},
            tuple(doc["projection"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> PolicyModel:
        return cls.from_json(json.loads(Path(path).read_text()))


def train_policy(
    d: LabeledDataset,
    n_components: int = 3,
    seed: int = 0,
    projection: Sequence[int] = FULL_PROJECTION,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> PolicyModel:
    """Fit one mixture per action present in ``d``; priors are label frequencies."""
    if len(d) == 0:
        raise ValueError("cannot train a policy on an empty dataset")
    X = project(d.states, projection, d.bounds)
    counts = np.bincount(d.actions)
    models, priors = {}, {}
    for a in np.flatnonzero(counts):
        a = int(a)
        models[a] = gmm_fit_em(X[d.actions == a], n_components, derive_seed(seed, a), max_iters, tol)
        priors[a] = counts[a] / len(d)
    return PolicyModel(models, priors, tuple(int(i) for i in projection))


def policy_act(p: PolicyModel, s) -> int:
    if not p._ordered:
        raise ValueError("policy is untrained")
    x = project(np.asarray(s, dtype=float), p.feature_projection)
    return gmm_classify(x, [(a, m) for a, m, _ in p._ordered], [w for _, _, w in p._ordered], p._bank)


class UniformPolicy:
    """Seeded uniform-random policy over the action set."""

    def __init__(self, seed: int = 0, actions: Sequence[int] = mdp.ALL_ACTIONS):
        self.rng = np.random.default_rng(seed)
        self.actions = tuple(actions)

    def __call__(self, s) -> int:
        return int(self.actions[self.rng.integers(len(self.actions))])


def random_policy_dataset(
    env,
    n_pairs: int,
    seed: int = 0,
    rho: float = mdp.DEFAULT_RHO,
    episode_len: int = 10,
    delta_min: float = 0.45,
    delta_max: float = 0.60,
) -> LabeledDataset:
    """Roll uniformly random actions from fresh resets and record (state, action).

    Each reset starts a new episode of ``episode_len`` steps. Fewer than
    ``n_pairs`` pairs may survive rho-deduplication.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    actions = rng.integers(0, len(env.actions), size=n_pairs)
    pairs = []
    st = None
    for i, a in enumerate(actions):
        if i % episode_len == 0:
            st = env.reset(delta_min, delta_max, seed=derive_seed(seed, i // episode_len))
        a = int(env.actions[a])
        pairs.append((env.observe(st), a))
        st = env.step(st, a)
    return LabeledDataset.from_pairs(pairs, rho, getattr(env, "bounds", None))
