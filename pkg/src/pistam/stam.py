"""Per-action affordance functions, the adaptive legality rule and heat-maps."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import mdp
from .gmm import REG_FLOOR, MixtureBank, MixtureModel, gmm_fit_em
from .mdp import Action, LabeledDataset

DEFAULT_PROJECTION = (
    mdp.BODY_X, mdp.BODY_Y, mdp.BODY_HEADING, mdp.TARGET_DISTANCE,
    mdp.IMAGE_U, mdp.IMAGE_V, mdp.ATTENTION,
)
FULL_PROJECTION = tuple(range(mdp.STATE_DIM))
SIGNATURE_VERSION = 1


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed derived from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)[0] >> 1)


def project(states, projection: Sequence[int], bounds=mdp.STATE_BOUNDS) -> np.ndarray:
    """Normalize full states and keep the projected feature columns."""
    return mdp.normalize_state(states, bounds)[..., list(projection)]


@dataclass(frozen=True, eq=False)
class AffordanceSignature:
    """One mixture per action over normalized, projected state features."""

    per_action: dict
    feature_projection: tuple = DEFAULT_PROJECTION

    def __post_init__(self):
        dims = {m.dim for m in self.per_action.values()}
        if dims and dims != {len(self.feature_projection)}:
            raise ValueError("all models must share the projection dimension")

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(sorted(int(a) for a in self.per_action))

    def features(self, s) -> np.ndarray:
        return project(s, self.feature_projection)

    @cached_property
    def _bank(self) -> MixtureBank:
        return MixtureBank([self.per_action[a] for a in self.actions])

    def log_values(self, s) -> np.ndarray:
        """Log affordance density of every action (ordered as ``actions``)."""
        return self._bank.log_densities(self.features(s))

    def to_json(self) -> dict:
        return {
            "version": SIGNATURE_VERSION,
            "projection": list(self.feature_projection),
            "actions": {str(a): self.per_action[a].to_json() for a in self.actions},
        }

    @classmethod
    def from_json(cls, doc: dict) -> AffordanceSignature:
        if doc.get("version") != SIGNATURE_VERSION:
            raise ValueError(f"unsupported signature version {doc.get('version')!r}")
        per_action = {int(k): MixtureModel.from_json(v) for k, v in doc["actions"].items()}
        return cls(per_action, tuple(doc["projection"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> AffordanceSignature:
        return cls.from_json(json.loads(Path(path).read_text()))


def affordance_value(s, a: int, sig: AffordanceSignature) -> float:
    if int(a) not in sig.per_action:
        raise KeyError(f"no affordance model for action {int(a)}")
    f = sig.features(s)
    return float(np.exp(sig.per_action[int(a)].log_density(f[None, :])[0]))


@dataclass(frozen=True)
class LegalitySample:
    legal: frozenset
    via_affordance: frozenset
    via_random: frozenset
    lam: float
    draws: int = 0  # below-threshold actions that went through the epsilon draw


def threshold_legal(values, epsilon: float, rng: np.random.Generator, actions: Sequence[int] | None = None) -> LegalitySample:
    """Adaptive legality on a value vector: keep v > max(v) / 2, admit the rest with prob. epsilon.

    One uniform is drawn per below-threshold action, in action order. When
    nothing survives (all values zero and every draw failed) the full set is
    returned as legal.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    v = np.asarray(values, dtype=float)
    acts = np.asarray(actions if actions is not None else range(len(v)), dtype=int)
    lam = 0.5 * float(v.max())
    above = v > lam
    below = acts[~above]
    admitted = below[rng.random(len(below)) < epsilon]
    via_aff = frozenset(int(a) for a in acts[above])
    via_rnd = frozenset(int(a) for a in admitted)
    if not via_aff and not via_rnd:
        via_aff = frozenset(int(a) for a in acts)
    return LegalitySample(via_aff | via_rnd, via_aff, via_rnd, max(lam, 0.0), int(len(below)))


def legal_actions(s, sig: AffordanceSignature, epsilon: float, rng: np.random.Generator) -> LegalitySample:
    logv = sig.log_values(s)
    top = float(np.max(logv))
    rel = np.exp(logv - top) if np.isfinite(top) else np.zeros_like(logv)
    sample = threshold_legal(rel, epsilon, rng, sig.actions)
    with np.errstate(over="ignore"):
        lam = 0.5 * float(np.exp(top)) if np.isfinite(top) else 0.0
    return LegalitySample(sample.legal, sample.via_affordance, sample.via_random, lam, sample.draws)


def fit_signatures(
    d: LabeledDataset,
    n_components: int = 3,
    seed: int = 0,
    projection: Sequence[int] = DEFAULT_PROJECTION,
    actions: Sequence[int] = mdp.ALL_ACTIONS,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> AffordanceSignature:
    """Maximum-likelihood mixture per action over the states labeled with it.

    Actions without examples get one broad Gaussian (dataset mean and
    covariance) so their affordance stays weak but nonzero.
    """
    if len(d) == 0:
        raise ValueError("cannot fit signatures on an empty dataset")
    X = project(d.states, projection, d.bounds)
    per_action = {}
    fallback = None
    for a in actions:
        rows = X[d.actions == int(a)]
        if len(rows):
            per_action[int(a)] = gmm_fit_em(rows, n_components, derive_seed(seed, int(a)), max_iters, tol)
            continue
        if fallback is None:
            dim = X.shape[1]
            cov = np.cov(X, rowvar=False, bias=True).reshape(dim, dim) if len(X) > 1 else np.zeros((dim, dim))
            cov = cov + REG_FLOOR * np.eye(dim)
            fallback = MixtureModel(np.ones(1), X.mean(axis=0)[None, :], cov[None])
        per_action[int(a)] = fallback
    return AffordanceSignature(per_action, tuple(int(i) for i in projection))


@dataclass(frozen=True, eq=False)
class AffordanceGrid:
    """Row-major raster of affordance values; row j covers y = origin_y + (j + 0.5) * cell."""

    action: int | None
    origin: tuple
    cell_size: float
    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.values.shape != (self.height, self.width):
            raise ValueError("values must have shape (height, width)")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)

    def same_geometry(self, other: AffordanceGrid) -> bool:
        return (tuple(self.origin) == tuple(other.origin) and self.cell_size == other.cell_size
                and self.width == other.width and self.height == other.height)

    def to_csv(self, path: str | Path | None = None) -> str:
        name = Action(self.action).snake if self.action is not None else "composite"
        buf = io.StringIO()
        buf.write(
            f"# action={name} origin_x={self.origin[0]!r} origin_y={self.origin[1]!r} "
            f"cell_size={self.cell_size!r} width={self.width} height={self.height}\n"
        )
        for row in self.values:
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> AffordanceGrid:
        lines = Path(path).read_text().splitlines()
        meta = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split())
        values = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()])
        action = None if meta["action"] == "composite" else int(mdp.parse_action(meta["action"]))
        return cls(action, (float(meta["origin_x"]), float(meta["origin_y"])), float(meta["cell_size"]),
                   int(meta["width"]), int(meta["height"]), values.reshape(int(meta["height"]), int(meta["width"])))


def _normalized_sum(stack: np.ndarray) -> np.ndarray:
    peaks = stack.reshape(len(stack), -1).max(axis=1)
    scale = np.where(peaks > 0, peaks, 1.0)
    return (stack / scale[:, None, None]).sum(axis=0) / len(stack)


COMPOSITIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "max": lambda stack: stack.max(axis=0),
    "normalized-sum": _normalized_sum,
}


def compose_map(grids: Sequence[AffordanceGrid], how: str | Callable = "max") -> AffordanceGrid:
    """Combine per-action maps into one (pointwise max by default)."""
    grids = list(grids)
    if not grids:
        raise ValueError("nothing to compose")
    first = grids[0]
    if any(not first.same_geometry(g) for g in grids[1:]):
        raise ValueError("grid geometry mismatch")
    if len(grids) == 1:
        return first
    fn = COMPOSITIONS[how] if isinstance(how, str) else how
    values = fn(np.stack([g.values for g in grids]))
    return AffordanceGrid(None, first.origin, first.cell_size, first.width, first.height, values)


def rasterize(
    sig: AffordanceSignature,
    a: int,
    template_state,
    origin=(-0.6, -0.6),
    cell_size: float = 0.05,
    width: int = 24,
    height: int = 24,
    target_xy=(0.0, 0.0),
    derive: Callable | None = None,
) -> AffordanceGrid:
    """Evaluate one action's affordance with the body placed at every cell center.

    Target distance is recomputed from ``target_xy``; ``derive`` (for example
    ``HandoverEnv.derive``) may recompute further geometric features.
    """
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    if int(a) not in sig.per_action:
        raise KeyError(f"no affordance model for action {int(a)}")
    template = np.asarray(template_state, dtype=float)
    xs = origin[0] + (np.arange(width) + 0.5) * cell_size
    ys = origin[1] + (np.arange(height) + 0.5) * cell_size
    states = np.repeat(template[None, :], width * height, axis=0)
    gx, gy = np.meshgrid(xs, ys)
    states[:, mdp.BODY_X] = gx.ravel()
    states[:, mdp.BODY_Y] = gy.ravel()
    states[:, mdp.TARGET_DISTANCE] = np.hypot(gx.ravel() - target_xy[0], gy.ravel() - target_xy[1])
    if derive is not None:
        states = np.array([derive(s) for s in states])
    logv = sig.per_action[int(a)].log_density(sig.features(states))
    return AffordanceGrid(int(a), (float(origin[0]), float(origin[1])), float(cell_size), int(width), int(height),
                          np.exp(logv).reshape(height, width))
