"""States, actions and the labeled dataset shared by search, policy and affordances."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

STATE_DIM = 18

# Indices into the 18-dim state vector.
BODY_X = 0
BODY_Y = 1
BODY_HEADING = 2
HEAD_PAN = 3
HEAD_TILT = 4
LEFT_ARM_DX = 5
LEFT_ARM_DY = 6
LEFT_ARM_DZ = 7
RIGHT_ARM_DX = 8
RIGHT_ARM_DY = 9
RIGHT_ARM_DZ = 10
LEFT_HAND_OPEN = 11
RIGHT_HAND_OPEN = 12
TARGET_DISTANCE = 13
IMAGE_U = 14
IMAGE_V = 15
TARGET_VISIBLE = 16
ATTENTION = 17

STATE_FIELDS = (
    "body_x", "body_y", "body_heading", "head_pan", "head_tilt",
    "left_arm_dx", "left_arm_dy", "left_arm_dz",
    "right_arm_dx", "right_arm_dy", "right_arm_dz",
    "left_hand_open", "right_hand_open", "target_distance",
    "image_u", "image_v", "target_visible", "attention_bit",
)

BIT_FIELDS = (LEFT_HAND_OPEN, RIGHT_HAND_OPEN, TARGET_VISIBLE, ATTENTION)

# Normalization box. Ranges are chosen so that a single motion step of the
# default simulator moves the normalized state by more than the default rho.
STATE_BOUNDS = np.array([
    [-0.85, 0.05],   # body_x
    [-0.45, 0.45],   # body_y
    [-1.5, 1.5],     # body_heading
    [-1.4, 1.4],     # head_pan
    [-0.5, 0.5],     # head_tilt
    [-0.3, 0.3], [-0.3, 0.3], [-0.3, 0.3],
    [-0.3, 0.3], [-0.3, 0.3], [-0.3, 0.3],
    [0.0, 1.0], [0.0, 1.0],
    [0.0, 0.9],      # target_distance
    [-1.0, 1.0], [-1.0, 1.0],
    [0.0, 1.0], [0.0, 1.0],
])

DEFAULT_RHO = 0.05


class Action(IntEnum):
    HEAD_LEFT = 0
    HEAD_RIGHT = 1
    HEAD_UP = 2
    HEAD_DOWN = 3
    BODY_FORWARD = 4
    BODY_BACKWARD = 5
    BODY_LEFT = 6
    BODY_RIGHT = 7
    BODY_ROTATE_LEFT = 8
    BODY_ROTATE_RIGHT = 9
    LEFT_ARM_FORWARD = 10
    LEFT_ARM_BACKWARD = 11
    LEFT_ARM_LEFT = 12
    LEFT_ARM_RIGHT = 13
    LEFT_ARM_UP = 14
    LEFT_ARM_DOWN = 15
    RIGHT_ARM_FORWARD = 16
    RIGHT_ARM_BACKWARD = 17
    RIGHT_ARM_LEFT = 18
    RIGHT_ARM_RIGHT = 19
    RIGHT_ARM_UP = 20
    RIGHT_ARM_DOWN = 21
    LEFT_HAND_CLOSE = 22
    LEFT_HAND_OPEN = 23
    RIGHT_HAND_CLOSE = 24
    RIGHT_HAND_OPEN = 25
    NULL = 26

    @property
    def snake(self) -> str:
        return self.name.lower()


N_ACTIONS = len(Action)
ALL_ACTIONS = tuple(int(a) for a in Action)
HEAD_ACTIONS = (Action.HEAD_LEFT, Action.HEAD_RIGHT, Action.HEAD_UP, Action.HEAD_DOWN)


def parse_action(name: str | int) -> Action:
    """Resolve a snake_case action name or an integer index."""
    if isinstance(name, (int, np.integer)):
        return Action(int(name))
    text = str(name).strip()
    if text.lstrip("-").isdigit():
        return Action(int(text))
    try:
        return Action[text.upper()]
    except KeyError:
        raise ValueError(f"unknown action {name!r}") from None


def make_state(**fields: float) -> np.ndarray:
    """Build an 18-dim state vector from keyword fields; missing fields are 0."""
    s = np.zeros(STATE_DIM)
    for key, value in fields.items():
        s[STATE_FIELDS.index(key)] = value
    return s


def _check_finite(x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError("invalid state")
    return x


def normalize_state(s: Sequence[float] | np.ndarray, bounds: np.ndarray = STATE_BOUNDS) -> np.ndarray:
    """Map each dimension affinely so that ``[min, max]`` becomes ``[0, 1]``.

    Bit fields pass through unchanged. Works on a single vector or on a
    stack of vectors (last axis is the state dimension). Values outside the
    bounds map outside ``[0, 1]``; nothing is clipped.
    """
    x = _check_finite(np.asarray(s, dtype=float))
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    if not (np.all(np.isfinite(bounds)) and np.all(lo < hi)):
        raise ValueError("invalid bounds")
    out = (x - lo) / (hi - lo)
    if x.shape[-1] == STATE_DIM and len(bounds) == STATE_DIM:
        out[..., list(BIT_FIELDS)] = x[..., list(BIT_FIELDS)]
    return out


def states_equal(s1: np.ndarray, s2: np.ndarray, rho: float) -> bool:
    """Approximate state identity: L-infinity distance of normalized states < rho.

    Symmetric, and reflexive whenever rho > 0, but not transitive: a chain of
    states each within rho of the next can drift arbitrarily far.
    """
    a = _check_finite(np.asarray(s1, dtype=float))
    b = _check_finite(np.asarray(s2, dtype=float))
    if rho < 0:
        raise ValueError("rho must be non-negative")
    return bool(np.max(np.abs(a - b), initial=0.0) < rho)


def _superseded(norm: np.ndarray, rho: float) -> np.ndarray:
    """Mark rows that have a rho-equal row later in the sequence.

    Inserting rows one by one, where each insertion evicts every stored
    rho-equal row, keeps exactly the rows that are not superseded.
    """
    n = len(norm)
    mask = np.zeros(n, dtype=bool)
    if n < 2 or rho <= 0:
        return mask
    order = np.argsort(norm[:, 0], kind="stable")
    key = norm[order, 0]
    lo = np.searchsorted(key, key - rho, side="right")
    hi = np.searchsorted(key, key + rho, side="left")
    for p in range(n):
        if hi[p] - lo[p] < 2:
            continue
        idx = order[p]
        cand = order[lo[p]:hi[p]]
        later = cand[cand > idx]
        if later.size and np.any(np.max(np.abs(norm[later] - norm[idx]), axis=1) < rho):
            mask[idx] = True
    return mask


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Ordered (state, action) pairs with no two rho-equal states.

    Build instances with :meth:`from_pairs` (or :meth:`empty`); the raw
    constructor trusts its inputs to be deduplicated already.
    """

    states: np.ndarray
    actions: np.ndarray
    rho: float = DEFAULT_RHO
    bounds: np.ndarray = STATE_BOUNDS

    @classmethod
    def empty(cls, rho: float = DEFAULT_RHO, dim: int = STATE_DIM, bounds: np.ndarray | None = None) -> LabeledDataset:
        bounds = STATE_BOUNDS if bounds is None else np.asarray(bounds, dtype=float)
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=int), float(rho), bounds)

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[tuple[Sequence[float], int]],
        rho: float = DEFAULT_RHO,
        bounds: np.ndarray | None = None,
        dim: int | None = None,
    ) -> LabeledDataset:
        """Insert pairs in order; a later rho-equal state replaces an earlier one."""
        pairs = list(pairs)
        if not pairs:
            return cls.empty(rho, dim or (len(bounds) if bounds is not None else STATE_DIM), bounds)
        states = np.array([np.asarray(s, dtype=float) for s, _ in pairs])
        actions = np.array([int(a) for _, a in pairs], dtype=int)
        return cls._build(states, actions, rho, bounds)

    @classmethod
    def _build(cls, states, actions, rho, bounds) -> LabeledDataset:
        states = _check_finite(np.atleast_2d(np.asarray(states, dtype=float)))
        if bounds is None:
            bounds = STATE_BOUNDS
        bounds = np.asarray(bounds, dtype=float)
        if states.shape[1] != len(bounds):
            raise ValueError(f"state dimension {states.shape[1]} does not match bounds")
        keep = ~_superseded(normalize_state(states, bounds), rho)
        states = states[keep].copy()
        actions = np.asarray(actions, dtype=int)[keep].copy()
        states.flags.writeable = False
        actions.flags.writeable = False
        return cls(states, actions, float(rho), bounds)

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[tuple[np.ndarray, int]]:
        for s, a in zip(self.states, self.actions):
            yield s, int(a)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @cached_property
    def normalized(self) -> np.ndarray:
        return normalize_state(self.states, self.bounds)

    def counts(self, n_actions: int = N_ACTIONS) -> np.ndarray:
        return np.bincount(self.actions, minlength=n_actions)

    def tail(self, n: int) -> LabeledDataset:
        return LabeledDataset(self.states[-n:], self.actions[-n:], self.rho, self.bounds) if n else \
            LabeledDataset.empty(self.rho, self.dim, self.bounds)

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        buf.write(f"# rho={self.rho!r} version=1\n")
        buf.write(",".join([f"s{i}" for i in range(self.dim)] + ["action"]) + "\n")
        for s, a in self:
            buf.write(",".join([repr(float(v)) for v in s] + [str(a)]) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path, bounds: np.ndarray | None = None) -> LabeledDataset:
        lines = Path(path).read_text().splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ValueError("dataset file lacks the metadata line")
        meta = dict(tok.split("=", 1) for tok in lines[0].lstrip("#").split())
        if meta.get("version") != "1":
            raise ValueError(f"unsupported dataset version {meta.get('version')!r}")
        rho = float(meta["rho"])
        header = lines[1].split(",")
        dim = len(header) - 1
        rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
        if not rows:
            return cls.empty(rho, dim, bounds)
        states = np.array([[float(v) for v in r[:-1]] for r in rows])
        actions = np.array([int(r[-1]) for r in rows])
        return cls._build(states, actions, rho, bounds)


def dataset_aggregate(d: LabeledDataset, d_new: LabeledDataset) -> LabeledDataset:
    """Merge new labels into ``d``; old states rho-equal to a new one are dropped."""
    if not math.isclose(d.rho, d_new.rho, rel_tol=0, abs_tol=0):
        raise ValueError("threshold mismatch")
    if len(d_new) == 0:
        return d
    new = LabeledDataset._build(d_new.states, d_new.actions, d_new.rho, d.bounds)
    if len(d) == 0:
        return new
    old_norm, new_norm = d.normalized, new.normalized
    drop = np.zeros(len(d), dtype=bool)
    if d.rho > 0:
        for start in range(0, len(new_norm), 256):
            block = new_norm[start:start + 256]
            dist = np.max(np.abs(old_norm[:, None, :] - block[None, :, :]), axis=2)
            drop |= np.any(dist < d.rho, axis=1)
    states = np.concatenate([d.states[~drop], new.states])
    actions = np.concatenate([d.actions[~drop], new.actions])
    states.flags.writeable = False
    actions.flags.writeable = False
    return LabeledDataset(states, actions, d.rho, d.bounds)
