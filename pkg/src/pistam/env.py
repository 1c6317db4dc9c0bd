"""Planar handover simulator.

A mobile agent with a pan/tilt head camera, two Cartesian arms and two hands
approaches an object held by a static human. The only interactive element
is the attention bit, which follows a seeded flip process unless the agent
looks at the human's face.
"""

from __future__ import annotations

import csv
import math
import struct
import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import mdp
from .mdp import Action

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def stream_uniform(seed: int, position: int) -> float:
    """Counter-based uniform draw in [0, 1): the stream is (seed, position)."""
    return (_splitmix64((seed & _MASK64) ^ _splitmix64(position)) >> 11) * (1.0 / (1 << 53))


@dataclass(frozen=True)
class EnvConfig:
    step_translate: float = 0.05
    step_rotate: float = 0.1745
    step_arm: float = 0.04
    step_head: float = 0.1745
    arm_reach_max: float = 0.30
    target_x: float = 0.0
    target_y: float = 0.0
    target_z: float = 0.45
    grasp_distance: float = 0.25
    camera_fov: float = 1.047
    attention_flip_prob: float = 0.05
    w_dist: float = 0.5
    w_center: float = 0.3
    w_hand_penalty: float = 0.4
    w_grasp: float = 0.0
    dist_scale: float = 0.3
    social_rule_enabled: bool = False
    camera_height: float = 0.35
    face_x: float = 0.10
    face_y: float = 0.0
    face_z: float = 0.60
    gaze_tolerance: float = 0.2
    head_pan_limit: float = 1.4
    head_tilt_limit: float = 0.5
    shoulder_height: float = 0.30
    shoulder_offset: float = 0.10

    def __post_init__(self):
        steps = (self.step_translate, self.step_rotate, self.step_arm, self.step_head)
        if min(steps) <= 0:
            raise ValueError("step sizes must be positive")
        if min(self.w_dist, self.w_center, self.w_hand_penalty, self.w_grasp) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.grasp_distance <= 0 or self.dist_scale <= 0 or self.arm_reach_max <= 0:
            raise ValueError("grasp_distance, dist_scale and arm_reach_max must be positive")
        if not 0 < self.camera_fov < math.pi:
            raise ValueError("camera_fov must lie in (0, pi)")
        if not 0 <= self.attention_flip_prob <= 1:
            raise ValueError("attention_flip_prob must lie in [0, 1]")


ARM_REST = (0.05, 0.0, -0.15)


@dataclass(frozen=True)
class EnvState:
    """Observable state vector plus the attention stream (seed, position)."""

    x: tuple
    seed: int
    tick: int

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.x)


_SNAP = struct.Struct("<4s18dQQI")
_MAGIC = b"PSTM"


def _wrap(angle: float) -> float:
    return (angle + math.pi) % (2 * math.pi) - math.pi


def _clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


# action -> (state index, sign) for the simple increment actions
_ARM_AXES = {
    "forward": (0, 1), "backward": (0, -1), "left": (1, 1),
    "right": (1, -1), "up": (2, 1), "down": (2, -1),
}


class HandoverEnv:
    """Deterministic handover dynamics; stepping is a pure function of the state."""

    actions = mdp.ALL_ACTIONS
    bounds = mdp.STATE_BOUNDS

    def __init__(self, config: EnvConfig | None = None):
        self.config = config or EnvConfig()
        self._tan_half = math.tan(self.config.camera_fov / 2)

    # -- construction --------------------------------------------------

    def reset(self, delta_min: float = 0.45, delta_max: float = 0.60, seed: int = 0) -> EnvState:
        """Spawn at a uniform distance in front of the target, facing it."""
        if not (0 < delta_min <= delta_max) or not math.isfinite(delta_max):
            raise ValueError(f"invalid spawn range [{delta_min}, {delta_max}]")
        rng = np.random.default_rng(seed)
        dist = float(rng.uniform(delta_min, delta_max)) if delta_max > delta_min else float(delta_min)
        attention = float(rng.random() < 0.5)
        stream = int(rng.integers(0, 2**63))
        c = self.config
        x = [0.0] * mdp.STATE_DIM
        x[mdp.BODY_X] = c.target_x - dist
        x[mdp.BODY_Y] = c.target_y
        x[mdp.LEFT_ARM_DX:mdp.LEFT_ARM_DZ + 1] = ARM_REST
        x[mdp.RIGHT_ARM_DX:mdp.RIGHT_ARM_DZ + 1] = ARM_REST
        x[mdp.LEFT_HAND_OPEN] = 1.0
        x[mdp.RIGHT_HAND_OPEN] = 1.0
        x[mdp.ATTENTION] = attention
        self._derive(x)
        return EnvState(tuple(x), stream, 0)

    def from_vector(self, vec, seed: int = 0, tick: int = 0, derive: bool = True) -> EnvState:
        x = [float(v) for v in vec]
        if len(x) != mdp.STATE_DIM:
            raise ValueError("state vector must have 18 entries")
        if derive:
            self._derive(x)
        return EnvState(tuple(x), seed, tick)

    # -- dynamics ------------------------------------------------------

    def step(self, st: EnvState, a: int) -> EnvState:
        a = Action(a)
        c = self.config
        x = list(st.x)
        name = a.name
        if a <= Action.HEAD_DOWN:
            if a == Action.HEAD_LEFT:
                x[mdp.HEAD_PAN] += c.step_head
            elif a == Action.HEAD_RIGHT:
                x[mdp.HEAD_PAN] -= c.step_head
            elif a == Action.HEAD_UP:
                x[mdp.HEAD_TILT] += c.step_head
            else:
                x[mdp.HEAD_TILT] -= c.step_head
            x[mdp.HEAD_PAN] = _clamp(x[mdp.HEAD_PAN], -c.head_pan_limit, c.head_pan_limit)
            x[mdp.HEAD_TILT] = _clamp(x[mdp.HEAD_TILT], -c.head_tilt_limit, c.head_tilt_limit)
        elif a <= Action.BODY_RIGHT:
            h = x[mdp.BODY_HEADING]
            fwd = {Action.BODY_FORWARD: 1, Action.BODY_BACKWARD: -1}.get(a, 0)
            side = {Action.BODY_LEFT: 1, Action.BODY_RIGHT: -1}.get(a, 0)
            x[mdp.BODY_X] += c.step_translate * (fwd * math.cos(h) - side * math.sin(h))
            x[mdp.BODY_Y] += c.step_translate * (fwd * math.sin(h) + side * math.cos(h))
        elif a <= Action.BODY_ROTATE_RIGHT:
            sign = 1 if a == Action.BODY_ROTATE_LEFT else -1
            x[mdp.BODY_HEADING] = _wrap(x[mdp.BODY_HEADING] + sign * c.step_rotate)
        elif a <= Action.RIGHT_ARM_DOWN:
            base = mdp.LEFT_ARM_DX if a <= Action.LEFT_ARM_DOWN else mdp.RIGHT_ARM_DX
            axis, sign = _ARM_AXES[name.rsplit("_", 1)[1].lower()]
            x[base + axis] += sign * c.step_arm
            self._clamp_arm(x, base)
        elif a <= Action.RIGHT_HAND_OPEN:
            idx = mdp.LEFT_HAND_OPEN if name.startswith("LEFT") else mdp.RIGHT_HAND_OPEN
            x[idx] = 1.0 if name.endswith("OPEN") else 0.0
        self._derive(x)
        self._attend(x, st.seed, st.tick)
        return EnvState(tuple(x), st.seed, st.tick + 1)

    def _clamp_arm(self, x: list, base: int) -> None:
        r = self.config.arm_reach_max
        v = [_clamp(x[base + i], -r, r) for i in range(3)]
        norm = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
        if norm > r:
            v = [vi * r / norm for vi in v]
        x[base:base + 3] = v

    def _derive(self, x: list) -> None:
        """Recompute target distance and the camera projection in place."""
        c = self.config
        dx = c.target_x - x[mdp.BODY_X]
        dy = c.target_y - x[mdp.BODY_Y]
        dz = c.target_z - c.camera_height
        x[mdp.TARGET_DISTANCE] = math.hypot(dx, dy)
        fwd, left, up = self._to_camera(x, dx, dy, dz)
        u = v = 0.0
        visible = 0.0
        if fwd > 1e-12:
            u = -(left / fwd) / self._tan_half
            v = (up / fwd) / self._tan_half
            if abs(u) <= 1.0 and abs(v) <= 1.0:
                visible = 1.0
        if not visible:
            u = v = 0.0
        x[mdp.IMAGE_U] = u
        x[mdp.IMAGE_V] = v
        x[mdp.TARGET_VISIBLE] = visible

    @staticmethod
    def _to_camera(x, dx, dy, dz):
        yaw = x[mdp.BODY_HEADING] + x[mdp.HEAD_PAN]
        pitch = x[mdp.HEAD_TILT]
        cy, sy = math.cos(yaw), math.sin(yaw)
        fx = cy * dx + sy * dy
        left = -sy * dx + cy * dy
        cp, sp = math.cos(pitch), math.sin(pitch)
        fwd = cp * fx + sp * dz
        up = -sp * fx + cp * dz
        return fwd, left, up

    def gaze_error(self, x) -> float:
        """Angle between the camera axis and the direction to the human's face."""
        c = self.config
        dx = c.face_x - x[mdp.BODY_X]
        dy = c.face_y - x[mdp.BODY_Y]
        dz = c.face_z - c.camera_height
        fwd, left, up = self._to_camera(x, dx, dy, dz)
        norm = math.sqrt(fwd * fwd + left * left + up * up)
        return math.acos(_clamp(fwd / norm, -1.0, 1.0)) if norm > 0 else 0.0

    def _attend(self, x: list, seed: int, tick: int) -> None:
        if self.gaze_error(x) < self.config.gaze_tolerance:
            x[mdp.ATTENTION] = 1.0
        elif stream_uniform(seed, tick) < self.config.attention_flip_prob:
            x[mdp.ATTENTION] = 1.0 - x[mdp.ATTENTION]

    # -- reward and bookkeeping -----------------------------------------

    def reward(self, st: EnvState | np.ndarray) -> float:
        x = st.x if isinstance(st, EnvState) else st
        c = self.config
        d = x[mdp.TARGET_DISTANCE]
        center = 1.0 - (abs(x[mdp.IMAGE_U]) + abs(x[mdp.IMAGE_V])) / 2 if x[mdp.TARGET_VISIBLE] else 0.0
        closed = x[mdp.LEFT_HAND_OPEN] < 0.5 or x[mdp.RIGHT_HAND_OPEN] < 0.5
        penalty = 1.0 if closed and d > c.grasp_distance else 0.0
        r = c.w_dist * math.exp(-d / c.dist_scale) + c.w_center * center - c.w_hand_penalty * penalty
        if c.w_grasp and closed and d <= c.grasp_distance:
            if not c.social_rule_enabled or x[mdp.ATTENTION] >= 0.5:
                r += c.w_grasp
        return _clamp(r, 0.0, 1.0)

    def hand_position(self, x, left: bool) -> tuple[float, float, float]:
        c = self.config
        base = mdp.LEFT_ARM_DX if left else mdp.RIGHT_ARM_DX
        sx, sy = x[base], x[base + 1] + (c.shoulder_offset if left else -c.shoulder_offset)
        h = x[mdp.BODY_HEADING]
        return (
            x[mdp.BODY_X] + math.cos(h) * sx - math.sin(h) * sy,
            x[mdp.BODY_Y] + math.sin(h) * sx + math.cos(h) * sy,
            c.shoulder_height + x[base + 2],
        )

    def is_success(self, st: EnvState | np.ndarray) -> bool:
        """A closed hand near the object, within grasp distance (and attended, if required)."""
        x = st.x if isinstance(st, EnvState) else st
        c = self.config
        if x[mdp.TARGET_DISTANCE] > c.grasp_distance:
            return False
        if c.social_rule_enabled and x[mdp.ATTENTION] < 0.5:
            return False
        for left, bit in ((True, mdp.LEFT_HAND_OPEN), (False, mdp.RIGHT_HAND_OPEN)):
            if x[bit] < 0.5:
                hx, hy, hz = self.hand_position(x, left)
                if math.dist((hx, hy, hz), (c.target_x, c.target_y, c.target_z)) <= 0.10:
                    return True
        return False

    def observe(self, st: EnvState) -> np.ndarray:
        return np.array(st.x)

    def derive(self, vec) -> np.ndarray:
        """Return a copy of ``vec`` with distance and camera features recomputed."""
        x = [float(v) for v in vec]
        self._derive(x)
        return np.array(x)

    # -- snapshots -------------------------------------------------------

    def snapshot(self, st: EnvState) -> bytes:
        body = _SNAP.pack(_MAGIC, *st.x, st.seed & _MASK64, st.tick, 0)
        return body[:-4] + struct.pack("<I", zlib.crc32(body[:-4]))

    def restore(self, token: bytes) -> EnvState:
        if not isinstance(token, (bytes, bytearray)) or len(token) != _SNAP.size:
            raise ValueError("corrupted snapshot")
        magic, *rest = _SNAP.unpack(token)
        if magic != _MAGIC or zlib.crc32(bytes(token[:-4])) != rest[-1]:
            raise ValueError("corrupted snapshot")
        return EnvState(tuple(rest[:18]), rest[18], rest[19])


def load_env_config(path: str | Path) -> EnvConfig:
    """Read ``key = value`` lines (``#`` comments allowed) into an EnvConfig."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        values[key] = value
    return env_config_from_mapping(values)


def env_config_from_mapping(values: dict) -> EnvConfig:
    types = {f.name: f.type for f in fields(EnvConfig)}
    kwargs = {}
    for key, value in values.items():
        if key not in types:
            raise ValueError(f"unknown env key {key!r}")
        if types[key] in ("bool", bool):
            kwargs[key] = _parse_bool(value)
        else:
            kwargs[key] = float(value)
    return replace(EnvConfig(), **kwargs)


def env_config_lines(cfg: EnvConfig) -> list[str]:
    return [f"{f.name} = {getattr(cfg, f.name)!r}".replace("True", "true").replace("False", "false")
            for f in fields(cfg)]


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def dump_trajectory(env: HandoverEnv, start: EnvState, actions, path: str | Path) -> EnvState:
    """Replay ``actions`` from ``start`` and write one CSV row per step."""
    st = start
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", *mdp.STATE_FIELDS, "action", "reward"])
        for i, a in enumerate(actions):
            st = env.step(st, a)
            w.writerow([i, *(repr(v) for v in st.x), int(a), repr(env.reward(st))])
    return st
