"""Flat ``key = value`` run configuration with [env], [search] and [run] sections."""

from __future__ import annotations

import configparser
from dataclasses import fields, replace
from pathlib import Path

from .env import EnvConfig, _parse_bool
from .loop import RunConfig
from .uct import SearchConfig


class ConfigError(ValueError):
    pass


_RUN_SKIP = {"search", "env"}


def _coerce(cls_field, raw: str, section: str):
    kind = cls_field.type if isinstance(cls_field.type, str) else cls_field.type.__name__
    try:
        if kind == "bool":
            return _parse_bool(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(int(t) for t in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise ConfigError(f"[{section}] {cls_field.name}: {exc}") from None


def _apply(obj, section: str, items: dict):
    known = {f.name: f for f in fields(obj) if not (section == "run" and f.name in _RUN_SKIP)}
    if section == "search":
        known.pop("seed", None)
    updates = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        updates[key] = _coerce(known[key], raw, section)
    try:
        return replace(obj, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = set(parser.sections()) - {"env", "search", "run"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig()
    env = _apply(cfg.env, "env", dict(parser["env"])) if parser.has_section("env") else cfg.env
    search = _apply(cfg.search, "search", dict(parser["search"])) if parser.has_section("search") else cfg.search
    cfg = replace(cfg, env=env, search=search)
    if parser.has_section("run"):
        cfg = _apply(cfg, "run", dict(parser["run"]))
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(cfg: RunConfig) -> str:
    """Render every setting, so the snapshot alone reproduces the run."""
    lines = ["[env]"]
    lines += [f"{f.name} = {_fmt(getattr(cfg.env, f.name))}" for f in fields(cfg.env)]
    lines += ["", "[search]"]
    lines += [f"{f.name} = {_fmt(getattr(cfg.search, f.name))}" for f in fields(cfg.search) if f.name != "seed"]
    lines += ["", "[run]"]
    lines += [f"{f.name} = {_fmt(getattr(cfg, f.name))}" for f in fields(cfg) if f.name not in _RUN_SKIP]
    return "\n".join(lines) + "\n"
