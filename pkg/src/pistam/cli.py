"""Command-line entry point: ``pistam {train,compare,eval,heatmap,social-demo,list-actions}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import mdp
from .config import ConfigError, dump_config, load_config
from .env import HandoverEnv
from .loop import (SIGNATURE_STREAM, RunArtifacts, RunConfig, eye_contact_prior, evaluate_policy, probe_state,
                   run)
from .mdp import Action
from .policy import PolicyModel
from .stam import AffordanceSignature, derive_seed, fit_signatures, rasterize

log = logging.getLogger("pistam")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

METRIC_COLUMNS = ["iteration", "mean_reward", "std_reward", "evals_affordance", "evals_random",
                  "evals_total", "wall_ms", "nodes", "draws", "admitted", "dataset_size"]


def setup_logging() -> None:
    level = {"off": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("PISTAM_LOG", "off").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def write_artifacts(art: RunArtifacts, cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config").write_text(dump_config(cfg))
    for i, p in enumerate(art.policies):
        if isinstance(p, PolicyModel):
            p.save(out / f"policy_{i}.json")
    for i, sig in enumerate(art.signatures):
        if i == 0 or not cfg.baseline_mode:
            sig.save(out / f"signature_{i}.json")
    art.dataset.to_csv(out / "dataset.csv")
    _write_csv(out / "metrics.csv", METRIC_COLUMNS,
               [[m.row()[c] for c in METRIC_COLUMNS] for m in art.metrics])
    evals = [(0, art.initial_reward)] + [(m.iteration, m.reward) for m in art.metrics]
    _write_csv(out / "evaluation.csv", ["iteration", "mean", "std", "min", "max", "success_rate"],
               [[i, r.mean, r.std, r.min, r.max, r.success_rate] for i, r in evals])
    rows = []
    for m in art.metrics:
        for t, s in enumerate(m.roots, 1):
            rows.append([m.iteration, t, s.evals_affordance, s.evals_random, s.evals_total,
                         round(s.wallclock_ms, 3), s.nodes, s.draws])
    _write_csv(out / "expansion.csv", ["iteration", "root_index", "evals_affordance", "evals_random",
                                       "evals_total", "wallclock_ms", "nodes", "draws"], rows)


def _config(config_path, seed) -> RunConfig:
    cfg = load_config(config_path)
    if seed is not None:
        cfg = replace(cfg, master_seed=int(seed))
    return cfg


def _guard(fn):
    """Map configuration errors to exit 2 and any other failure to exit 1."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, click.UsageError) as exc:
            click.echo(f"error: {exc}", err=True)
            return EXIT_USAGE
        except Exception as exc:  # noqa: BLE001
            log.debug("runtime failure", exc_info=True)
            click.echo(f"error: {exc}", err=True)
            return EXIT_RUNTIME
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_guard
def cmd_train(config_path, out_dir, seed=None) -> int:
    """Run the full loop and write every artifact into ``out_dir``."""
    cfg = _config(config_path, seed)
    art = run(cfg)
    write_artifacts(art, cfg, Path(out_dir))
    return EXIT_OK


def _summary_rows(a: RunArtifacts, b: RunArtifacts):
    def per_node(art):
        nodes = sum(m.stats.nodes for m in art.metrics)
        return sum(m.stats.evals_total for m in art.metrics) / nodes if nodes else 0.0

    def pct(x, y):
        return 100.0 * (1.0 - x / y) if y else 0.0

    ra = a.metrics[-1].reward.mean if a.metrics else a.initial_reward.mean
    rb = b.metrics[-1].reward.mean if b.metrics else b.initial_reward.mean
    wa = sum(m.wall_ms for m in a.metrics)
    wb = sum(m.wall_ms for m in b.metrics)
    return [
        ["final_mean_reward", ra, rb, "ratio", ra / rb if rb else float("nan")],
        ["initial_mean_reward", a.initial_reward.mean, b.initial_reward.mean, "ratio",
         a.initial_reward.mean / b.initial_reward.mean if b.initial_reward.mean else float("nan")],
        ["evals_per_node", per_node(a), per_node(b), "reduction_pct", pct(per_node(a), per_node(b))],
        ["wall_ms", wa, wb, "reduction_pct", pct(wa, wb)],
    ]


@_guard
def cmd_compare(config_path, out_dir, seed=None) -> int:
    """Run the same seeded experiment with and without affordance gating."""
    cfg = _config(config_path, seed)
    out = Path(out_dir)
    gated = run(replace(cfg, baseline_mode=False))
    base = run(replace(cfg, baseline_mode=True))
    write_artifacts(gated, replace(cfg, baseline_mode=False), out / "affordance")
    write_artifacts(base, replace(cfg, baseline_mode=True), out / "baseline")
    (out / "run_config").write_text(dump_config(cfg))
    _write_csv(out / "summary.csv", ["metric", "affordance", "baseline", "comparison", "value"],
               _summary_rows(gated, base))
    return EXIT_OK


@_guard
def cmd_eval(policy_path, config_path=None, trials=10, seed=0, out=None) -> int:
    """Evaluate a saved policy and write summary statistics as CSV."""
    cfg = _config(config_path, None)
    if not Path(policy_path).is_file():
        raise ConfigError(f"policy file not found: {policy_path}")
    policy = PolicyModel.load(policy_path)
    stats = evaluate_policy(policy, HandoverEnv(cfg.env), int(trials), cfg.eval_episode_len, int(seed),
                            cfg.delta_min, cfg.delta_max)
    rows = [["mean", stats.mean], ["std", stats.std], ["min", stats.min], ["max", stats.max],
            ["success_rate", stats.success_rate], ["trials", int(trials)], ["seed", int(seed)]]
    if out is None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows([["statistic", "value"]] + [[k, _fmt(v)] for k, v in rows])
        click.echo(buf.getvalue(), nl=False)
    else:
        _write_csv(Path(out), ["statistic", "value"], rows)
    return EXIT_OK


def heatmap_template(env: HandoverEnv, attention: float = 1.0) -> np.ndarray:
    s = env.reset(0.5, 0.5, seed=0).vector
    s[mdp.ATTENTION] = attention
    return s


@_guard
def cmd_heatmap(signature_path, action, out_csv, cell=0.05, width=24, height=24,
                origin=None, attention=1.0, config_path=None) -> int:
    """Rasterize one action's affordance around the target into a CSV grid."""
    try:
        a = mdp.parse_action(action)
    except ValueError:
        names = ", ".join(x.snake for x in Action)
        raise ConfigError(f"unknown action {action!r}; valid names: {names}") from None
    if not Path(signature_path).is_file():
        raise ConfigError(f"signature file not found: {signature_path}")
    cfg = _config(config_path, None)
    env = HandoverEnv(cfg.env)
    sig = AffordanceSignature.load(signature_path)
    if origin is None:
        origin = (cfg.env.target_x - width * cell / 2, cfg.env.target_y - height * cell / 2)
    grid = rasterize(sig, a, heatmap_template(env, attention), origin, cell, width, height,
                     (cfg.env.target_x, cfg.env.target_y), derive=env.derive)
    grid.to_csv(out_csv)
    return EXIT_OK


@_guard
def cmd_social_demo(out_dir, seed=0, config_path=None) -> int:
    """Fit the eye-contact prior and dump per-action affordance bars."""
    cfg = _config(config_path, seed)
    env = HandoverEnv(cfg.env)
    d0 = eye_contact_prior(env, seed=cfg.master_seed, rho=cfg.rho)
    sig = fit_signatures(d0, cfg.n_components, derive_seed(cfg.master_seed, SIGNATURE_STREAM, 0),
                         projection=cfg.affordance_projection)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config").write_text(dump_config(cfg))
    d0.to_csv(out / "dataset.csv")
    sig.save(out / "signature_0.json")
    for att in (0, 1):
        values = np.exp(sig.log_values(probe_state(env, float(att))))
        _write_csv(out / f"attention{att}.csv", ["action", "name", "value"],
                   [[a, Action(a).snake, float(v)] for a, v in zip(sig.actions, values)])
    return EXIT_OK


def action_table() -> str:
    return "\n".join(f"{int(a):2d} {a.snake}" for a in Action)


def _finish(code: int):
    sys.exit(code)


@click.group(invoke_without_command=True)
@click.option("--config", "config_path", type=click.Path(), default=None, help="Run configuration file.")
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Output directory or file.")
@click.option("--seed", type=int, default=None, help="Master seed override.")
@click.option("--list-actions", is_flag=True, help="Print the action index/name table and exit.")
@click.pass_context
def main(ctx, config_path, out_dir, seed, list_actions):
    """Policy improvement with spatio-temporal affordance maps."""
    setup_logging()
    ctx.obj = {"config": config_path, "out": out_dir, "seed": seed}
    if list_actions:
        click.echo(action_table())
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


def _need_out(ctx, out):
    out = out or ctx.obj["out"]
    if out is None:
        raise click.UsageError("an output location is required (--out)")
    return out


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def train(ctx, config_path, out, seed):
    """Run the learning loop and write artifacts."""
    _finish(cmd_train(config_path or ctx.obj["config"], _need_out(ctx, out),
                      seed if seed is not None else ctx.obj["seed"]))


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--out", "out", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
def compare(ctx, config_path, out, seed):
    """Affordance-gated run versus the all-legal baseline."""
    _finish(cmd_compare(config_path or ctx.obj["config"], _need_out(ctx, out),
                        seed if seed is not None else ctx.obj["seed"]))


@main.command("eval")
@click.argument("policy_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out", type=click.Path(), default=None)
@click.pass_context
def eval_cmd(ctx, policy_path, config_path, trials, seed, out):
    """Evaluate a saved policy over seeded trials."""
    seed = seed if seed is not None else (ctx.obj["seed"] or 0)
    _finish(cmd_eval(policy_path, config_path or ctx.obj["config"], trials, seed, out or ctx.obj["out"]))


@main.command()
@click.argument("signature_path", type=click.Path())
@click.argument("action")
@click.option("--out", "out", type=click.Path(), default=None)
@click.option("--cell", type=float, default=0.05, show_default=True, help="Cell size in meters.")
@click.option("--width", type=int, default=24, show_default=True)
@click.option("--height", type=int, default=24, show_default=True)
@click.option("--origin", type=(float, float), default=None, help="Lower-left corner (x y).")
@click.option("--attention", type=float, default=1.0, show_default=True)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.pass_context
def heatmap(ctx, signature_path, action, out, cell, width, height, origin, attention, config_path):
    """Export the affordance heat-map of one action."""
    _finish(cmd_heatmap(signature_path, action, _need_out(ctx, out), cell, width, height, origin,
                        attention, config_path or ctx.obj["config"]))


@main.command("social-demo")
@click.option("--out", "out", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.pass_context
def social_demo(ctx, out, seed, config_path):
    """Eye-contact prior: per-action affordances with and without attention."""
    seed = seed if seed is not None else (ctx.obj["seed"] or 0)
    _finish(cmd_social_demo(_need_out(ctx, out), seed, config_path or ctx.obj["config"]))


@main.command("list-actions")
def list_actions_cmd():
    """Print the action index/name table."""
    click.echo(action_table())


if __name__ == "__main__":
    main()
