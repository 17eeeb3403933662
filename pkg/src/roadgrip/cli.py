"""Command line front end.

The pipeline subcommands (generate, train, evaluate, sweep-batches, sfs,
extreme, report) orchestrate the library directly and write everything under
--out. The service subcommands are thin clients: serve hosts the RSU HTTP
app around a trained model, send-report simulates one vehicle traversal and
posts its binary report, advisory fetches the current speed advisory.

Exit codes: 0 on success, 2 on validation failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .config import ConfigError


@click.group()
def main():
    """Collaborative road-friction estimation workbench."""


def _pipeline_options(fn):
    fn = click.option("--out", type=click.Path(file_okay=False), default="out",
                      show_default=True, help="output directory")(fn)
    fn = click.option("--config", "config_path",
                      type=click.Path(exists=True, dir_okay=False), default=None,
                      help="key = value experiment config file")(fn)
    return fn


def _run(fn, config_path, out):
    from .harness import HarnessError, load_config
    try:
        cfg = load_config(config_path)
        result = fn(cfg, Path(out))
    except (HarnessError, ConfigError, FileNotFoundError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(json.dumps(result, indent=2, sort_keys=True))


@main.command()
@_pipeline_options
def generate(config_path, out):
    """Simulate the corpus and write CSVs plus the split manifest."""
    from .harness import cmd_generate
    _run(cmd_generate, config_path, out)


@main.command()
@_pipeline_options
def train(config_path, out):
    """Train global, local, and ablation regressors with k-fold CV."""
    from .harness import cmd_train
    _run(cmd_train, config_path, out)


@main.command()
@_pipeline_options
def evaluate(config_path, out):
    """Score the held-out split and write scatter/MAPE artifacts."""
    from .harness import cmd_evaluate
    _run(cmd_evaluate, config_path, out)


@main.command("sweep-batches")
@_pipeline_options
def sweep_batches(config_path, out):
    """Consensus midpoint error versus batch size."""
    from .harness import cmd_sweep_batches
    _run(cmd_sweep_batches, config_path, out)


@main.command()
@_pipeline_options
def sfs(config_path, out):
    """Greedy sequential feature selection with prefix re-scoring."""
    from .harness import cmd_sfs
    _run(cmd_sfs, config_path, out)


@main.command()
@_pipeline_options
def extreme(config_path, out):
    """Extreme-manoeuvre generalization study."""
    from .harness import cmd_extreme
    _run(cmd_extreme, config_path, out)


@main.command()
@_pipeline_options
def report(config_path, out):
    """Render every available artifact into report/ SVGs with CSV twins."""
    from .report import cmd_report
    _run(cmd_report, config_path, out)


@main.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              default="out/models/global_full.json", show_default=True)
@click.option("--sections", default=None,
              help="comma-separated section names (default: the four normal scenarios)")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option("--min-batch", default=50, show_default=True)
@click.option("--window-s", default=3600.0, show_default=True)
def serve(model_path, sections, host, port, min_batch, window_s):
    """Host the RSU HTTP service around a trained model."""
    import uvicorn

    from .learn import load_model
    from .road import SCENARIO_NAMES, build_scenario, scenario_spec
    from .rsu import RsuStation
    from .service import create_app

    names = (tuple(s.strip() for s in sections.split(",") if s.strip())
             if sections else SCENARIO_NAMES)
    try:
        built = [build_scenario(scenario_spec(n)) for n in names]
        station = RsuStation(built, load_model(model_path),
                             min_batch=min_batch, window_s=window_s)
    except (KeyError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    uvicorn.run(create_app(station), host=host, port=port, log_level="info")


@main.command("send-report")
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--section", required=True, help="section the vehicle traverses")
@click.option("--mu", default=0.5, show_default=True,
              help="base friction of the simulated surface")
@click.option("--wear", default=0.9, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--p-loss", default=0.0, show_default=True,
              help="simulated uplink packet-loss probability")
def send_report(url, section, mu, wear, seed, p_loss):
    """Simulate one traversal and post its kinematic summary report."""
    import httpx

    from .observer import estimate_states
    from .road import build_scenario, scenario_spec
    from .rsu import LinkModel, vehicle_report
    from .vehsim import RunConfig, VehicleParams, simulate_batch

    try:
        spec = scenario_spec(section)
        road = build_scenario(spec)
        cfg = RunConfig(run_id=f"cli-{section}-{seed}", scenario=section,
                        mu_base=float(mu), wear_factor=float(wear),
                        target_speed_kph=spec.rated_speed_kph, seed=int(seed))
        vp = VehicleParams()
        log, truth = simulate_batch(road, vp, [cfg])[0]
        trace = estimate_states(log, road, vp)
        if trace.flagged:
            click.echo("error: the simulated run was flagged; nothing to report",
                       err=True)
            sys.exit(2)
        msg = vehicle_report(trace, section)
        link = LinkModel(p_loss=float(p_loss), seed=int(seed))
        delivery = link.transmit(msg.encode())
        if not delivery.delivered:
            click.echo(json.dumps({"delivered": False,
                                   "latency_ms": delivery.latency_ms}))
            return
        resp = httpx.post(f"{url}/sections/{section}/reports",
                          content=delivery.payload,
                          headers={"content-type": "application/octet-stream"},
                          timeout=30.0)
    except (KeyError, ValueError, httpx.HTTPError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    if resp.status_code != 202:
        click.echo(f"error: server replied {resp.status_code}: {resp.text}",
                   err=True)
        sys.exit(2)
    body = resp.json()
    body.update({"delivered": True, "latency_ms": delivery.latency_ms,
                 "truth_label": truth.mu_label})
    click.echo(json.dumps(body, indent=2, sort_keys=True))


@main.command()
@click.option("--url", default="http://127.0.0.1:8000", show_default=True)
@click.option("--section", required=True)
@click.option("--wire", "wire_path", type=click.Path(dir_okay=False), default=None,
              help="also save the binary advisory message to this path")
def advisory(url, section, wire_path):
    """Fetch the current speed advisory for a section."""
    import httpx

    try:
        resp = httpx.get(f"{url}/sections/{section}/advisory", timeout=30.0)
        if resp.status_code != 200:
            click.echo(f"error: server replied {resp.status_code}: {resp.text}",
                       err=True)
            sys.exit(2)
        click.echo(json.dumps(resp.json(), indent=2, sort_keys=True))
        if wire_path:
            raw = httpx.get(f"{url}/sections/{section}/advisory",
                            params={"wire": "true"}, timeout=30.0)
            Path(wire_path).write_bytes(raw.content)
            click.echo(f"wire message saved to {wire_path}")
    except httpx.HTTPError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
