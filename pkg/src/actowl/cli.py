"""Command-line entry points.

``run`` executes batch experiments in-process and writes the metrics CSV
plus the aggregate JSON; ``serve`` hosts the session API; ``validate``
checks a scenario file; the ``session`` group is a thin HTTP client for a
running service. Every flag has a config-file equivalent (flags win), and
the effective run configuration is echoed to a sidecar file next to the
metrics so results stay reproducible.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .dialogue import LlmHttpBackend
from .harness import (
    ABLATIONS,
    ALL_STRATEGIES,
    TrialConfig,
    load_scenario,
    mock_backend_for,
    run_experiment,
    validate_scenario_dict,
    write_aggregate_json,
    write_metrics_csv,
)

_RUN_DEFAULTS = {
    "strategy": "ig-max",
    "trials": 20,
    "seed": 0,
    "particles": 100,
    "pseudo_samples": 10,
    "ig_mode": "sampled",
    "backend": "mock",
    "llm_endpoint": None,
    "ablation": "none",
    "misclassify": [],
    "jobs": 1,
    "metrics_out": "metrics.csv",
    "aggregate_out": "aggregate.json",
}


@click.group()
def main():
    """Active ownership learning experiments and services."""


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(data) - set(_RUN_DEFAULTS) - {"scenario"}
    if unknown:
        raise click.BadParameter(f"unknown config keys: {sorted(unknown)}", param_hint="--config")
    return data


def _effective(flag_values: dict, file_values: dict) -> dict:
    # flag > config file > default
    merged = dict(_RUN_DEFAULTS)
    merged.update(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


@main.command("run")
@click.option("--scenario", "scenario_path", default=None,
              help="Scenario name (exp1/exp2/exp3) or JSON path.")
@click.option("--strategy", default=None,
              help="Comma-separated strategies: " + ",".join(ALL_STRATEGIES))
@click.option("--trials", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--particles", type=int, default=None, help="Particle count R.")
@click.option("--pseudo-samples", type=int, default=None, help="Pseudo-answer draws J.")
@click.option("--ig-mode", type=click.Choice(["sampled", "exact"]), default=None)
@click.option("--backend", type=click.Choice(["mock", "llm"]), default=None)
@click.option("--llm-endpoint", default=None)
@click.option("--ablation", type=click.Choice(ABLATIONS), default=None)
@click.option("--misclassify", multiple=True,
              help="CLASS=shared|owned forced classification (repeatable).")
@click.option("--jobs", type=int, default=None, help="Parallel trial workers.")
@click.option("--metrics-out", default=None)
@click.option("--aggregate-out", default=None)
@click.option("--config", "config_path", default=None, help="JSON config file.")
def cmd_run(scenario_path, strategy, trials, seed, particles, pseudo_samples, ig_mode,
            backend, llm_endpoint, ablation, misclassify, jobs, metrics_out,
            aggregate_out, config_path):
    """Run experiment trials and write metrics CSV + aggregate JSON."""
    file_values = _load_config_file(config_path)
    effective = _effective({
        "strategy": strategy, "trials": trials, "seed": seed, "particles": particles,
        "pseudo_samples": pseudo_samples, "ig_mode": ig_mode, "backend": backend,
        "llm_endpoint": llm_endpoint, "ablation": ablation,
        "misclassify": list(misclassify) or None, "jobs": jobs,
        "metrics_out": metrics_out, "aggregate_out": aggregate_out,
    }, file_values)
    scenario_path = scenario_path or file_values.get("scenario")
    if not scenario_path:
        raise click.BadParameter("a scenario is required", param_hint="--scenario")

    try:
        scenario = load_scenario(scenario_path)
    except FileNotFoundError:
        raise click.BadParameter(f"scenario not found: {scenario_path}", param_hint="--scenario")
    except ValueError as exc:
        raise click.BadParameter(str(exc), param_hint="--scenario")

    strategies = [s.strip() for s in effective["strategy"].split(",") if s.strip()]
    for name in strategies:
        if name not in ALL_STRATEGIES:
            raise click.BadParameter(f"unknown strategy {name!r}", param_hint="--strategy")

    overrides = {}
    for item in effective["misclassify"]:
        cls, _, kind = item.partition("=")
        if kind not in ("shared", "owned"):
            raise click.BadParameter(f"bad misclassify entry {item!r}", param_hint="--misclassify")
        overrides[cls] = kind

    config = TrialConfig(
        n_particles=effective["particles"],
        n_pseudo=effective["pseudo_samples"],
        ig_mode=effective["ig_mode"],
        ablation=effective["ablation"],
        classification_overrides=overrides,
    )
    if effective["backend"] == "llm":
        if not effective["llm_endpoint"]:
            raise click.BadParameter("--llm-endpoint is required with --backend llm")
        dialogue_backend = LlmHttpBackend(effective["llm_endpoint"])
    else:
        dialogue_backend = mock_backend_for(scenario)

    try:
        rows, aggregate = run_experiment(
            scenario, strategies, effective["trials"], effective["seed"], config,
            backend=dialogue_backend, jobs=effective["jobs"])
    except Exception as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)

    metrics_path = Path(effective["metrics_out"])
    aggregate_path = Path(effective["aggregate_out"])
    write_metrics_csv(rows, metrics_path)
    write_aggregate_json(aggregate, aggregate_path)
    sidecar = metrics_path.with_suffix(metrics_path.suffix + ".config.json")
    sidecar.write_text(json.dumps({"scenario": scenario.name, **effective}, indent=2) + "\n",
                       encoding="utf-8")
    click.echo(f"wrote {metrics_path} ({len(rows)} rows), {aggregate_path}, {sidecar}")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
@click.option("--backend", type=click.Choice(["mock", "llm"]), default="mock")
@click.option("--llm-endpoint", default=None)
@click.option("--snapshot-dir", default=None, help="Persist session snapshots here.")
def cmd_serve(host, port, backend, llm_endpoint, snapshot_dir):
    """Serve the live teaching-session HTTP API."""
    import uvicorn

    from .service import create_app

    app = create_app(backend_kind=backend, snapshot_dir=snapshot_dir,
                     llm_endpoint=llm_endpoint)
    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except SystemExit:
        raise
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command("validate")
@click.argument("scenario_path")
def cmd_validate(scenario_path):
    """Check a scenario file against all invariants."""
    path = Path(scenario_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        click.echo(f"error: cannot read {scenario_path}: {exc}", err=True)
        sys.exit(1)
    try:
        data = json.loads(text)
    except ValueError as exc:
        click.echo(f"error: invalid JSON: {exc}", err=True)
        sys.exit(1)
    problems = validate_scenario_dict(data)
    if problems:
        for problem in problems:
            click.echo(f"violation: {problem}")
        sys.exit(1)
    click.echo(f"{scenario_path}: valid")


@main.group("session")
@click.option("--url", default="http://127.0.0.1:8000", help="Service base URL.")
@click.pass_context
def cmd_session(ctx, url):
    """Drive a live session over HTTP (thin client)."""
    from .client import SessionClient

    ctx.obj = SessionClient(url)


@cmd_session.command("create")
@click.argument("scenario")
@click.pass_obj
def session_create(client, scenario):
    handle = client.create(scenario)
    click.echo(json.dumps(handle, indent=2))


@cmd_session.command("state")
@click.argument("session_id")
@click.pass_obj
def session_state(client, session_id):
    click.echo(json.dumps(client.state(session_id), indent=2))


@cmd_session.command("ask")
@click.argument("session_id")
@click.pass_obj
def session_ask(client, session_id):
    click.echo(json.dumps(client.ask(session_id), indent=2))


@cmd_session.command("answer")
@click.argument("session_id")
@click.argument("text")
@click.option("--as", "responding_user", required=True, help="Responding user name.")
@click.pass_obj
def session_answer(client, session_id, text, responding_user):
    click.echo(json.dumps(client.answer(session_id, text, responding_user), indent=2))


if __name__ == "__main__":
    main()
