"""Command-line client for the experiment runners.

Verbs mirror the service endpoints: solve, oracle, inequalities, gauss,
sweep, plus serve to start the HTTP service. By default a verb executes
in-process through the same runner functions the service calls; pass
--server to send the validated config to a running service instead. Either
route produces identical bytes on disk.

Exit codes: 0 converged/pass, 2 diverged or failed checks (diagnostic, not a
crash), 1 configuration or I/O error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import pydantic

from .config import ExperimentConfig, SweepConfig
from .experiments import RunOutcome, run_gauss, run_inequalities, run_oracle_compare, run_solve, run_sweep

_RUNNERS = {
    "solve": run_solve,
    "oracle": run_oracle_compare,
    "inequalities": run_inequalities,
    "gauss": run_gauss,
}


def _load_config(path: str, model):
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}") from exc
    try:
        return model.model_validate(raw)
    except pydantic.ValidationError as exc:
        lines = [f"invalid config {path}:"]
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"])
            lines.append(f"  {loc}: {err['msg']}")
        raise click.ClickException("\n".join(lines)) from exc


def _write_outcome(outcome: RunOutcome, out_dir: str, fmt: str) -> None:
    base = Path(out_dir)
    base.mkdir(parents=True, exist_ok=True)
    for name, content in outcome.files.items():
        if fmt == "csv" and name.endswith(".json"):
            continue
        if fmt == "json" and name.endswith(".csv"):
            continue
        target = base / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content)


def _remote(verb: str, server: str, payload: dict) -> RunOutcome:
    import httpx

    response = httpx.post(f"{server.rstrip('/')}/{verb}", json=payload, timeout=600.0)
    if response.status_code != 200:
        raise click.ClickException(f"server returned {response.status_code}: {response.text}")
    body = response.json()
    return RunOutcome(exit_code=body["exit_code"], report=body["report"], files=body["files"])


def _execute(verb: str, config_path: str, out: str, seed: int | None, fmt: str, server: str | None):
    if verb == "sweep":
        cfg = _load_config(config_path, SweepConfig)
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": seed})
        payload = {"config": cfg.model_dump(mode="json")}
        runner = run_sweep
    else:
        cfg = _load_config(config_path, ExperimentConfig)
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": seed})
        payload = {"config": cfg.model_dump(mode="json")}
        runner = _RUNNERS[verb]
    try:
        outcome = _remote(verb, server, payload) if server else runner(cfg)
    except click.ClickException:
        raise
    except (ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc)) from exc
    _write_outcome(outcome, out, fmt)
    status = outcome.report.get("status", "ok" if outcome.exit_code == 0 else "failed")
    click.echo(f"{verb}: {status} (exit {outcome.exit_code}); outputs in {out}")
    sys.exit(outcome.exit_code)


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True, help="JSON config path.")(fn)
    fn = click.option("--out", default="out", show_default=True, help="Output directory.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Override the config seed.")(fn)
    fn = click.option(
        "--format",
        "fmt",
        type=click.Choice(["csv", "json", "both"]),
        default="both",
        show_default=True,
        help="Which output files to write.",
    )(fn)
    fn = click.option("--server", default=None, help="Run via a service URL instead of in-process.")(fn)
    return fn


@click.group()
def main():
    """Solvers and diagnostics for backward stochastic equations on event trees."""


def _register(verb: str, doc: str):
    @main.command(name=verb, help=doc)
    @_common_options
    def _cmd(config_path, out, seed, fmt, server, _verb=verb):
        _execute(_verb, config_path, out, seed, fmt, server)


_register("solve", "Run a configured solve and write the report and iterate table.")
_register("oracle", "Compare a solve against an independent backward-recursion oracle.")
_register("inequalities", "Run the randomized inequality suite and write the pass/fail matrix.")
_register("gauss", "Run the Gaussian Sobolev diagnostics.")
_register("sweep", "Fan out independent solves across worker threads.")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int):
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("bsesolve.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
