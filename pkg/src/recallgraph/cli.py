"""Command-line entry points for recording, planning, recall and evaluation."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .errors import RecallGraphError
from .harness import available_templates, generate_scenario, load_noise_profiles, perturb_stream
from .memory import MemoryStore, resolve_data_root
from .perception import parse_event_stream
from .reasoning import infer_task_plan
from .report import write_report
from .service import EngineConfig, SessionService, load_suite

logger = logging.getLogger(__name__)


def _service(data_dir: str | None, config_path: str | None = None) -> SessionService:
    config = EngineConfig()
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            config = EngineConfig.from_mapping(json.load(fh))
    return SessionService(MemoryStore(resolve_data_root(data_dir)), config)


@click.group()
@click.option("--data-dir", default=None, help="Storage root (overrides RECALLGRAPH_DATA).")
@click.option("--config", "config_path", default=None, help="JSON config with threshold overrides.")
@click.option("-v", "--verbose", is_flag=True, help="Log at INFO level.")
@click.pass_context
def main(ctx, data_dir, config_path, verbose):
    """Record everyday task episodes and replay them as live guidance."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    ctx.obj = {"data_dir": data_dir, "config_path": config_path}


@main.command()
@click.argument("stream_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--title", required=True)
@click.option("--location", default="")
@click.pass_context
def record(ctx, stream_file, title, location):
    """Ingest an event-stream file as a new titled episode."""
    service = _service(ctx.obj["data_dir"], ctx.obj["config_path"])
    try:
        meta = service.ingest_recording(Path(stream_file).read_bytes(), title, location)
    except RecallGraphError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"stored {meta.id}: {meta.title!r} at {meta.location!r}, {meta.duration} frames")


@main.command()
@click.argument("episode_id")
@click.option("--out", "out_path", default=None, help="Plan file destination (default <id>.plan).")
@click.pass_context
def plan(ctx, episode_id, out_path):
    """Infer and export the step plan of a stored episode."""
    service = _service(ctx.obj["data_dir"], ctx.obj["config_path"])
    try:
        episode = service.store.load_into_working_memory(episode_id)
        task_plan = infer_task_plan(episode, service.config.tracker)
    except RecallGraphError as exc:
        raise click.ClickException(str(exc)) from exc
    body = {
        "episode_id": task_plan.episode_id,
        "entities": sorted(task_plan.entities),
        "steps": [
            {
                "index": step.index,
                "description": step.description,
                "span": list(step.span),
                "required_triples": sorted(list(t) for t in step.required_triples),
                "postcondition_triples": sorted(list(t) for t in step.postcondition_triples),
            }
            for step in task_plan.steps
        ],
    }
    text = json.dumps(body, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    destination = Path(out_path) if out_path else Path(f"{episode_id}.plan")
    destination.write_text(text, "utf-8")
    click.echo(text, nl=False)
    click.echo(f"wrote {destination}", err=True)


@main.command()
@click.argument("episode_id")
@click.option("--events", "events_file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--interactive", is_flag=True, help="Read event lines from stdin.")
@click.pass_context
def recall(ctx, episode_id, events_file, interactive):
    """Run a recall session over an event stream, printing guidance."""
    if not events_file and not interactive:
        raise click.UsageError("provide --events FILE or --interactive")
    service = _service(ctx.obj["data_dir"], ctx.obj["config_path"])
    try:
        created = service.create_session({"episode_id": episode_id})
    except RecallGraphError as exc:
        raise click.ClickException(str(exc)) from exc
    session_id = created["session_id"]
    click.echo(f"session {session_id} on {created['chosen']['title']!r}")

    def feed(chunk: bytes) -> None:
        result = service.ingest_event_stream(session_id, chunk)
        for cmd in result["commands"]:
            target = f" -> {cmd['target']}" if "target" in cmd else ""
            text = f" {cmd['text']!r}" if "text" in cmd else ""
            click.echo(f"[t={cmd['issued_at']}] {cmd['kind']}{target}{text}")
        snap = result["snapshot"]
        click.echo(
            f"step={snap['current_step']} off_task={snap['off_task']} confidence={snap['confidence']}"
        )

    if events_file:
        feed(Path(events_file).read_bytes())
    else:
        for line in sys.stdin:
            if line.strip():
                feed(line.encode("utf-8"))
    final = service.session_state(session_id)
    click.echo(f"final: {final['metrics']['steps_completed']}/{final['metrics']['steps_total']} steps")


@main.command()
@click.option("--suite", default="default", help="Suite file path or the bundled 'default'.")
@click.option("--seed", "base_seed", default=0, type=int, help="Added to every row seed.")
@click.option("--out", "out_dir", default="eval_out", help="Report directory.")
@click.option("--profiles", "profiles_path", default=None, help="Extra noise profile JSON.")
@click.option("--figures/--no-figures", default=True, help="Render PNG charts beside the table.")
@click.pass_context
def eval(ctx, suite, base_seed, out_dir, profiles_path, figures):
    """Run the replay evaluation suite and write table plus figures."""
    import tempfile

    try:
        runs = load_suite(suite)
    except (OSError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc
    profiles = load_noise_profiles(profiles_path)
    with tempfile.TemporaryDirectory(prefix="recallgraph-eval-") as tmp:
        service = SessionService(MemoryStore(tmp), EngineConfig())
        rows = service.run_replay_eval(runs, base_seed=base_seed, profiles=profiles)
    artifacts = write_report(rows, out_dir, figures=figures)
    click.echo(artifacts["txt"].read_text("utf-8"), nl=False)
    click.echo(f"wrote {', '.join(str(p) for p in artifacts.values())}", err=True)


@main.command()
@click.argument("template")
@click.option("--seed", default=1, type=int)
@click.option("--profile", "profile_name", default="clean")
@click.option("--out", "out_path", default="-", help="Stream destination ('-' for stdout).")
def generate(template, seed, profile_name, out_path):
    """Emit a synthetic recording stream for a bundled scenario template."""
    try:
        bundle = generate_scenario(template, seed)
    except RecallGraphError as exc:
        raise click.ClickException(f"{exc} (templates: {', '.join(available_templates())})") from exc
    stream = bundle.stream
    if profile_name != "clean":
        profiles = load_noise_profiles()
        if profile_name not in profiles:
            raise click.ClickException(f"unknown profile {profile_name!r}")
        stream = perturb_stream(stream, profiles[profile_name], seed)
    if out_path == "-":
        sys.stdout.buffer.write(stream)
    else:
        Path(out_path).write_bytes(stream)
        click.echo(f"wrote {out_path} ({bundle.truth.total_frames} frames)", err=True)


@main.command()
@click.option("--port", default=8765, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--data-dir", "data_dir", default=None, help="Storage root for this server.")
@click.pass_context
def serve(ctx, port, host, data_dir):
    """Serve the HTTP API (episodes, sessions, SSE stream)."""
    import uvicorn

    from .api import create_app

    service = _service(data_dir or ctx.obj["data_dir"], ctx.obj["config_path"])
    uvicorn.run(create_app(service), host=host, port=port, log_level="warning")


@main.command()
@click.argument("stream_file", type=click.Path(exists=True, dir_okay=False))
def inspect(stream_file):
    """Summarize an event stream: frames, events per kind."""
    frames = parse_event_stream(Path(stream_file).read_bytes())
    kinds: dict[str, int] = {}
    for frame in frames:
        for event in frame.events:
            kinds[event.kind] = kinds.get(event.kind, 0) + 1
    click.echo(f"{len(frames)} frames, {sum(kinds.values())} events")
    for kind in sorted(kinds):
        click.echo(f"  {kind}: {kinds[kind]}")


if __name__ == "__main__":
    main()
