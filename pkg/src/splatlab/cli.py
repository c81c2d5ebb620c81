"""``lab`` command line interface.

The CLI is a thin client of the lab service: every command speaks HTTP
to the FastAPI app. With ``--server`` (or LAB_SERVER) it talks to a
remote instance; otherwise it mounts the app in-process, so no daemon is
needed for local work.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

from .config import parse_override


def _client(server: str):
    if server:
        return httpx.Client(base_url=server.rstrip("/"), timeout=None)
    from starlette.testclient import TestClient

    from .service import app
    return TestClient(app)


def _overrides_dict(overrides) -> dict:
    out = {}
    for kv in overrides:
        key, value = parse_override(kv)
        out[key] = value
    return out


def _fail(resp) -> None:
    try:
        detail = resp.json().get("detail", resp.text)
    except Exception:
        detail = resp.text
    raise click.ClickException(f"server returned {resp.status_code}: {detail}")


server_option = click.option(
    "--server", envvar="LAB_SERVER", default="", metavar="URL",
    help="Lab service URL; defaults to an in-process instance.",
)


@click.group()
def main():
    """Optimizer lab for 2D Gaussian splatting experiments."""


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8421, show_default=True)
def serve(host, port):
    """Start the lab service."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port)


@main.command()
@server_option
def presets(server):
    """List experiment presets and their arms."""
    with _client(server) as client:
        resp = client.get("/presets")
        if resp.status_code != 200:
            _fail(resp)
        for p in resp.json():
            arms = ", ".join(a["name"] for a in p["arms"])
            click.echo(f"{p['name']:<12} [{arms}]  {p['description']}")


@main.command()
@click.option("--preset", required=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(), metavar="DIR")
@click.option("--scene", "scene_file", type=click.Path(exists=True), default=None,
              help="Flat key=value config applied before overrides.")
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--arm", "arms", multiple=True, help="Run only these arms.")
@click.option("--tap", type=click.Choice(["moments"]), default=None,
              help="Also emit the per-attribute moment statistics CSV.")
@click.option("--detach", is_flag=True, help="Queue the run and return a job id.")
@server_option
def run(preset, seed, out_dir, scene_file, overrides, arms, tap, detach, server):
    """Run every arm of a preset and write outputs to DIR."""
    body = {
        "preset": preset, "seed": seed, "out_dir": out_dir,
        "scene_file": scene_file, "overrides": _overrides_dict(overrides),
        "arms": list(arms) or None, "tap_moments": tap == "moments",
        "wait": not detach,
    }
    with _client(server) as client:
        resp = client.post("/runs", json=body)
        if resp.status_code != 200:
            _fail(resp)
        job = resp.json()
        if detach:
            click.echo(f"queued job {job['job_id']}")
            return
        result = job["result"]
        click.echo(f"preset {result['preset']} seed {result['seed']} "
                   f"baseline {result['baseline_arm']}")
        for name, arm in sorted(result["arms"].items()):
            f = arm["final"]
            click.echo(
                f"  {name:<8} iter={f['iter']} psnr={f['psnr']:.3f} "
                f"ssim={f['ssim']:.4f} np={f['np']} na={f['na']} nd={f['nd']}"
            )
        click.echo(f"outputs: {result['out_dir']}")


@main.command()
@click.argument("dirs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, help="Emit the raw comparison JSON.")
@server_option
def compare(dirs, as_json, server):
    """Compare summaries across output directories (first dir anchors deltas)."""
    with _client(server) as client:
        resp = client.post("/compare", json={"dirs": [str(d) for d in dirs]})
        if resp.status_code != 200:
            _fail(resp)
        comp = resp.json()
    if as_json:
        click.echo(json.dumps(comp, indent=1))
        return
    from .outputs import format_comparison
    click.echo(format_comparison(comp))


@main.command()
@click.option("--tap", required=True, type=click.Choice(["moments"]))
@click.option("--preset", required=True)
@click.option("--arm", default=None)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(), metavar="DIR")
@click.option("--scene", "scene_file", type=click.Path(exists=True), default=None)
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE")
@server_option
def trace(tap, preset, arm, seed, out_dir, scene_file, overrides, server):
    """Run one arm with a statistics tap and emit its CSV."""
    body = {
        "tap": tap, "preset": preset, "arm": arm, "seed": seed,
        "out_dir": out_dir, "scene_file": scene_file,
        "overrides": _overrides_dict(overrides),
    }
    with _client(server) as client:
        resp = client.post("/trace", json=body)
        if resp.status_code != 200:
            _fail(resp)
        doc = resp.json()
    click.echo(f"{doc['preset']}/{doc['arm']}: {doc['n_rows']} rows")
    click.echo(doc["moments_csv"])


if __name__ == "__main__":
    sys.exit(main())
