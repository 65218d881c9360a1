"""Command line entry points.

Commands are thin wrappers over the service client: file reading and
writing happens here, all real work happens behind the service
interface (in-process unless ``--server`` or PCIRC_SERVER points at a
running instance).  Exit codes: 0 success, 1 usage, 2 validation,
3 numeric failure.
"""

from __future__ import annotations

import base64
import sys
from pathlib import Path

import click

from . import __version__
from .client import ServiceClient
from .data import load_dataset, to_binary
from .errors import PcircError, UsageError, exit_code_for

__all__ = ["cli", "main"]


def _read_text(path: str, what: str) -> str:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} file not found: {p}")
    return p.read_text()


def _data_b64(path: str) -> str:
    ds = load_dataset(path)
    return base64.b64encode(to_binary(ds)).decode("ascii")


@click.group()
@click.version_option(__version__, prog_name="pcirc")
@click.option(
    "--server",
    envvar="PCIRC_SERVER",
    default=None,
    help="Base URL of a running service; default runs in-process.",
)
@click.pass_context
def cli(ctx, server):
    """Compile and train probabilistic circuits."""
    ctx.obj = server


@cli.command()
@click.argument("config", type=str)
@click.option("-o", "--output", required=True, help="Model file to write.")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.pass_obj
def build(server, config, output, seed):
    """Generate a circuit from a structure CONFIG file."""
    text = _read_text(config, "config")
    with ServiceClient(server) as client:
        resp = client.build(text, seed=seed)
    Path(output).write_text(resp["model"])
    click.echo(f"wrote {output}: {resp['num_nodes']} nodes, {resp['num_edges']} edges")


@cli.command("compile")
@click.argument("model", type=str)
@click.option("-o", "--output", default=None, help="Compiled cache file to write.")
@click.option("--block-size", type=int, default=32, show_default=True)
@click.option("--groups", type=int, default=8, show_default=True,
              help="Maximum kernel groups per layer.")
@click.option("--tol", type=float, default=0.25, show_default=True,
              help="Padding overhead tolerance for layer grouping.")
@click.pass_obj
def compile_cmd(server, model, output, block_size, groups, tol):
    """Compile MODEL and print the layer/group inspection dump."""
    text = _read_text(model, "model")
    with ServiceClient(server) as client:
        resp = client.compile(text, block_size=block_size, groups=groups,
                              tolerance=tol)
    click.echo(resp["dump"])
    if output:
        Path(output).write_bytes(base64.b64decode(resp["cache_b64"]))
        click.echo(f"wrote {output} (circuit {resp['graph_hash'][:16]})")


@cli.command()
@click.argument("model", type=str)
@click.argument("data", type=str)
@click.option("-o", "--output", required=True, help="Trained model file to write.")
@click.option("--epochs", type=int, default=1, show_default=True)
@click.option("--batch-size", type=int, default=256, show_default=True)
@click.option("--em", type=click.Choice(["mini", "full"]), default="full",
              show_default=True)
@click.option("--alpha", type=float, default=0.01, show_default=True,
              help="Mini-batch step size.")
@click.option("--pseudocount", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None, envvar="PCIRC_THREADS",
              help="Worker threads; default uses all hardware threads.")
@click.option("--block-size", type=int, default=32, show_default=True)
@click.pass_obj
def train(server, model, data, output, epochs, batch_size, em, alpha, pseudocount,
          seed, threads, block_size):
    """Train MODEL on DATA with EM and write the updated model."""
    text = _read_text(model, "model")
    with ServiceClient(server) as client:
        resp = client.train(
            text,
            _data_b64(data),
            epochs=epochs,
            batch_size=batch_size,
            em=em,
            alpha=alpha,
            pseudocount=pseudocount,
            seed=seed,
            threads=threads,
            block_size=block_size,
        )
    for note in resp.get("notes", []):
        click.echo(f"note: {note}", err=True)
    for line in resp["log"]:
        click.echo(line)
    Path(output).write_text(resp["model"])
    click.echo(f"wrote {output}")


@cli.command()
@click.argument("model", type=str)
@click.argument("data", type=str)
@click.option("--metric", type=click.Choice(["nll", "bpd", "ppl"]), default="nll",
              show_default=True)
@click.option("--block-size", type=int, default=32, show_default=True)
@click.pass_obj
def eval(server, model, data, metric, block_size):
    """Evaluate MODEL on DATA and print one metric line."""
    text = _read_text(model, "model")
    with ServiceClient(server) as client:
        resp = client.evaluate(text, _data_b64(data), metric=metric,
                               block_size=block_size)
    click.echo(resp["line"])


@cli.command()
@click.argument("model", type=str)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--block-sizes", type=str, default="1,2,4,8,16,32,64",
              show_default=True, help="Comma-separated sweep values.")
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", default=None, help="Write the TSV here instead of stdout.")
@click.pass_obj
def bench(server, model, batch_size, block_sizes, repeats, seed, output):
    """Benchmark MODEL across block sizes; emits a TSV report."""
    text = _read_text(model, "model")
    try:
        sizes = [int(s) for s in block_sizes.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"bad --block-sizes list: {block_sizes!r}") from None
    if not sizes:
        raise UsageError("--block-sizes must name at least one size")
    with ServiceClient(server) as client:
        resp = client.bench(text, batch_size=batch_size, block_sizes=sizes,
                            repeats=repeats, seed=seed)
    if output:
        Path(output).write_text(resp["tsv"])
        click.echo(f"wrote {output}")
    else:
        click.echo(resp["tsv"], nl=False)


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8151, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except PcircError as e:
        click.echo(f"error ({e.category}): {e}", err=True)
        return exit_code_for(e.category)


if __name__ == "__main__":
    sys.exit(main())
