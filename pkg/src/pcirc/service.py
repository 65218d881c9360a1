"""HTTP facade over build, compile, train, eval, and bench.

Every operation is a POST with a JSON body; models travel as text in
their file format, datasets and compiled caches as base64 blobs.  A
package error is reported as status 400 with an envelope
``{"error": {"category": ..., "message": ...}}`` so callers can map it
back onto the proper exit code.
"""

from __future__ import annotations

import base64
import binascii

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .bench import bench_model
from .compiler import CompileConfig, compile_circuit
from .compiler.cache import dumps_compiled
from .data import parse_binary
from .errors import FormatError, PcircError
from .modelfile import dumps_model, loads_model
from .runtime import forward, log_likelihood_metrics, metric_line, write_back_params
from .structures import build_structure, parse_structure_config
from .train import TrainConfig, train

__all__ = ["app", "create_app"]

_METRIC_NAMES = {"nll", "bpd", "ppl"}


class BuildRequest(BaseModel):
    config: str
    seed: int | None = None


class BuildResponse(BaseModel):
    model: str
    num_nodes: int
    num_edges: int


class CompileRequest(BaseModel):
    model: str
    block_size: int = 32
    groups: int = 8
    tolerance: float = 0.25


class CompileResponse(BaseModel):
    dump: str
    cache_b64: str
    graph_hash: str


class TrainRequest(BaseModel):
    model: str
    data_b64: str
    epochs: int = 1
    batch_size: int = 256
    em: str = "full"
    alpha: float = 0.01
    pseudocount: float = 0.0
    seed: int = 0
    threads: int | None = None
    block_size: int = 32


class TrainResponse(BaseModel):
    model: str
    log: list[str]
    epoch_ll: list[float]
    notes: list[str] = Field(default_factory=list)


class EvalRequest(BaseModel):
    model: str
    data_b64: str
    metric: str = "nll"
    block_size: int = 32


class EvalResponse(BaseModel):
    name: str
    value: float
    line: str


class BenchRequest(BaseModel):
    model: str
    batch_size: int = 128
    block_sizes: list[int] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64])
    repeats: int = 5
    seed: int = 0


class BenchResponse(BaseModel):
    tsv: str


def _decode_dataset(b64: str):
    try:
        blob = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError):
        raise FormatError("data_b64 is not valid base64") from None
    return parse_binary(blob)


def create_app() -> FastAPI:
    api = FastAPI(title="pcirc", version=__version__)

    @api.exception_handler(PcircError)
    async def _package_error(request: Request, exc: PcircError):
        return JSONResponse(
            status_code=400,
            content={"error": {"category": exc.category, "message": str(exc)}},
        )

    @api.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @api.post("/build", response_model=BuildResponse)
    def build(req: BuildRequest):
        cfg = parse_structure_config(req.config)
        g = build_structure(cfg, seed=req.seed)
        g.validate()
        edges = sum(
            len(getattr(node, "children", ())) for node in g.nodes
        )
        return BuildResponse(model=dumps_model(g), num_nodes=g.num_nodes,
                             num_edges=edges)

    @api.post("/compile", response_model=CompileResponse)
    def compile_(req: CompileRequest):
        g = loads_model(req.model)
        compiled = compile_circuit(
            g,
            CompileConfig(
                block_size=req.block_size,
                max_groups=req.groups,
                tolerance=req.tolerance,
            ),
        )
        return CompileResponse(
            dump=compiled.describe(),
            cache_b64=base64.b64encode(dumps_compiled(compiled)).decode("ascii"),
            graph_hash=compiled.graph_hash,
        )

    @api.post("/train", response_model=TrainResponse)
    def train_(req: TrainRequest):
        g = loads_model(req.model)
        ds = _decode_dataset(req.data_b64)
        compiled = compile_circuit(g, CompileConfig(block_size=req.block_size))
        result = train(
            compiled,
            ds.data,
            TrainConfig(
                epochs=req.epochs,
                batch_size=req.batch_size,
                mode=req.em,
                step_size=req.alpha,
                pseudocount=req.pseudocount,
                seed=req.seed,
                threads=req.threads,
            ),
        )
        write_back_params(compiled, g)
        return TrainResponse(
            model=dumps_model(g),
            log=result.log_lines(),
            epoch_ll=result.epoch_log_likelihood,
            notes=result.notes,
        )

    @api.post("/eval", response_model=EvalResponse)
    def eval_(req: EvalRequest):
        if req.metric not in _METRIC_NAMES:
            raise FormatError(
                f"unknown metric {req.metric!r}; expected one of {sorted(_METRIC_NAMES)}"
            )
        g = loads_model(req.model)
        ds = _decode_dataset(req.data_b64)
        compiled = compile_circuit(g, CompileConfig(block_size=req.block_size))
        lroot, _ = forward(compiled, ds.data)
        stats = log_likelihood_metrics(
            lroot, num_dims=g.num_vars, num_tokens=g.num_vars
        )
        value = stats["perplexity"] if req.metric == "ppl" else stats[req.metric]
        return EvalResponse(
            name=req.metric, value=value, line=metric_line(req.metric, value)
        )

    @api.post("/bench", response_model=BenchResponse)
    def bench_(req: BenchRequest):
        g = loads_model(req.model)
        report = bench_model(
            g,
            batch_size=req.batch_size,
            block_sizes=tuple(req.block_sizes),
            repeats=req.repeats,
            seed=req.seed,
        )
        return BenchResponse(tsv=report.to_tsv())

    return api


app = create_app()
