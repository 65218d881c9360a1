"""Probabilistic-circuit compiler and block-parallel execution engine."""

from .graph import CircuitGraph, InputNode, ProductNode, SumNode, ValidationReport

__version__ = "0.1.0"

__all__ = [
    "CircuitGraph",
    "CompileConfig",
    "CompiledCircuit",
    "Dataset",
    "InputNode",
    "ProductNode",
    "SumNode",
    "ValidationReport",
    "__version__",
    "backward",
    "compile_circuit",
    "forward",
    "train",
]


def __getattr__(name):
    # Heavier submodules load lazily so importing the graph API stays cheap.
    if name in {"CompileConfig", "CompiledCircuit", "compile_circuit"}:
        from . import compiler

        return getattr(compiler, name)
    if name in {"forward", "backward"}:
        from . import runtime

        return getattr(runtime, name)
    if name == "Dataset":
        from .data import Dataset

        return Dataset
    if name == "train":
        from .train import train

        return train
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
