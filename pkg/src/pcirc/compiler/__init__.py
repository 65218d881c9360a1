from .blocks import BlockLayout, detect_blocks
from .build import CompileConfig, compile_circuit, layerize
from .ir import CompiledCircuit
from .partition import PartitionPlan, partition_layer, round_child_counts

__all__ = [
    "BlockLayout",
    "CompileConfig",
    "CompiledCircuit",
    "compile_circuit",
    "detect_blocks",
    "layerize",
    "PartitionPlan",
    "partition_layer",
    "round_child_counts",
]
