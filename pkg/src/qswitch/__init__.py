"""Distributed BSA allocation and bi-path reservation for memoryless switched quantum networks."""

from .analytics import RunSummary, summarize, summarize_result, sweep
from .discovery import BsaTable, BsaTableEntry, compute_bsa_table
from .protocol import MergedBsaEntry, ProtocolConfig, merge_tables
from .simnet import SimConfig, SimResult, Simulation, generate_traffic, run
from .topology import (
    DPHD42,
    PRESETS,
    SPHD20,
    NodeKind,
    QFlyParams,
    Topology,
    generate_qfly,
    load_topology,
    neighbors,
    serialize_topology,
)

__version__ = "0.1.0"

__all__ = [
    "BsaTable", "BsaTableEntry", "DPHD42", "MergedBsaEntry", "NodeKind", "PRESETS", "ProtocolConfig",
    "QFlyParams", "RunSummary", "SPHD20", "SimConfig", "SimResult", "Simulation", "Topology",
    "compute_bsa_table", "generate_qfly", "generate_traffic", "load_topology", "merge_tables",
    "neighbors", "run", "serialize_topology", "summarize", "summarize_result", "sweep",
]
