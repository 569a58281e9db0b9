"""Stabilizer Renyi entropy toolkit: exact oracles, circuit dataset
generation, DAG encoding, and a from-scratch dual-branch graph network for
nonstabilizerness estimation."""

from .circuit import Circuit, CircuitMeta, DatasetRecord, Gate, GateKind
from .kernels import BACKEND as KERNEL_BACKEND
from .sim import PauliString, StateVector, run, zero_state
from .sre import SreResult, sre_full, sre_max, sre_of_circuit, sre_product

__version__ = "0.1.0"

__all__ = [
    "Circuit",
    "CircuitMeta",
    "DatasetRecord",
    "Gate",
    "GateKind",
    "KERNEL_BACKEND",
    "PauliString",
    "StateVector",
    "SreResult",
    "run",
    "sre_full",
    "sre_max",
    "sre_of_circuit",
    "sre_product",
    "zero_state",
    "__version__",
]
