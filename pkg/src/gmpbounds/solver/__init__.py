"""Block conic programs, the embedded interior-point solver and SDPA export."""

from .ipm import ConicSolution, SolverSettings, solve_conic
from .program import ConicProgram, PsdBlock, block_from_entries
from .sdpa import export_sdpa, write_sdpa

__all__ = [
    "ConicProgram",
    "ConicSolution",
    "PsdBlock",
    "SolverSettings",
    "block_from_entries",
    "export_sdpa",
    "solve_conic",
    "write_sdpa",
]
