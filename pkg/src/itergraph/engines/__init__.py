"""The three execution engines: classic MapReduce, map-side-join MapReduce and BSP."""

from .bsp import bsp_run
from .common import ENGINES, RunResult, run_engine
from .mr import mr_run
from .mr2 import mr2_run

__all__ = ["ENGINES", "RunResult", "bsp_run", "mr2_run", "mr_run", "run_engine"]
