"""Remote execution half: dependence proofs, schedule construction,
compiled kernels, the worker pool, and the TCP session loop."""

from .dependence import (
    Conflict,
    DependenceVerdict,
    InternalAnalysisError,
    LoopSchedule,
    build_schedule,
    check_loop_parallel,
)
from .engine import (
    ExecutablePart,
    PartRejected,
    ServerInterpreter,
    WorkerPool,
    execute_call,
    optimize,
)
from .net import Server, ServerConfig

__all__ = [
    "Conflict",
    "DependenceVerdict",
    "InternalAnalysisError",
    "LoopSchedule",
    "build_schedule",
    "check_loop_parallel",
    "ExecutablePart",
    "PartRejected",
    "ServerInterpreter",
    "WorkerPool",
    "execute_call",
    "optimize",
    "Server",
    "ServerConfig",
]
