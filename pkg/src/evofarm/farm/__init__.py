"""Gateway/worker evaluation farm: wire protocol, worker host, dispatcher."""

from .gateway import (
    DispatchError,
    Dispatcher,
    EvalJob,
    FarmStats,
    LocalPool,
    RemoteError,
    WorkerClient,
    WorkerInfo,
    WorkerLost,
    dispatch,
    in_process_pool,
)
from .worker import DEFAULT_MODULE_COUNT, WorkerServer, serve_worker

__all__ = [
    "DispatchError",
    "Dispatcher",
    "EvalJob",
    "FarmStats",
    "LocalPool",
    "RemoteError",
    "WorkerClient",
    "WorkerInfo",
    "WorkerLost",
    "dispatch",
    "in_process_pool",
    "DEFAULT_MODULE_COUNT",
    "WorkerServer",
    "serve_worker",
]
