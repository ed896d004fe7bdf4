"""Benchmark harness: workload generators, reference implementations,
and timed local/remote runs."""

from .bench import (  # noqa: F401
    BenchError,
    BenchReport,
    BenchSpec,
    csv_text,
    physical_core_count,
    render_table,
    run_benchmark,
    write_csv,
)
from .workloads import (  # noqa: F401
    WORKLOADS,
    Workload,
    fdtd2d_arrays,
    fdtd2d_reference,
    fdtd2d_source,
    jacobi2d_arrays,
    jacobi2d_reference,
    jacobi2d_source,
)
