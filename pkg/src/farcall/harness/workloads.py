"""Benchmark workloads: stencil kernels generated as mini-IR source at
a requested problem size, plus numpy reference implementations.

Each kernel is written so the numpy reference performs the exact same
f64 operations in the exact same order as the generated source; the
references therefore agree bit-for-bit with the interpreter (asserted
at small sizes in the test suite) and stand in for it as the output
oracle at sizes where tree-walking would take minutes.

Array contents are set up by the harness, not by IR code: entry
functions only call their kernel, so the kernel is the lone offload
candidate and setup cost never pollutes the timed region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "Workload",
    "WORKLOADS",
    "jacobi2d_source",
    "jacobi2d_arrays",
    "jacobi2d_reference",
    "fdtd2d_source",
    "fdtd2d_arrays",
    "fdtd2d_reference",
]


# ---------------------------------------------------------------------------
# jacobi2d: two-buffer 5-point stencil time stepping


def jacobi2d_source(n: int, steps: int) -> str:
    if n < 3 or steps < 1:
        raise ValueError("jacobi2d needs n >= 3, steps >= 1")
    g = f"f64[{n}][{n}]"
    return f"""\
# Two-buffer 5-point Jacobi smoothing on an {n}x{n} grid, {steps} sweeps.
func kernel(A: {g}, B: {g}) -> void {{
  loop t in [0, {steps}) step 1 {{
    loop i in [1, {n - 1}) step 1 {{
      loop j in [1, {n - 1}) step 1 {{
        B[i][j] = 0.2 * (A[i][j] + A[i][j - 1] + A[i][j + 1] + A[i + 1][j] + A[i - 1][j])
      }}
    }}
    loop i in [1, {n - 1}) step 1 {{
      loop j in [1, {n - 1}) step 1 {{
        A[i][j] = 0.2 * (B[i][j] + B[i][j - 1] + B[i][j + 1] + B[i + 1][j] + B[i - 1][j])
      }}
    }}
  }}
  return
}}
func main(A: {g}, B: {g}) -> f64 {{
  call kernel(A, B)
  return A[{n // 2}][{n // 2}]
}}
"""


def jacobi2d_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    i = np.arange(n, dtype=np.float64)[:, None]
    j = np.arange(n, dtype=np.float64)[None, :]
    a = (i * (j + 2.0) + 2.0) / n
    b = (i * (j + 3.0) + 3.0) / n
    return a, b


def jacobi2d_reference(a: np.ndarray, b: np.ndarray, steps: int) -> None:
    """In-place numpy twin of the generated kernel; the sums are
    parenthesized to reproduce the source's left-to-right order."""
    for _ in range(steps):
        b[1:-1, 1:-1] = 0.2 * (
            (((a[1:-1, 1:-1] + a[1:-1, :-2]) + a[1:-1, 2:]) + a[2:, 1:-1])
            + a[:-2, 1:-1]
        )
        a[1:-1, 1:-1] = 0.2 * (
            (((b[1:-1, 1:-1] + b[1:-1, :-2]) + b[1:-1, 2:]) + b[2:, 1:-1])
            + b[:-2, 1:-1]
        )


# ---------------------------------------------------------------------------
# fdtd2d: 2-D finite-difference time-domain field update


def fdtd2d_source(n: int, steps: int) -> str:
    if n < 2 or steps < 1:
        raise ValueError("fdtd2d needs n >= 2, steps >= 1")
    g = f"f64[{n}][{n}]"
    return f"""\
# 2-D FDTD field update on an {n}x{n} grid, {steps} time steps.
func kernel(ex: {g}, ey: {g}, hz: {g}, fict: f64[{steps}]) -> void {{
  loop t in [0, {steps}) step 1 {{
    loop j in [0, {n}) step 1 {{
      ey[0][j] = fict[t]
    }}
    loop i in [1, {n}) step 1 {{
      loop j in [0, {n}) step 1 {{
        ey[i][j] = ey[i][j] - 0.5 * (hz[i][j] - hz[i - 1][j])
      }}
    }}
    loop i in [0, {n}) step 1 {{
      loop j in [1, {n}) step 1 {{
        ex[i][j] = ex[i][j] - 0.5 * (hz[i][j] - hz[i][j - 1])
      }}
    }}
    loop i in [0, {n - 1}) step 1 {{
      loop j in [0, {n - 1}) step 1 {{
        hz[i][j] = hz[i][j] - 0.7 * (ex[i][j + 1] - ex[i][j] + ey[i + 1][j] - ey[i][j])
      }}
    }}
  }}
  return
}}
func main(ex: {g}, ey: {g}, hz: {g}, fict: f64[{steps}]) -> f64 {{
  call kernel(ex, ey, hz, fict)
  return hz[{n // 2}][{n // 2}]
}}
"""


def fdtd2d_arrays(n: int, steps: int) \
        -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    i = np.arange(n, dtype=np.float64)[:, None]
    j = np.arange(n, dtype=np.float64)[None, :]
    ex = i * (j + 1.0) / n
    ey = i * (j + 2.0) / n
    hz = i * (j + 3.0) / n
    fict = np.arange(steps, dtype=np.float64)
    return ex, ey, hz, fict


def fdtd2d_reference(ex: np.ndarray, ey: np.ndarray, hz: np.ndarray,
                     fict: np.ndarray, steps: int) -> None:
    for t in range(steps):
        ey[0, :] = fict[t]
        ey[1:, :] = ey[1:, :] - 0.5 * (hz[1:, :] - hz[:-1, :])
        ex[:, 1:] = ex[:, 1:] - 0.5 * (hz[:, 1:] - hz[:, :-1])
        hz[:-1, :-1] = hz[:-1, :-1] - 0.7 * (
            ((ex[:-1, 1:] - ex[:-1, :-1]) + ey[1:, :-1]) - ey[:-1, :-1]
        )


# ---------------------------------------------------------------------------
# Registry


@dataclass(frozen=True)
class Workload:
    """A named benchmark program: source generator, initial array
    builder, and an in-place numpy reference used as the output oracle."""

    name: str
    source: Callable[[int, int], str]
    arrays: Callable[[int, int], tuple[np.ndarray, ...]]
    reference: Callable[..., None]  # (*arrays, steps) -> None, in place

    def build(self, n: int, steps: int) -> tuple[str, tuple[np.ndarray, ...]]:
        return self.source(n, steps), self.arrays(n, steps)


WORKLOADS: dict[str, Workload] = {
    "jacobi2d": Workload(
        "jacobi2d",
        jacobi2d_source,
        lambda n, steps: jacobi2d_arrays(n),
        lambda a, b, steps: jacobi2d_reference(a, b, steps),
    ),
    "fdtd2d": Workload(
        "fdtd2d",
        fdtd2d_source,
        fdtd2d_arrays,
        fdtd2d_reference,
    ),
}
