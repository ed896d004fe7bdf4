"""Shared non-hypothesis helpers for the execution test suites."""

from __future__ import annotations

import numpy as np

from farcall import ir
from farcall.interp import Interpreter, InterpError, Value


def make_args(f: ir.Function, rng: np.random.Generator, *,
              int_lo: int = 0, int_hi: int = 25) -> list[Value]:
    """Fresh argument Values for any function signature. Integer data
    defaults to a small nonnegative range so data-driven subscripts in
    the corpus stay in bounds."""
    args: list[Value] = []
    for _, vt in f.params:
        if vt.is_array:
            if vt.base == ir.Scalar.I64:
                data = rng.integers(int_lo, int_hi, size=vt.shape, dtype=np.int64)
            else:
                data = rng.standard_normal(vt.shape)
            args.append(Value.array(vt, data))
        elif vt.base == ir.Scalar.I64:
            args.append(Value.i64(int(rng.integers(1, 20))))
        else:
            args.append(Value.f64(float(rng.standard_normal())))
    return args


def clone_args(args: list[Value]) -> list[Value]:
    return [Value.array(v.vt, v.raw.copy()) if v.vt.is_array else v
            for v in args]


def run_or_fault(interp: Interpreter, entry: str, args: list[Value]):
    """(result, fault_text): exactly one side is meaningful."""
    try:
        result, _ = interp.run(entry, args)
        return result, None
    except InterpError as e:
        return None, str(e)
