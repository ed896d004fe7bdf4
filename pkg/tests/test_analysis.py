"""Static pipeline: frequency estimates, candidate selection, region
detection under both alias modes, op counting, and scoring."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from farcall import corpus, ir
from farcall.analysis import (
    AnalysisConfig,
    BlockFreqMap,
    OpCounts,
    Region,
    Weights,
    analyze_program,
    build_type_env,
    count_loop_ops,
    detect_regions,
    estimate_frequencies,
    score_function,
    select_candidates,
)
from farcall.harness import workloads as wl
from farcall.interp import Value, run

from strategies import executable_programs, standard_args


def parse(src):
    return ir.parse_program(src)


def kernel_of(p, name="kernel"):
    return p.function(name)


# ---------------------------------------------------------------------------
# Frequency estimation


def test_constant_nest_frequency_is_product_of_trips():
    p = parse("""\
func main(A: f64[1]) -> f64 {
  loop i in [0, 1000) step 1 {
    loop j in [0, 1000) step 1 {
      A[0] = A[0] + 1.0
    }
  }
  return A[0]
}
""")
    freqs = estimate_frequencies(p)
    assert freqs.get("main", ()) == 1
    assert freqs.get("main", (0,)) == 1_000
    assert freqs.get("main", (0, 0)) == 1_000_000
    assert freqs.function_max("main") == 1_000_000


def test_parameter_bound_uses_default_trip():
    p = parse("""\
func main(A: f64[500], n: i64) -> f64 {
  loop i in [0, n) step 1 {
    A[0] = A[0] + 1.0
  }
  return A[0]
}
""")
    assert estimate_frequencies(p).get("main", (0,)) == 100
    assert estimate_frequencies(p, default_trip=7).get("main", (0,)) == 7


def test_empty_range_has_zero_frequency():
    p = parse("""\
func main(A: f64[2]) -> f64 {
  loop i in [5, 5) step 1 {
    A[1] = 0.0
  }
  return A[0]
}
""")
    freqs = estimate_frequencies(p)
    assert freqs.get("main", (0,)) == 0
    assert freqs.function_max("main") == 1  # the entry block still runs


def test_strided_trip_count_rounds_up():
    p = parse("""\
func main(A: f64[2]) -> f64 {
  loop i in [0, 10) step 3 {
    A[1] = 0.0
  }
  return A[0]
}
""")
    assert estimate_frequencies(p).get("main", (0,)) == 4


@given(executable_programs())
@settings(max_examples=60, deadline=None)
def test_static_estimate_equals_dynamic_count_for_constant_bounds(p):
    """Every bound in these generated programs is a literal, so the
    static estimate must equal the interpreter's measured counts."""
    freqs = estimate_frequencies(p)
    _, stats = run(p, args=standard_args())
    for key, measured in stats.loop_iterations.items():
        assert freqs.freqs[key] == measured


def test_measured_profile_matches_static_on_constant_bounds():
    n, steps = 6, 2
    p = parse(wl.jacobi2d_source(n, steps))
    a, b = wl.jacobi2d_arrays(n)
    g = ir.ValueType(ir.Scalar.F64, (n, n))
    _, stats = run(p, args=[Value.array(g, a), Value.array(g, b)])
    measured = BlockFreqMap.from_exec_stats(stats)
    static = estimate_frequencies(p)
    assert measured.function_max("kernel") == static.function_max("kernel")
    assert measured.get("kernel", (0, 0, 0)) == steps * (n - 2) ** 2


# ---------------------------------------------------------------------------
# Candidate selection


def freq_map(**by_name):
    return BlockFreqMap({(name, (0,)): v for name, v in by_name.items()})


def test_candidate_threshold_is_strict():
    p = parse("""\
func hot() -> i64 {
  loop i in [0, 1000000) step 1 {
    s = 1
  }
  return 0
}
func edge() -> i64 {
  loop i in [0, 10000) step 1 {
    s = 1
  }
  return 0
}
func main() -> i64 {
  call hot()
  call edge()
  return 0
}
""")
    freqs = estimate_frequencies(p)
    assert freqs.function_max("hot") == 1_000_000
    assert freqs.function_max("edge") == 10_000
    assert select_candidates(p, freqs, threshold=10_000) == ["hot"]
    # threshold 0: anything that runs at all clears it
    assert select_candidates(p, freqs, threshold=0) == ["hot", "edge", "main"]


# ---------------------------------------------------------------------------
# Region detection


def test_jacobi_regions_by_alias_mode():
    p = parse(wl.jacobi2d_source(16, 2))
    k = kernel_of(p)
    ignore = detect_regions(k, "ignore")
    assert ignore == [Region("kernel", (), 0, 1)]
    # one region covering the whole time loop, hence both spatial nests
    assert ignore[0].loop_paths(k) == [(0,), (0, 0), (0, 0, 0), (0, 1), (0, 1, 0)]
    # A and B are distinct parameters that could overlap
    assert detect_regions(k, "conservative") == []


def test_fdtd_regions_by_alias_mode():
    p = parse(wl.fdtd2d_source(8, 2))
    k = kernel_of(p)
    assert len(detect_regions(k, "ignore")) == 1
    assert detect_regions(k, "conservative") == []


def test_call_in_loop_body_disqualifies():
    p = parse("""\
func inc(x: f64) -> f64 {
  return x + 1.0
}
func main(A: f64[10]) -> f64 {
  loop i in [0, 10) step 1 {
    v = call inc(0.0)
    A[i] = v
  }
  return A[0]
}
""")
    assert detect_regions(p.function("main"), "ignore") == []


def test_region_boundaries_around_calls():
    p = parse(corpus.load("saxpy"))
    k = kernel_of(p)
    # statements: [c = call prep, loop, return]; the call and return bound the run
    assert detect_regions(k, "ignore") == [Region("kernel", (), 1, 2)]
    assert detect_regions(k, "conservative") == []  # reads x, writes y


def test_single_array_store_survives_conservative():
    p = parse(corpus.load("shift"))
    k = p.function("creep")
    assert detect_regions(k, "conservative") == [Region("creep", (), 0, 1)]


def test_nonaffine_subscript_bounds_the_region():
    p = parse(corpus.load("nonaffine"))
    k = p.function("squares")
    for mode in ("conservative", "ignore"):
        assert detect_regions(k, mode) == [Region("squares", (), 1, 2)]


def test_data_dependent_subscript_bounds_the_region():
    p = parse(corpus.load("indirect"))
    k = p.function("gather")
    assert detect_regions(k, "conservative") == [Region("gather", (), 0, 1)]


def test_data_dependent_loop_bound_disqualifies():
    # such bounds never parse (the validator wants affine bounds), but
    # hand-built loops must not slip into a region either
    i = ir.ScalarRef("i")
    body = ir.Block((
        ir.Store("A", (i,), ir.BinOp("+", ir.Load("A", (i,)), ir.FloatLit(1.0))),
    ))
    loop = ir.Loop("i", ir.IntLit(0), ir.Load("P", (ir.IntLit(0),)), 1, body)
    f = ir.Function(
        "main",
        (("A", ir.ValueType(ir.Scalar.F64, (100,))),
         ("P", ir.ValueType(ir.Scalar.I64, (4,)))),
        None,
        ir.Block((loop,)),
    )
    assert detect_regions(f, "ignore") == []


def test_parameter_loop_bound_qualifies():
    p = parse("""\
func work(A: f64[100], n: i64) -> void {
  loop i in [0, n) step 1 {
    A[i] = A[i] + 1.0
  }
}
func main(A: f64[100], n: i64) -> void {
  call work(A, n)
}
""")
    assert detect_regions(p.function("work"), "ignore") == [Region("work", (), 0, 1)]


def test_straight_line_run_is_not_a_region():
    p = parse("""\
func main(x: f64) -> f64 {
  a = x + 1.0
  b = a * 2.0
  return b
}
""")
    assert detect_regions(p.function("main"), "ignore") == []


def test_region_found_inside_disqualified_loop():
    p = parse("""\
func helper() -> f64 {
  return 1.0
}
func main(A: f64[8][8]) -> f64 {
  loop i in [0, 8) step 1 {
    v = call helper()
    loop j in [0, 8) step 1 {
      A[i][j] = A[i][j] + 1.0
    }
  }
  return A[0][0]
}
""")
    # outer loop has a call, but its body holds a clean nested loop
    regions = detect_regions(p.function("main"), "conservative")
    assert regions == [Region("main", (0,), 1, 2)]
    assert regions[0].loop_paths(p.function("main")) == [(0, 1)]


@pytest.mark.parametrize("name", sorted(["saxpy", "shift", "triangular", "intops",
                                         "nonaffine", "indirect", "scalar_sum"]))
def test_ignore_regions_superset_of_conservative(name):
    p = parse(corpus.load(name))
    for f in p.functions:
        cons = set(detect_regions(f, "conservative"))
        ign = set(detect_regions(f, "ignore"))
        assert cons <= ign


@given(executable_programs())
@settings(max_examples=60, deadline=None)
def test_ignore_regions_superset_of_conservative_generated(p):
    for f in p.functions:
        assert set(detect_regions(f, "conservative")) <= set(detect_regions(f, "ignore"))


def test_alias_mode_validated():
    p = parse("func main() -> i64 {\n return 0\n}")
    with pytest.raises(ValueError, match="alias_mode"):
        detect_regions(p.function("main"), "sometimes")


# ---------------------------------------------------------------------------
# Operation counting


def test_stencil_body_flop_count():
    p = parse(wl.jacobi2d_source(8, 1))
    k = kernel_of(p)
    types = build_type_env(p, k)
    nest = k.body.statements[0].body.statements[0]  # first spatial nest
    assert count_loop_ops(nest, types) == OpCounts(iops=0, flops=5)


def test_chain_descent_reaches_innermost_body():
    p = parse("""\
func main(A: i64[4][4]) -> i64 {
  loop i in [0, 4) step 1 {
    loop j in [0, 4) step 1 {
      A[i][j] = A[i][j] + 1
    }
  }
  return A[0][0]
}
""")
    f = p.function("main")
    types = build_type_env(p, f)
    outer = f.body.statements[0]
    assert count_loop_ops(outer, types) == OpCounts(iops=1, flops=0)


def test_imperfect_nest_counts_own_body_only():
    p = parse(wl.jacobi2d_source(8, 1))
    k = kernel_of(p)
    types = build_type_env(p, k)
    t_loop = k.body.statements[0]  # body = two sibling nests: not a chain
    assert count_loop_ops(t_loop, types) == OpCounts(0, 0)


def test_empty_body_counts_zero():
    loop = ir.Loop("i", ir.IntLit(0), ir.IntLit(4), 1, ir.Block(()))
    assert count_loop_ops(loop, {}) == OpCounts(0, 0)


def test_subscript_arithmetic_not_counted():
    p = parse("""\
func main(A: f64[16]) -> f64 {
  loop i in [0, 8) step 1 {
    A[2 * i + 1] = A[2 * i] + 1.0
  }
  return A[0]
}
""")
    f = p.function("main")
    types = build_type_env(p, f)
    assert count_loop_ops(f.body.statements[0], types) == OpCounts(iops=0, flops=1)


def test_mixed_type_ops_counted_separately():
    p = parse("""\
func main(A: f64[8], P: i64[8]) -> f64 {
  loop i in [0, 8) step 1 {
    k = i * 3 - 2
    A[i] = A[i] * 0.5
  }
  return A[0]
}
""")
    f = p.function("main")
    types = build_type_env(p, f)
    assert count_loop_ops(f.body.statements[0], types) == OpCounts(iops=2, flops=1)


# ---------------------------------------------------------------------------
# Scoring


THREE_OP_NEST = """\
func main(A: f64[10], n: i64) -> f64 {
  s = 0
  loop i in [0, 10) step 1 {
    loop j in [0, 10) step 1 {
      s = s + 1
      A[i] = A[i] * 0.5 + 0.25
    }
  }
  return A[0]
}
"""


def analyze_one(src, mode="conservative", weights=Weights()):
    p = parse(src)
    f = p.functions[0]
    regions = detect_regions(f, mode)
    freqs = estimate_frequencies(p)
    return score_function(f, regions, freqs, weights, program=p)


def test_score_worked_example_is_300():
    # 1 iop + 2 flops in a body that runs 100 times, unit weights
    report = analyze_one(THREE_OP_NEST)
    assert report.total == 300
    by_path = {row.path: row for row in report.rows}
    assert by_path[(1,)].score == 0  # outer body holds only the inner loop
    assert by_path[(1, 0)].ops == OpCounts(iops=1, flops=2)
    assert by_path[(1, 0)].freq == 100
    assert by_path[(1, 0)].score == 300
    assert report.region_scores == (Fraction(300),)


def test_zero_regions_scores_zero():
    report = analyze_one("""\
func main(A: f64[4], B: f64[4]) -> f64 {
  loop i in [0, 4) step 1 {
    B[i] = A[i]
  }
  return B[0]
}
""", mode="conservative")
    assert report.rows == ()
    assert report.total == 0
    assert not report.exportable


def test_weight_annihilates_op_class():
    src = """\
func main(P: i64[200]) -> i64 {
  loop i in [0, 200) step 1 {
    P[i] = P[i] * 3 + P[i] / 2 - 1
  }
  return P[0]
}
"""
    assert analyze_one(src, weights=Weights.of(0, 1)).total == 0
    assert analyze_one(src, weights=Weights.of(1, 0)).total == 4 * 200


def test_score_is_exact_rational():
    report = analyze_one(THREE_OP_NEST, weights=Weights.of("0.1", "0.2"))
    assert report.total == Fraction(1, 10) * 100 + Fraction(2, 10) * 200
    assert isinstance(report.total, Fraction)


@given(st.fractions(min_value=0, max_value=10),
       st.fractions(min_value=0, max_value=10),
       st.fractions(min_value=0, max_value=10),
       st.fractions(min_value=0, max_value=10),
       st.fractions(min_value=0, max_value=8))
@settings(max_examples=80, deadline=None)
def test_score_bilinear_in_weights(i1, f1, i2, f2, k):
    p = parse(corpus.load("nonaffine"))
    f = p.function("squares")
    regions = detect_regions(f, "ignore")
    freqs = estimate_frequencies(p)

    def total(w):
        return score_function(f, regions, freqs, w, program=p).total

    w1, w2 = Weights(i1, f1), Weights(i2, f2)
    assert total(Weights(i1 + i2, f1 + f2)) == total(w1) + total(w2)
    assert total(Weights(k * i1, k * f1)) == k * total(w1)


@pytest.mark.parametrize("small,big", [(8, 9), (16, 64)])
def test_score_monotone_in_constant_bounds(small, big):
    def jacobi_total(n):
        p = parse(wl.jacobi2d_source(n, 4))
        k = kernel_of(p)
        return score_function(
            k, detect_regions(k, "ignore"), estimate_frequencies(p), program=p
        ).total

    assert jacobi_total(small) <= jacobi_total(big)


# ---------------------------------------------------------------------------
# Whole-program analysis over the bundled corpus


CORPUS_EXPECTATIONS = {
    # name -> (function, conservative regions, ignore regions,
    #          candidate, total score under ignore at unit weights)
    "scalar_sum": ("accumulate", 1, 1, True, 4 * 200_000),
    "saxpy": ("kernel", 0, 1, True, 2 * 40_000),
    "shift": ("creep", 1, 1, True, 2 * 29_999),
    "triangular": ("lowtri", 0, 1, True, 2 * 300 * 100),
    "intops": ("mix", 1, 1, True, 3 * 25_000),
    "nonaffine": ("squares", 1, 1, True, 2 * 20_000),
    "indirect": ("gather", 1, 1, True, 1 * 30_000),
}


@pytest.mark.parametrize("name", sorted(CORPUS_EXPECTATIONS))
def test_corpus_analysis_expectations(name):
    fname, n_cons, n_ign, candidate, total = CORPUS_EXPECTATIONS[name]
    p = parse(corpus.load(name))
    cons = analyze_program(p, AnalysisConfig(alias_mode="conservative"))
    ign = analyze_program(p, AnalysisConfig(alias_mode="ignore"))
    assert len(cons[fname].regions) == n_cons
    assert len(ign[fname].regions) == n_ign
    assert cons[fname].candidate == ign[fname].candidate == candidate
    assert ign[fname].report.total == total
    assert ign[fname].exportable
    # entry functions only call kernels: never exportable themselves
    assert not ign["main"].exportable
    assert ign["main"].report.total == 0


def test_helpers_are_not_exportable():
    p = parse(corpus.load("saxpy"))
    analyses = analyze_program(p, AnalysisConfig(alias_mode="ignore"))
    assert not analyses["prep"].candidate
    assert not analyses["prep"].exportable


def test_candidate_without_regions_is_not_exportable():
    # hot loop, but the subscript is data-dependent everywhere
    p = parse("""\
func main(A: f64[50000], P: i64[50000]) -> f64 {
  loop i in [0, 50000) step 1 {
    A[P[i]] = 1.0
  }
  return A[0]
}
""")
    analyses = analyze_program(p, AnalysisConfig(alias_mode="ignore"))
    assert analyses["main"].candidate
    assert analyses["main"].regions == ()
    assert not analyses["main"].exportable


def test_analyze_with_measured_profile():
    src = corpus.load("triangular").replace("300", "40").replace("299", "39")
    p = parse(src)
    import numpy as np
    g = ir.ValueType(ir.Scalar.F64, (40, 40))
    v = ir.ValueType(ir.Scalar.F64, (40,))
    args = [Value.zeros(g), Value.array(v, np.ones(40)), Value.array(v, np.ones(40))]
    _, stats = run(p, args=args)
    measured = BlockFreqMap.from_exec_stats(stats)
    analyses = analyze_program(p, AnalysisConfig(threshold=500), freqs=measured)
    # measured inner trip is the exact triangle count, not 40 * DEFAULT_TRIP
    assert analyses["lowtri"].max_freq == 40 * 41 // 2
    assert analyses["lowtri"].candidate
