"""Benchmark harness: BenchSpec validation, report math, timed runs in
all three modes, CSV/table output, and the CLI front end."""

from __future__ import annotations

import csv
import io
import socket
from fractions import Fraction

import pytest

from farcall import cli
from farcall.harness import (
    WORKLOADS,
    BenchError,
    BenchReport,
    BenchSpec,
    csv_text,
    physical_core_count,
    render_table,
    run_benchmark,
    write_csv,
)
from farcall.server.net import Server, ServerConfig

# hot enough to cross the candidate threshold: 12 * 30 * 30 > 10,000
N, STEPS = 32, 12


@pytest.fixture(scope="module")
def server():
    with Server(ServerConfig(port=0, workers=2)) as srv:
        srv.start()
        yield srv


# ---------------------------------------------------------------------------
# BenchSpec validation


def spec(**kw):
    base = dict(program="jacobi2d", n=N, steps=STEPS)
    base.update(kw)
    return BenchSpec(**base)


@pytest.mark.parametrize("kw", [
    dict(program="heat3d"),
    dict(n=2),
    dict(steps=0),
    dict(mode="remote"),
    dict(repetitions=0),
    dict(alias_mode="strict"),
    dict(c=Fraction(-1)),
    dict(workers=0),
])
def test_spec_rejects_bad_fields(kw):
    with pytest.raises(ValueError):
        spec(**kw)


def test_spec_defaults():
    s = spec()
    assert (s.mode, s.repetitions, s.alias_mode, s.c, s.workers) == \
        ("local", 3, "conservative", Fraction(0), 1)


# ---------------------------------------------------------------------------
# BenchReport math


def report(mode="remote-full", full=(2.0, 4.0, 3.0), raw=(1.0, 2.0, 1.5),
           baseline=None, note=""):
    return BenchReport(spec(mode=mode), tuple(full), tuple(raw),
                       baseline_seconds=baseline, note=note)


def test_report_rejects_raw_above_full():
    with pytest.raises(ValueError, match="exceeds full"):
        report(full=(1.0,), raw=(1.5,))


def test_report_rejects_length_mismatch():
    with pytest.raises(ValueError):
        report(full=(1.0, 2.0), raw=(1.0,))


def test_report_comm_is_difference():
    r = report()
    assert r.comm_seconds == (1.0, 2.0, 1.5)


def test_report_headline_series_follows_mode():
    assert report(mode="remote-full").headline_seconds == (2.0, 4.0, 3.0)
    assert report(mode="remote-raw").headline_seconds == (1.0, 2.0, 1.5)


def test_report_aggregates():
    r = report()
    assert r.avg_seconds == pytest.approx(3.0)
    assert (r.min_seconds, r.max_seconds, r.median_seconds) == (2.0, 4.0, 3.0)
    assert r.min_seconds <= r.avg_seconds <= r.max_seconds
    assert r.median_full == 3.0 and r.median_raw == 1.5
    assert r.raw_share == pytest.approx(0.5)


def test_report_speedups_need_baseline():
    r = report()
    assert r.raw_speedup is None and r.overall_speedup is None
    r = report(baseline=6.0)
    assert r.raw_speedup == pytest.approx(4.0)
    assert r.overall_speedup == pytest.approx(2.0)


# ---------------------------------------------------------------------------
# Timed runs


def test_local_mode_is_its_own_baseline():
    r = run_benchmark(spec(n=16, steps=4, repetitions=3))
    assert r.full_seconds == r.raw_seconds
    assert r.comm_seconds == (0.0,) * 3
    assert r.raw_share == 1.0
    assert r.overall_speedup == 1.0 and r.raw_speedup == 1.0
    assert r.min_seconds <= r.avg_seconds <= r.max_seconds


def test_remote_full_invariants(server):
    r = run_benchmark(
        spec(mode="remote-full", repetitions=3, alias_mode="ignore"),
        server=("127.0.0.1", server.port))
    assert len(r.full_seconds) == 3
    for f, raw in zip(r.full_seconds, r.raw_seconds):
        assert 0 < raw <= f
    assert r.min_seconds <= r.avg_seconds <= r.max_seconds
    assert r.note == ""
    assert r.raw_speedup is None


def test_remote_with_measured_baseline(server):
    r = run_benchmark(
        spec(mode="remote-raw", repetitions=2, alias_mode="ignore"),
        server=("127.0.0.1", server.port), measure_baseline=True)
    assert r.baseline_seconds is not None and r.baseline_seconds > 0
    # compiled kernels beat the tree-walking interpreter handily
    assert r.raw_speedup is not None and r.raw_speedup > 1
    assert r.overall_speedup is not None
    assert r.headline_seconds == r.raw_seconds


def test_in_process_server_spinup():
    r = run_benchmark(spec(mode="remote-full", repetitions=1,
                           alias_mode="ignore", workers=2))
    assert r.raw_seconds[0] <= r.full_seconds[0]


def test_fdtd_conservative_flags_no_candidates(server):
    r = run_benchmark(
        spec(program="fdtd2d", mode="remote-full", repetitions=1),
        server=("127.0.0.1", server.port))
    assert "no offload candidates" in r.note
    assert r.full_seconds == r.raw_seconds


def test_huge_c_keeps_calls_local(server):
    r = run_benchmark(
        spec(mode="remote-full", repetitions=1, alias_mode="ignore",
             c=Fraction(10**12)),
        server=("127.0.0.1", server.port))
    assert "kept every call local" in r.note
    assert r.full_seconds == r.raw_seconds


def test_unreachable_server_is_hard_failure():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        dead = s.getsockname()[1]
    with pytest.raises(BenchError, match="unreachable"):
        run_benchmark(spec(mode="remote-full", alias_mode="ignore"),
                      server=("127.0.0.1", dead))


def test_raw_share_rises_with_steps(server):
    """More steps mean more kernel work against a fixed marshalling
    cost, so the raw share must climb."""
    quick = run_benchmark(
        spec(steps=12, mode="remote-full", repetitions=5, alias_mode="ignore"),
        server=("127.0.0.1", server.port))
    long = run_benchmark(
        spec(steps=120, mode="remote-full", repetitions=5, alias_mode="ignore"),
        server=("127.0.0.1", server.port))
    assert long.raw_share > quick.raw_share


def test_verification_runs_before_timing(monkeypatch):
    """A run whose output disagrees with the reference must fail with
    the verification-run diagnostic, not produce a report."""
    wl = WORKLOADS["jacobi2d"]

    def bad_reference(a, b, steps):
        wl.reference(a, b, steps)
        a[0, 0] += 1.0

    monkeypatch.setitem(
        WORKLOADS, "jacobi2d",
        type(wl)(wl.name, wl.source, wl.arrays, bad_reference))
    with pytest.raises(BenchError, match="verification run"):
        run_benchmark(spec(n=8, steps=2, repetitions=1))


# ---------------------------------------------------------------------------
# Rendering


def test_csv_roundtrip(tmp_path):
    r = report(baseline=6.0, note="x")
    rows = list(csv.DictReader(io.StringIO(csv_text(r))))
    assert len(rows) == 3
    assert [float(row["full_seconds"]) for row in rows] == [2.0, 4.0, 3.0]
    assert [float(row["raw_seconds"]) for row in rows] == [1.0, 2.0, 1.5]
    assert [float(row["comm_seconds"]) for row in rows] == [1.0, 2.0, 1.5]
    assert rows[0]["mode"] == "remote-full" and rows[0]["note"] == "x"
    assert float(rows[0]["baseline_seconds"]) == 6.0
    path = tmp_path / "out.csv"
    write_csv(r, path)
    assert path.read_bytes().decode() == csv_text(r)


def test_table_mentions_key_figures():
    text = render_table(report(baseline=6.0, note="hello"))
    assert "median" in text and "raw share=50.0%" in text
    assert "raw speedup=4.00x" in text
    assert "note: hello" in text
    assert render_table(report()).count("n/a") == 1


def test_physical_core_count_positive():
    assert isinstance(physical_core_count(), int)
    assert physical_core_count() >= 1


# ---------------------------------------------------------------------------
# CLI


def test_cli_score_prints_tables(tmp_path, capsys):
    src, _ = WORKLOADS["jacobi2d"].build(N, STEPS)
    path = tmp_path / "j.bir"
    path.write_text(src)
    assert cli.main(["score", str(path), "--alias", "ignore"]) == 0
    out = capsys.readouterr().out
    assert "== kernel ==" in out and "exportable: yes" in out
    assert cli.main(["score", str(path)]) == 0
    out = capsys.readouterr().out
    assert "exportable: no" in out  # conservative drops the two-array region


def test_cli_score_threshold_flag(tmp_path, capsys):
    src, _ = WORKLOADS["jacobi2d"].build(N, STEPS)
    path = tmp_path / "j.bir"
    path.write_text(src)
    assert cli.main(["score", str(path), "--alias", "ignore",
                     "--threshold", str(10**9)]) == 0
    assert "candidate: no" in capsys.readouterr().out


def test_cli_run_remote(tmp_path, capsys, server):
    src, _ = WORKLOADS["jacobi2d"].build(N, STEPS)
    path = tmp_path / "j.bir"
    path.write_text(src)
    rc = cli.main(["run", str(path), "--alias", "ignore",
                   "--server", f"127.0.0.1:{server.port}"])
    captured = capsys.readouterr()
    assert rc == 0
    assert "remote calls: kernel=1" in captured.out
    assert "offload: installed" in captured.err
    assert captured.out.startswith("result: f64 ")


def test_cli_run_force_local(tmp_path, capsys, server):
    src, _ = WORKLOADS["jacobi2d"].build(N, STEPS)
    path = tmp_path / "j.bir"
    path.write_text(src)
    rc = cli.main(["run", str(path), "--alias", "ignore", "--force-local",
                   "--server", f"127.0.0.1:{server.port}"])
    assert rc == 0
    assert "remote calls: none" in capsys.readouterr().out


def test_cli_run_seeded_inputs_deterministic(tmp_path, capsys, server):
    src, _ = WORKLOADS["jacobi2d"].build(N, STEPS)
    path = tmp_path / "j.bir"
    path.write_text(src)
    outs = []
    for _ in range(2):
        assert cli.main(["run", str(path), "--alias", "ignore",
                         "--server", f"127.0.0.1:{server.port}"]) == 0
        outs.append(capsys.readouterr().out.splitlines()[0])
    assert outs[0] == outs[1]


def test_cli_run_missing_entry(tmp_path, capsys):
    path = tmp_path / "p.bir"
    path.write_text("func f() -> void {\n  return\n}\n")
    assert cli.main(["run", str(path), "--entry", "nope",
                     "--server", "127.0.0.1:1"]) == 2
    assert "no function 'nope'" in capsys.readouterr().err


def test_cli_bench_writes_csv(tmp_path, capsys, server):
    out = tmp_path / "bench.csv"
    rc = cli.main(["bench", "--program", "jacobi2d", "--n", str(N),
                   "--steps", str(STEPS), "--mode", "remote-full",
                   "--reps", "2", "--alias", "ignore",
                   "--server", f"127.0.0.1:{server.port}",
                   "--csv", str(out)])
    captured = capsys.readouterr()
    assert rc == 0
    assert "median" in captured.out
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 2 and rows[0]["program"] == "jacobi2d"


def test_cli_bench_local(capsys):
    rc = cli.main(["bench", "--program", "jacobi2d", "--n", "16",
                   "--steps", "4", "--reps", "1"])
    assert rc == 0
    assert "mode=local" in capsys.readouterr().out


def test_cli_bench_rejects_unknown_program(capsys):
    with pytest.raises(SystemExit):
        cli.main(["bench", "--program", "heat3d", "--n", "8", "--steps", "2"])


def test_cli_bad_program_file(tmp_path, capsys):
    path = tmp_path / "broken.bir"
    path.write_text("func broken(\n")
    with pytest.raises(SystemExit, match="broken.bir"):
        cli.main(["score", str(path)])


def test_cli_parser_defaults():
    args = cli.build_parser().parse_args(["serve"])
    assert args.port == 47701 and args.vector_width == 1
    args = cli.build_parser().parse_args(["run", "x.bir"])
    assert args.server == ("127.0.0.1", 47701)
    assert args.c == Fraction(0)
    args = cli.build_parser().parse_args(
        ["score", "x.bir"])
    assert args.threshold == 10000 and args.alias == "conservative"
    assert args.c_iops == Fraction(1) and args.default_trip == 100


def test_cli_fraction_and_hostport_parsing():
    args = cli.build_parser().parse_args(
        ["run", "x.bir", "--c", "3/7", "--server", "farhost:1234"])
    assert args.c == Fraction(3, 7)
    assert args.server == ("farhost", 1234)
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["run", "x.bir", "--c", "abc"])
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["run", "x.bir", "--server", "nope"])
