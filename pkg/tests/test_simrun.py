import io
import json

import pytest

from mindsim.errors import ConfigError, TraceError
from mindsim.simrun import cli
from mindsim.simrun.config import SimConfig, load_config, parse_config_lines, parse_size
from mindsim.simrun.engine import simulate
from mindsim.simrun.generator import GeneratorSpec, generate
from mindsim.simrun.metrics import COLUMNS, csv_text, summary_json
from mindsim.simrun.trace import Op, parse_trace, read_trace, write_trace

TRACE = """\
# two blades sharing one buffer
1,0,1,ALLOC,12288,buf
2,0,1,W,$buf+0x10
3,1,1,R,$buf+0x10
4,0,2,SETPERM,$buf,ro
5,1,2,R,$buf
6,1,2,W,$buf
7,0,1,FREE,$buf
8,1,1,R,$buf
"""


def events(text=TRACE):
    return list(parse_trace(io.StringIO(text)))


# -- configuration -------------------------------------------------------------


def test_parse_size_units():
    assert parse_size("4096") == 4096
    assert parse_size("0x1000") == 4096
    assert parse_size("16KiB") == 16384
    assert parse_size("2m") == 2 << 20


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "mind.cfg"
    path.write_text("# desk scale\ndir-capacity = 300\ninitial-region = 4KiB\nlatency.one-way-hop = 1.5\n")
    cfg = load_config(path, {"initial-region": "8KiB"})
    assert cfg.dir_capacity == 300
    assert cfg.initial_region == 8192
    assert cfg.latency.one_way_hop == 1.5
    assert cfg.latency.fetch == pytest.approx(7.0)


@pytest.mark.parametrize(
    "values, key",
    [
        ({"page-size": "3000"}, "page-size"),
        ({"initial-region": "4MiB"}, "initial-region"),
        ({"loss-rate": "1.0"}, "loss-rate"),
        ({"no-such-key": "1"}, "no-such-key"),
        ({"seed": "abc"}, "seed"),
        ({"latency.one-way-hop": "-1"}, "latency"),
    ],
)
def test_config_errors_name_the_key(values, key):
    with pytest.raises(ConfigError) as exc:
        SimConfig().with_values(values)
    assert exc.value.key == key


def test_config_line_without_equals():
    with pytest.raises(ConfigError):
        parse_config_lines(["dir-capacity 300"])


# -- trace format --------------------------------------------------------------


def test_trace_round_trip():
    evs = events()
    out = io.StringIO()
    write_trace(evs, out)
    assert list(parse_trace(io.StringIO(out.getvalue()))) == evs
    assert [e.op for e in evs] == [Op.ALLOC, Op.W, Op.R, Op.SETPERM, Op.R, Op.W, Op.FREE, Op.R]


@pytest.mark.parametrize(
    "line, fragment",
    [
        ("1,0,1,ZAP,0x0", "unknown op"),
        ("1,0,1,R", "expected"),
        ("1,0,1,ALLOC,0,x", "positive"),
        ("1,0,1,FREE,$x+8", "bare"),
        ("1,0,1,SETPERM,$x,rx", "permission"),
        ("1,0,1,R,zz", "invalid literal"),
    ],
)
def test_malformed_lines_report_line_number(line, fragment):
    with pytest.raises(TraceError) as exc:
        list(parse_trace(io.StringIO(f"# header\n{line}\n")))
    assert exc.value.lineno == 2
    assert fragment in str(exc.value)


def test_seq_must_increase():
    with pytest.raises(TraceError) as exc:
        events("2,0,1,ALLOC,4096,a\n2,0,1,R,$a\n")
    assert exc.value.lineno == 2


# -- engine --------------------------------------------------------------------


def test_empty_trace(small_config):
    result = simulate(small_config, [])
    assert result.rows == []
    assert result.exit_status == 0
    assert csv_text(result.rows) == ",".join(COLUMNS) + "\n"


def test_protection_lifecycle(small_config):
    result = simulate(small_config, events())
    d = result.decisions
    assert d[2] == (True, None) and d[3] == (True, None)
    assert d[5] == (True, None)
    assert d[6] == (False, "permission-mismatch")
    assert d[8] == (False, "no-entry")
    assert result.reads[3] == (0, 2)
    assert result.summary["accesses"] == 3
    assert result.summary["denied"] == 2


def test_unbound_name_is_a_trace_error(small_config):
    with pytest.raises(TraceError):
        simulate(small_config, events("1,0,1,R,$nothing\n"))


def test_failed_allocation_leaves_name_unusable(small_config):
    big = 64 << 20
    result = simulate(small_config, events(f"1,0,1,ALLOC,{big},huge\n"))
    assert result.summary["failed_allocations"] == 1
    with pytest.raises(TraceError):
        simulate(small_config, events(f"1,0,1,ALLOC,{big},huge\n2,0,1,R,$huge\n"))


def test_read_only_sharing_sends_no_invalidations(small_config):
    spec = GeneratorSpec(read_ratio=1.0, sharing_ratio=1.0, working_set=256, blades=8, ops_per_blade=300)
    result = simulate(small_config, generate(spec))
    assert result.summary["invalidations_sent"] == 0
    assert result.summary["accesses"] == 8 * 300


def test_generator_partitions_working_set():
    spec = GeneratorSpec(sharing_ratio=0.25, working_set=1024, blades=4, ops_per_blade=10)
    allocs = [e for e in generate(spec) if e.op is Op.ALLOC]
    assert [e.size // 4096 for e in allocs] == [256, 192, 192, 192, 192]


def test_metrics_are_consistent(small_config):
    config = SimConfig(memory_blades=4, blade_capacity=16 << 20, epoch_ms=0.5)
    spec = GeneratorSpec(read_ratio=0.5, sharing_ratio=0.5, working_set=256, blades=4, ops_per_blade=500)
    result = simulate(config, generate(spec))
    s = result.summary
    rows = result.rows
    assert len(rows) > 2
    assert sum(r.false_invalidations for r in rows) == s["false_invalidations"]
    assert sum(r.accesses for r in rows) == s["accesses"] == 2000
    assert all(r.local_hits + r.remote_accesses == r.accesses for r in rows)
    for r in rows[:-1]:
        assert r.t_end_us - r.t_start_us == pytest.approx(500.0)
        assert r.iops == pytest.approx(r.accesses / 500e-6)


def test_generator_and_replayed_trace_agree(small_config):
    spec = GeneratorSpec(working_set=128, blades=3, ops_per_blade=300, seed=9)
    generated = generate(spec)
    buf = io.StringIO()
    write_trace(generated, buf)
    replayed = list(parse_trace(io.StringIO(buf.getvalue())))
    a, b = simulate(small_config, generated), simulate(small_config, replayed)
    assert csv_text(a.rows) == csv_text(b.rows)
    assert summary_json(a.summary) == summary_json(b.summary)


# -- command line --------------------------------------------------------------

SMALL = ["--memory-blades", "2", "--blade-capacity", "16MiB"]


def test_cli_run_writes_metrics_and_summary(tmp_path):
    trace = tmp_path / "t.trace"
    trace.write_text(TRACE)
    metrics, summary = tmp_path / "m.csv", tmp_path / "s.json"
    code = cli.main(["run", str(trace), "--metrics", str(metrics), "--summary", str(summary), *SMALL])
    assert code == 0
    assert metrics.read_text().splitlines()[0] == ",".join(COLUMNS)
    assert json.loads(summary.read_text())["denied"] == 2


def test_cli_reads_stdin(monkeypatch, tmp_path, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO(TRACE))
    assert cli.main(["verify", "-", *SMALL]) == 0
    assert "no differences" in capsys.readouterr().out


def test_cli_reports_bad_trace(tmp_path, capsys):
    trace = tmp_path / "bad.trace"
    trace.write_text("1,0,1,ALLOC,4096,a\n2,0,1,JUMP,$a\n")
    assert cli.main(["run", str(trace), *SMALL]) == 1
    assert "line 2" in capsys.readouterr().err


def test_cli_capacity_pressure_exit_status(tmp_path):
    out = tmp_path / "m.csv"
    args = ["run", "--metrics", str(out), "--summary", str(tmp_path / "s.json"), *SMALL]
    args += ["--dir-capacity", "4", "--working-set", "64", "--blades", "2", "--ops-per-blade", "200"]
    assert cli.main(args) == 2


def test_cli_generate_then_sweep_split(tmp_path):
    trace = tmp_path / "g.trace"
    assert cli.main(["generate", "--out", str(trace), "--working-set", "64", "--blades", "2", "--ops-per-blade", "100"]) == 0
    assert len(read_trace(trace)) == 3 + 200
    out = tmp_path / "split.csv"
    assert cli.main(["sweep-split", str(trace), "--initial-regions", "4KiB,2MiB", "--out", str(out), *SMALL]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("initial_region,epoch_ms,steady_entries,false_invalidations")
    assert len(lines) == 3
    assert lines[1].split(",")[3] == "0"  # page-sized regions never falsely invalidate


def test_cli_sweep_grid(tmp_path):
    out = tmp_path / "grid.csv"
    args = ["sweep-grid", "--read-ratios", "0,1", "--sharing-ratios", "1", "--working-set", "32"]
    args += ["--blades", "2", "--ops-per-blade", "50", "--out", str(out), *SMALL]
    assert cli.main(args) == 0
    assert len(out.read_text().splitlines()) == 3
