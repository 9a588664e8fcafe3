"""Tests for the acwp command line."""

import io
import threading

import pytest

from acwp_cli.main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, run_cli
from ats_sim.world import DATA_DIR
from broker import Broker, BrokerService
from broker.server import BrokerServer

from conftest import REPO_ROOT, SCENARIO_DIR


def acwp(*argv, stdin=None):
    """Run one command; returns (exit code, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    code = run_cli(list(argv), stdout=out, stderr=err, stdin=stdin)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def live_broker(schemas):
    """A central broker served over TCP on a free port."""
    broker = Broker("central", schemas=schemas, default_ack_deadline_ms=500)
    broker.declare_domain("fpl")
    try:
        server = BrokerServer(BrokerService(broker), ("127.0.0.1", 0), sweep_interval_ms=50)
    except OSError as e:
        pytest.skip(f"cannot listen on loopback: {e}")
    thread = threading.Thread(target=server.serve, daemon=True)
    thread.start()
    yield server
    server.stop()
    thread.join(timeout=2)


def test_usage_errors():
    assert acwp()[0] == EXIT_USAGE
    code, _, err = acwp("sim", "fly")
    assert code == EXIT_USAGE
    assert "usage: acwp" in err


def test_schema_lint(tmp_path):
    code, out, _ = acwp("schema", "lint", str(DATA_DIR / "acwp.schema"))
    assert code == EXIT_OK
    assert out.strip() == "ok: 8 message types"

    bad = tmp_path / "bad.schema"
    bad.write_text("message fpl.create v1\nfield eobt number required\n", encoding="utf-8")
    code, out, err = acwp("schema", "lint", str(bad))
    assert code == EXIT_FAILURE
    assert out == ""
    assert "bad.schema" in err

    code, _, _ = acwp("schema", "lint", str(tmp_path / "missing.schema"))
    assert code == EXIT_FAILURE


def test_sim_run_golden(tmp_path):
    world, scenario = str(SCENARIO_DIR / "tower.world"), str(SCENARIO_DIR / "flight_plan_change.scn")
    golden = tmp_path / "flight_plan_change.log"

    code, printed, _ = acwp("sim", "run", world, scenario, "--seed", "3")
    assert code == EXIT_OK and printed

    assert acwp("sim", "run", world, scenario, "--seed", "3", "--golden", str(golden))[0] == EXIT_OK
    assert golden.read_text(encoding="utf-8") == printed
    assert acwp("sim", "run", world, scenario, "--seed", "3", "--golden", str(golden))[0] == EXIT_OK

    golden.write_text(printed.replace("DLH123", "DLH124", 1), encoding="utf-8")
    code, out, err = acwp("sim", "run", world, scenario, "--seed", "3", "--golden", str(golden))
    assert code == EXIT_FAILURE
    assert out == ""
    assert "+++ this run" in err
    assert "event log differs" in err


def test_sim_run_summary_goes_to_stderr():
    code, out, err = acwp("sim", "run", str(SCENARIO_DIR / "tower.world"),
                          str(SCENARIO_DIR / "hung_display.scn"), "--summary")
    assert code == EXIT_OK
    assert "Simulation run" in err
    assert "Simulation run" not in out


def test_sim_run_bad_world_file(tmp_path):
    world = tmp_path / "bad.world"
    world.write_text("cwps = -1\n", encoding="utf-8")
    code, _, err = acwp("sim", "run", str(world), str(SCENARIO_DIR / "hung_display.scn"))
    assert code == EXIT_FAILURE
    assert "bad.world:cwps" in err


def test_pub_to_unreachable_broker():
    doc = REPO_ROOT / "deploy" / "create_dlh123.doc"
    code, out, err = acwp("pub", "127.0.0.1:1", "fpl.contribution", "fpl.create", str(doc))
    assert code == EXIT_FAILURE
    assert out == ""
    assert "connection-refused" in err or "cannot connect" in err


def test_pub_and_topics_against_live_broker(live_broker):
    endpoint = live_broker.endpoint
    doc = io.BytesIO(b'callsign = "DLH123"\n')
    code, out, err = acwp("pub", endpoint, "fpl.contribution", "fpl.delete", "-", "--client-id", "cwp1",
                          stdin=doc)
    assert code == EXIT_OK, err
    assert out.strip() == "cwp1:1"

    code, out, _ = acwp("topics", endpoint, "--client-id", "ops")
    assert code == EXIT_OK
    assert "fpl.contribution" in out
    assert "fpl.publication.dlq" in out


def test_pub_refused_by_live_broker(live_broker):
    doc = io.BytesIO(b'adep = "EDDF"\nades = "EDDH"\naircraft_type = "A320"\ncallsign = "DLH123"\n'
                   b'eobt = 540\nrevision = 1\nstatus = "filed"\n')
    code, out, err = acwp("pub", live_broker.endpoint, "fpl.publication", "fpl.record", "-",
                          "--client-id", "cwp1", stdin=doc)
    assert code == EXIT_FAILURE
    assert out == ""
    assert "ownership-violation" in err
