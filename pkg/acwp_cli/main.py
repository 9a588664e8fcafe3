"""The ``acwp`` command.

Exit codes: 0 success, 1 runtime failure (connection, refusal, validation,
golden mismatch), 2 usage error. Diagnostics go to stderr; stdout carries
only machine-readable output (message ids, envelopes, tables, event logs).
"""

import argparse
import difflib
import os
import signal
import sys
import threading
from pathlib import Path
from typing import List, Optional, Sequence, TextIO

from broker import BrokerRole, BrokerService, build_broker, load_broker_config
from broker.server import BrokerServer
from client_sdk import AckMode, ClientSession, TcpTransport, fetch_topics
from federation.live import load_bridge_config, run_bridge
from protocol import Document, SchemaSet, encode_document, envelope_to_document, load_schema_files, parse_document
from protocol.errors import AcwpError, ProtocolSyntaxError
from protocol.schema import parse_schema_set
from shared_utils import ConsoleFormatter, Settings, load_settings, parse_endpoint, setup_logging

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

TOPIC_COLUMNS = ["name", "kind", "scope", "ack_deadline_ms", "published", "delivered", "acked",
                 "dead_lettered", "dropped"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="acwp", description="A-CWP message middleware: brokers, bridges, clients, simulation")
    parser.add_argument("--debug", action="store_true", help="DEBUG logging (also ACWP_DEBUG=true)")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    broker = commands.add_parser("broker", help="Run a broker")
    broker_commands = broker.add_subparsers(dest="action", parser_class=_Parser)
    broker_commands.required = True
    serve = broker_commands.add_parser("serve", help="Serve a broker config over TCP")
    serve.add_argument("--config", required=True, type=Path)
    serve.add_argument("--role", choices=[r.value for r in BrokerRole], help="Override the configured role")
    serve.add_argument("--listen", help="Override the configured host:port (port 0 picks a free one)")

    bridge = commands.add_parser("bridge", help="Run a bridge between a local and the central broker")
    bridge_commands = bridge.add_subparsers(dest="action", parser_class=_Parser)
    bridge_commands.required = True
    run = bridge_commands.add_parser("run")
    run.add_argument("--config", required=True, type=Path)

    pub = commands.add_parser("pub", help="Publish one document")
    pub.add_argument("endpoint")
    pub.add_argument("topic")
    pub.add_argument("type")
    pub.add_argument("document", help="Document file, or - for stdin")
    pub.add_argument("--client-id")

    sub = commands.add_parser("sub", help="Subscribe and print envelopes")
    sub.add_argument("endpoint")
    sub.add_argument("topic")
    sub.add_argument("--count", type=int, help="Exit after N messages")
    sub.add_argument("--client-id")

    req = commands.add_parser("req", help="Request/reply")
    req.add_argument("endpoint")
    req.add_argument("topic")
    req.add_argument("type")
    req.add_argument("document", help="Document file, or - for stdin")
    req.add_argument("--timeout", type=int, help="Milliseconds (default ACWP_REQUEST_TIMEOUT_MS)")
    req.add_argument("--client-id")

    schema = commands.add_parser("schema", help="Schema tools")
    schema_commands = schema.add_subparsers(dest="action", parser_class=_Parser)
    schema_commands.required = True
    lint = schema_commands.add_parser("lint")
    lint.add_argument("files", nargs="+", type=Path)

    topics = commands.add_parser("topics", help="List a broker's topics and counters")
    topics.add_argument("endpoint")
    topics.add_argument("--client-id")

    sim = commands.add_parser("sim", help="Deterministic simulation")
    sim_commands = sim.add_subparsers(dest="action", parser_class=_Parser)
    sim_commands.required = True
    sim_run = sim_commands.add_parser("run")
    sim_run.add_argument("world", type=Path, help="World config file")
    sim_run.add_argument("scenario", type=Path, help="Scenario script")
    sim_run.add_argument("--seed", type=int, default=0)
    sim_run.add_argument("--golden", type=Path, help="Write the log here, or compare with it if present")
    sim_run.add_argument("--summary", action="store_true", help="Print event counts to stderr")

    owner = commands.add_parser("owner", help="Run a demo data owner against a live broker")
    owner.add_argument("endpoint")
    owner.add_argument("domain", choices=["fpl", "met"])
    owner.add_argument("--client-id")
    owner.add_argument("--ticks", type=int, default=0, help="met: number of periodic QNH publications")
    owner.add_argument("--period-ms", type=int, default=60000)
    return parser


class Cli:
    """One invocation: parsed arguments, settings and the output streams."""

    def __init__(self, args: argparse.Namespace, settings: Settings, stdout: TextIO, stderr: TextIO,
                 stdin: TextIO):
        self.args = args
        self.settings = settings
        self.stdout = stdout
        self.stderr = stderr
        self.stdin = stdin
        self.formatter = ConsoleFormatter()

    def say(self, message: str) -> None:
        if self.settings.verbose:
            print(self.formatter.success_message(message, self.stderr), file=self.stderr)

    def client_id(self, default: str) -> str:
        return self.args.client_id or f"{default}-{os.getpid()}"

    def schemas(self) -> Optional[SchemaSet]:
        if not self.settings.schema_path:
            return None
        return load_schema_files(self.settings.schema_path)

    def read_document(self, source: str) -> Document:
        data = self.stdin.read() if source == "-" else Path(source).read_bytes()
        return parse_document(data)

    def session(self, default_id: str, **kwargs) -> ClientSession:
        transport = TcpTransport(self.args.endpoint, self.settings.max_frame_bytes)
        return ClientSession(self.client_id(default_id), transport, schemas=self.schemas(),
                             request_timeout_ms=self.settings.request_timeout_ms, **kwargs).connect()

    # --- commands ------------------------------------------------------------------

    def broker_serve(self) -> int:
        config = load_broker_config(self.args.config)
        updates = {}
        if self.args.role:
            updates["role"] = BrokerRole(self.args.role)
        if self.args.listen:
            updates["listen"] = self.args.listen
        config = config.model_copy(update=updates)
        host, port = parse_endpoint(config.listen)
        service = BrokerService(build_broker(config))
        server = BrokerServer(service, (host, port), self.settings.max_frame_bytes, self.settings.sweep_interval_ms)
        print(f"listening {server.endpoint}", file=self.stdout, flush=True)
        self.say(f"broker {config.broker_id} ({config.role.value}) on {server.endpoint}")
        try:
            server.serve()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
        return EXIT_OK

    def bridge_run(self) -> int:
        config = load_bridge_config(self.args.config)
        self.say(f"bridge {config.local_broker_id} <-> {config.central_broker_id}")
        return run_bridge(config, self.settings)

    def pub(self) -> int:
        doc = self.read_document(self.args.document)
        errors: List[AcwpError] = []
        session = self.session("pub", on_error=errors.append)
        try:
            message_id = session.publish(self.args.topic, self.args.type, doc)
            session.sync()
        finally:
            session.disconnect()
        if errors:
            raise errors[0]
        print(message_id, file=self.stdout)
        return EXIT_OK

    def sub(self) -> int:
        done = threading.Event()
        received = [0]
        lock = threading.Lock()

        def on_message(env) -> None:
            with lock:
                if done.is_set():
                    return
                self.stdout.write(encode_document(envelope_to_document(env)).decode("utf-8") + "\n")
                self.stdout.flush()
                received[0] += 1
                if self.args.count is not None and received[0] >= self.args.count:
                    done.set()

        session = self.session("sub", ack_mode=AckMode.AUTO)
        try:
            session.subscribe(self.args.topic, on_message)
            self.say(f"subscribed to {self.args.topic}")
            while not done.wait(0.1):
                if not session.connected:
                    raise AcwpError("connection to broker lost")
        except KeyboardInterrupt:
            pass
        finally:
            session.disconnect()
        return EXIT_OK

    def req(self) -> int:
        doc = self.read_document(self.args.document)
        session = self.session("req")
        try:
            reply = session.request(self.args.topic, self.args.type, doc, self.args.timeout)
        finally:
            session.disconnect()
        self.stdout.write(encode_document(envelope_to_document(reply)).decode("utf-8"))
        return EXIT_OK

    def schema_lint(self) -> int:
        combined = SchemaSet()
        for path in self.args.files:
            try:
                parsed = parse_schema_set(path.read_text(encoding="utf-8"))
            except OSError as e:
                print(self.formatter.error_message(f"{path}: {e.strerror}", self.stderr), file=self.stderr)
                return EXIT_FAILURE
            except ProtocolSyntaxError as e:
                print(self.formatter.error_message(f"{path}: {e.message}", self.stderr), file=self.stderr)
                return EXIT_FAILURE
            combined = combined.merge(parsed)
        print(f"ok: {len(combined)} message types", file=self.stdout)
        return EXIT_OK

    def topics(self) -> int:
        session = self.session("topics")
        try:
            rows = fetch_topics(session)
        finally:
            session.disconnect()
        print(self.formatter.format_table(rows, TOPIC_COLUMNS), file=self.stdout)
        return EXIT_OK

    def sim_run(self) -> int:
        from ats_sim import build_world, load_scenario, load_world_config, run_scenario

        world = build_world(load_world_config(self.args.world), seed=self.args.seed)
        script = load_scenario(self.args.scenario)
        text = run_scenario(world, script).to_text()
        if self.args.summary:
            print(self.formatter.format_run_summary(world.summary()), file=self.stderr)
            print(self.formatter.format_table(world.log.summary().to_dict("records")), file=self.stderr)
        golden = self.args.golden
        if golden is None:
            self.stdout.write(text)
            return EXIT_OK
        if not golden.exists():
            golden.write_text(text, encoding="utf-8")
            self.say(f"wrote {golden} ({len(world.log)} events)")
            return EXIT_OK
        expected = golden.read_text(encoding="utf-8")
        if expected == text:
            self.say(f"{golden}: identical ({len(world.log)} events)")
            return EXIT_OK
        diff = difflib.unified_diff(expected.splitlines(keepends=True), text.splitlines(keepends=True),
                                    fromfile=str(golden), tofile="this run")
        self.stderr.writelines(diff)
        print(self.formatter.error_message(f"event log differs from {golden}", self.stderr), file=self.stderr)
        return EXIT_FAILURE

    def owner(self) -> int:
        from ats_sim.components import FplOwner, QnhSource
        from ats_sim.flight_plans import QnhState

        session = self.session(self.args.domain + "-owner")
        if self.args.domain == "fpl":
            component = FplOwner(session)
            component.start()
        else:
            component = QnhSource(session, QnhState(period_ms=self.args.period_ms), ticks=self.args.ticks)
            component.start()
            component.start_ticking()
        print(f"owning {self.args.domain} as {session.client_id}", file=self.stdout, flush=True)
        try:
            while session.connected:
                threading.Event().wait(0.2)
        except KeyboardInterrupt:
            return EXIT_OK
        finally:
            session.disconnect()
        print(self.formatter.error_message("connection to broker lost", self.stderr), file=self.stderr)
        return EXIT_FAILURE

    def dispatch(self) -> int:
        action = getattr(self.args, "action", None)
        name = f"{self.args.command}_{action}" if action else self.args.command
        return getattr(self, name)()


def _terminate(signum, frame) -> None:
    raise KeyboardInterrupt


def run_cli(argv: Optional[Sequence[str]] = None, stdout: Optional[TextIO] = None,
            stderr: Optional[TextIO] = None, stdin=None) -> int:
    """Run one command; returns its exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(parser.format_usage().rstrip(), file=stderr)
        print(str(e), file=stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return int(e.code or 0)

    settings = load_settings()
    if args.debug:
        settings = settings.model_copy(update={"debug": True})
    setup_logging(settings.debug)
    if stdin is None:
        stdin = sys.stdin.buffer if hasattr(sys.stdin, "buffer") else sys.stdin
    cli = Cli(args, settings, stdout, stderr, stdin)
    try:
        return cli.dispatch()
    except AcwpError as e:
        print(cli.formatter.error_message(f"{e.code}: {e.message}", stderr), file=stderr)
        return EXIT_FAILURE
    except (OSError, ValueError) as e:
        print(cli.formatter.error_message(f"error: {e}", stderr), file=stderr)
        return EXIT_FAILURE


def main() -> None:
    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGTERM, _terminate)
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
