"""Command-line entry point.

Exit codes:
  0  success (quiescence / intent accepted / all assertions pass)
  1  intent rejected or unparsable, or an assertion failed
  2  usage, I/O or scenario error
  3  simulation hit the step limit (livelock)

Standard output carries only the payload (trace lines, canonical intent,
assertion results); diagnostics go to standard error as JSON objects.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, List, NoReturn, Optional, Sequence

from .intent import DEFAULT_VOCABULARY, ParseError, Vocabulary, parse_intent, serialize_intent, validate_intent
from .scenario import ScenarioError, load_scenario
from .simulator import Simulation, StepLimitExceeded, step_limit_from_env
from .trace import Trace, check_trace

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_LIVELOCK = 0, 1, 2, 3


def _err(**obj: Any) -> None:
    print(json.dumps(obj, ensure_ascii=False), file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        _err(error="UsageError", message=message, usage=self.format_usage().strip())
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlfo", description="Hierarchical ML pipeline orchestration")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and emit its trace")
    run.add_argument("--scenario", required=True, help="scenario file or builtin name (smart_factory)")
    run.add_argument("--trace-out", type=Path, help="write the trace here instead of stdout")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--figure-dir", type=Path, help="also render sequence and lifecycle figures here")

    val = sub.add_parser("validate-intent", help="parse and validate an intent file")
    val.add_argument("intent_path", type=Path)
    val.add_argument("--strict", action="store_true", help="unknown operations/operands are errors")
    val.add_argument("--scenario", default="smart_factory", help="topology to check targets against")

    chk = sub.add_parser("check-trace", help="evaluate temporal assertions over a trace")
    chk.add_argument("--trace-in", type=Path, required=True)
    chk.add_argument("--assert", dest="assertions", action="append", required=True, metavar="A")

    srv = sub.add_parser("serve", help="run one orchestrator over TCP")
    srv.add_argument("--domain", required=True)
    srv.add_argument("--listen", required=True, metavar="HOST:PORT")
    srv.add_argument("--parent", metavar="HOST:PORT")
    srv.add_argument("--scenario", required=True)
    srv.add_argument("--tick", type=float, default=0.1, help="seconds per logical tick")
    srv.add_argument("--duration", type=float, help="stop after this many seconds")

    plot = sub.add_parser("plot", help="render figures from a trace file")
    plot.add_argument("--trace-in", type=Path, required=True)
    plot.add_argument("--out-dir", type=Path, required=True)
    plot.add_argument("--scenario", help="scenario whose domain order lays out the lifelines")
    return p


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    sim = Simulation(scenario, step_limit_from_env())
    try:
        trace = sim.run()
        code = EXIT_OK
    except StepLimitExceeded as exc:
        _err(error="StepLimitExceeded", message=str(exc), limit=exc.limit)
        trace, code = exc.trace, EXIT_LIVELOCK
    text = trace.to_ndjson()
    if args.trace_out:
        args.trace_out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.figure_dir:
        from .report import render_report

        for path in render_report(trace, args.figure_dir, scenario.topology.domains):
            _err(info="figure", path=str(path))
    return code


def _cmd_validate(args: argparse.Namespace) -> int:
    text = args.intent_path.read_text(encoding="utf-8")
    try:
        intent = parse_intent(text)
    except ParseError as exc:
        _err(**exc.to_dict())
        return EXIT_FAIL
    domains = load_scenario(args.scenario).topology.domains if args.scenario else None
    vocab = Vocabulary(DEFAULT_VOCABULARY.known_operations, DEFAULT_VOCABULARY.known_operands, args.strict)
    report = validate_intent(intent, vocab, domains)
    for f in report.findings:
        _err(finding=f.to_dict(), intent_id=intent.intent_id)
    if not report.accepted:
        return EXIT_FAIL
    sys.stdout.write(serialize_intent(intent))
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    try:
        trace = Trace.from_ndjson(args.trace_in.read_text(encoding="utf-8"))
    except ValueError as exc:
        _err(error="TraceError", message=str(exc))
        return EXIT_USAGE
    try:
        report = check_trace(trace, args.assertions)
    except ValueError as exc:
        _err(error="AssertionSyntaxError", message=str(exc))
        return EXIT_USAGE
    for r in report.results:
        print(json.dumps(r.to_dict(), ensure_ascii=False))
    return EXIT_OK if report.ok else EXIT_FAIL


def _cmd_serve(args: argparse.Namespace) -> int:
    from .live import LiveNode, parse_address, serve

    scenario = load_scenario(args.scenario)

    def emit(ev: Any) -> None:
        sys.stdout.write(ev.to_json() + "\n")
        sys.stdout.flush()

    async def main() -> None:
        node = LiveNode(scenario, args.domain, parse_address(args.listen),
                        parse_address(args.parent) if args.parent else None, args.tick, emit)
        await serve(node, args.duration)

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def _cmd_plot(args: argparse.Namespace) -> int:
    from .report import render_report

    trace = Trace.from_ndjson(args.trace_in.read_text(encoding="utf-8"))
    domains = load_scenario(args.scenario).topology.domains if args.scenario else None
    for path in render_report(trace, args.out_dir, domains):
        print(path)
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "validate-intent": _cmd_validate,
    "check-trace": _cmd_check,
    "serve": _cmd_serve,
    "plot": _cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ScenarioError as exc:
        _err(error="ScenarioError", message=str(exc))
    except OSError as exc:
        _err(error="IOError", message=str(exc), path=getattr(exc, "filename", None))
    except ValueError as exc:
        _err(error="ValueError", message=str(exc))
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
