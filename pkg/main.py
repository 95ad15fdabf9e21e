import argparse
import json
import logging
import os
import sys
from typing import List, Optional, Sequence

from pydantic import ValidationError

from cdfg import BACKWARD, FORWARD, build_cdfg, cone_of_influence, to_dot
from classify import DEFAULT_SHIFT_BOUND, classify_error
from exceptions import ConfigError, SvaFixError
from fix import DIRECT, STAGED
from hdl_frontend import SvaAssertion, load_assertion_list, load_design, parse_assertion, render_assertion
from llm_client import BACKENDS, LlmBackend, create_backend
from metrics_report import FixReport, emit_report, load_published_counts
from mutation_harness import TRACE_LENGTH, generate_corpus, write_corpus
from pipeline import load_config, run_pipeline
from retrieval import DEFAULT_TOP_K, build_index, chunk_design, coarse_retrieve, fine_filter, retrieve_for_assertion
from setup_manager import initialize_app
from traces import FAIL, VACUOUS, evaluate_assertion, load_trace
from utils import FileValidator

EX_OK = 0
EX_FAIL = 1
EX_VACUOUS = 2
EX_USAGE = 64
EX_DATAERR = 65
EX_IOERR = 74
EX_CONFIG = 78


class CliParser(argparse.ArgumentParser):
    """Prints the help text and exits with EX_USAGE on bad arguments."""

    def error(self, message: str):
        self.print_help(sys.stderr)
        self.exit(EX_USAGE, f"\n{self.prog}: error: {message}\n")


# --- Shared argument groups ---

def _add_design_args(parser: argparse.ArgumentParser):
    parser.add_argument("sources", nargs="+", help="Verilog source files")
    parser.add_argument("--strict", action="store_true", help="Reject unsupported constructs instead of skipping them")


def _add_assertion_args(parser: argparse.ArgumentParser):
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--assertion", help="Assertion text")
    group.add_argument("--assertions", help="Assertion list file (JSON or one per line)")
    parser.add_argument("--name", help="Assertion to pick from --assertions (default: the first)")


def _add_trace_args(parser: argparse.ArgumentParser):
    parser.add_argument("--trace", action="append", required=True, help="Counterexample VCD (repeatable)")
    parser.add_argument("--clock", default="clk")
    parser.add_argument("--edge", choices=("posedge", "negedge"), default="posedge")


def _add_backend_args(parser: argparse.ArgumentParser, default: Optional[str] = "none"):
    parser.add_argument("--backend", choices=BACKENDS, default=default)
    parser.add_argument("--fixtures", help="JSONL fixture store for replay or recording")
    parser.add_argument("--mock-rules", help="JSON list of {pattern, response} rules for the mock backend")


def _read_sources(paths: Sequence[str]) -> List[str]:
    for path in paths:
        if FileValidator.validate(path) != "verilog":
            raise ValueError(f"Not a Verilog source: {path}")
    return list(paths)


def _pick_assertion(args) -> SvaAssertion:
    if args.assertion:
        return parse_assertion(args.assertion, args.name)
    assertions = load_assertion_list(args.assertions)
    if not assertions:
        raise ValueError(f"No assertions in {args.assertions}")
    if args.name is None:
        return assertions[0]
    for assertion in assertions:
        if assertion.name == args.name:
            return assertion
    raise ValueError(f"No assertion named '{args.name}' in {args.assertions}")


def _backend_from_args(args) -> Optional[LlmBackend]:
    return create_backend(
        args.backend,
        fixtures=args.fixtures,
        mock_rules=args.mock_rules,
        endpoint=os.getenv("SVAFIX_LLM_ENDPOINT"),
        model=os.getenv("SVAFIX_LLM_MODEL"),
        api_key=os.getenv("SVAFIX_API_KEY"),
    )


def _print_json(data):
    print(json.dumps(data, indent=2, sort_keys=True))


# --- Subcommands ---

def cmd_parse(args) -> int:
    ast = load_design(_read_sources(args.sources), strict=args.strict)
    summary = {
        "top": ast.top.name if ast.top else None,
        "modules": [
            {
                "name": module.name,
                "file": module.file,
                "ports": [{"name": p.name, "direction": p.direction, "width": p.width} for p in module.ports],
                "nets": len(module.nets),
                "items": len(module.items),
            }
            for module in ast.modules
        ],
        "unsupported": [str(e) for e in ast.unsupported],
    }
    if args.assertions:
        summary["assertions"] = [
            {"name": a.name, "text": render_assertion(a)} for a in load_assertion_list(args.assertions)
        ]
    _print_json(summary)
    return EX_OK


def cmd_cdfg(args) -> int:
    g = build_cdfg(load_design(_read_sources(args.sources), strict=args.strict))
    if args.dot:
        dot = to_dot(g)
        if args.dot == "-":
            sys.stdout.write(dot)
        else:
            with open(args.dot, "w", encoding="utf-8") as f:
                f.write(dot)
            logging.info(f"CDFG written to {args.dot}")
    if args.coi:
        direction = FORWARD if args.forward else BACKWARD
        _print_json({"direction": direction, "cone": cone_of_influence(g, args.coi, direction, args.depth)})
    if not args.dot and not args.coi:
        _print_json({"nodes": g.graph.number_of_nodes(), "edges": g.graph.number_of_edges(), "top": g.top})
    return EX_OK


def cmd_retrieve(args) -> int:
    ast = load_design(_read_sources(args.sources), strict=args.strict)
    index = build_index(chunk_design(ast))
    if args.signal:
        hits = coarse_retrieve(index, args.signal, args.top_k)
    else:
        assertion = _pick_assertion(args)
        hits = retrieve_for_assertion(index, assertion, args.top_k)
        if args.filter:
            kept = {chunk.id for chunk in fine_filter(hits, assertion, build_cdfg(ast))}
            hits = [(chunk, score) for chunk, score in hits if chunk.id in kept]
    _print_json([dict(chunk.to_json(), score=round(score, 6), text=chunk.text) for chunk, score in hits])
    return EX_OK


def cmd_classify(args) -> int:
    ast = load_design(_read_sources(args.sources), strict=args.strict)
    g = build_cdfg(ast)
    assertion = _pick_assertion(args)
    traces = [load_trace(path, args.clock, args.edge) for path in args.trace]
    chunks = fine_filter(retrieve_for_assertion(build_index(chunk_design(ast)), assertion, args.top_k), assertion, g)
    classification = classify_error(assertion, traces, chunks, g, _backend_from_args(args), args.shift_bound)
    _print_json(dict(classification.to_json(), assertion=render_assertion(assertion)))
    return EX_OK


def cmd_check(args) -> int:
    assertion = _pick_assertion(args)
    results = []
    for path in args.trace:
        result = evaluate_assertion(assertion, load_trace(path, args.clock, args.edge))
        results.append(result)
        if not result.passed:
            print(f"{path}: {FAIL} (first failing cycle {result.first_failing_cycle})")
        elif not result.covered:
            print(f"{path}: {VACUOUS}")
        else:
            print(f"{path}: {result.overall}")
    if not all(r.passed for r in results):
        return EX_FAIL
    if not any(r.covered for r in results):
        return EX_VACUOUS
    return EX_OK


def cmd_fix(args) -> int:
    overrides = {
        "backend": args.backend,
        "fixtures": args.fixtures,
        "mock_rules": args.mock_rules,
        "record": args.record,
        "shift_bound": args.shift_bound,
        "top_k": args.top_k,
        "out": args.out,
        "jobs": args.jobs,
        "seed": args.seed,
        "strategy": args.strategy,
    }
    report = run_pipeline(load_config(args.config, overrides))
    for row in report.rows:
        fr = "N/A" if row.fr is None else f"{row.fr:.1f}%"
        print(f"{row.design} [{row.column}]: TE {row.te_attempted}/{row.te_fixed}, LE {row.le_attempted}/{row.le_fixed}, FR {fr}")
    return EX_OK


def cmd_report(args) -> int:
    report = FixReport()
    if args.input:
        with open(args.input, "r", encoding="utf-8") as f:
            report = FixReport.model_validate_json(f.read())
    if args.published:
        report = report.model_copy(update={"rows": load_published_counts() + report.rows})
    data = emit_report(report, args.format)
    if args.output:
        with open(args.output, "wb") as f:
            f.write(data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    return EX_OK


def cmd_corpus(args) -> int:
    mutants = generate_corpus(args.timing, args.logic, args.seed, args.designs, args.length)
    paths = write_corpus(mutants, args.out)
    for design, path in sorted(paths.items()):
        print(f"{design}: {path}")
    return EX_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="svafix", description="Repair failing SystemVerilog assertions against golden RTL.")
    parser.add_argument("--log-dir", help="Folder for svafix.log (default: current folder)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="Parse Verilog sources and optionally an assertion list")
    _add_design_args(p)
    p.add_argument("--assertions", help="Assertion list to parse and re-render")
    p.set_defaults(handler=cmd_parse)

    p = sub.add_parser("cdfg", help="Build the control/data flow graph")
    _add_design_args(p)
    p.add_argument("--dot", help="Write DOT to this path ('-' for stdout)")
    p.add_argument("--coi", nargs="+", metavar="SIGNAL", help="Print the cone of influence of these signals")
    p.add_argument("--forward", action="store_true", help="Forward instead of backward cone")
    p.add_argument("--depth", type=int, help="Largest number of register stages to follow")
    p.set_defaults(handler=cmd_cdfg)

    p = sub.add_parser("retrieve", help="Rank RTL chunks for a signal or an assertion")
    _add_design_args(p)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--signal")
    target.add_argument("--assertion")
    target.add_argument("--assertions")
    p.add_argument("--name")
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.add_argument("--filter", action="store_true", help="Keep only chunks in the assertion's cones")
    p.set_defaults(handler=cmd_retrieve)

    p = sub.add_parser("classify", help="Classify a failing assertion as a timing or logic error")
    _add_design_args(p)
    _add_assertion_args(p)
    _add_trace_args(p)
    _add_backend_args(p)
    p.add_argument("--shift-bound", type=int, default=DEFAULT_SHIFT_BOUND)
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("check", help="Evaluate an assertion on VCD traces (exit 0 pass, 1 fail, 2 vacuous)")
    _add_assertion_args(p)
    _add_trace_args(p)
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser("fix", help="Run the repair pipeline on a configured design")
    p.add_argument("--config", required=True, help="INI configuration file")
    _add_backend_args(p, default=None)
    p.add_argument("--record", action="store_true", default=None, help="Append live answers to --fixtures")
    p.add_argument("--shift-bound", type=int)
    p.add_argument("--top-k", type=int)
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--strategy", choices=(STAGED, DIRECT))
    p.set_defaults(handler=cmd_fix)

    p = sub.add_parser("report", help="Render a report, optionally beside the published counts")
    p.add_argument("--input", help="report.json of an earlier run")
    p.add_argument("--published", action="store_true", help="Include the published fix counts")
    p.add_argument("--format", choices=("json", "markdown"), default="markdown")
    p.add_argument("--output", help="Write here instead of stdout")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("corpus", help="Write a mutation corpus of synthetic designs")
    p.add_argument("--out", required=True)
    p.add_argument("--timing", type=int, default=100)
    p.add_argument("--logic", type=int, default=100)
    p.add_argument("--designs", type=int, default=10)
    p.add_argument("--length", type=int, default=TRACE_LENGTH)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_corpus)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parses the command line, runs one subcommand and returns its exit code."""
    args = build_parser().parse_args(argv)
    reporting = initialize_app(args.log_dir)
    logging.info(f"Command {args.command}, error reporting {'on' if reporting else 'off'}")
    try:
        return args.handler(args)
    except ConfigError as e:
        logging.error(f"Configuration error: {e}")
        return EX_CONFIG
    except OSError as e:
        logging.error(f"I/O error: {e}")
        return EX_IOERR
    except (SvaFixError, ValidationError, ValueError) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EX_DATAERR


if __name__ == '__main__':
    sys.exit(main())
