"""Command-line entry point: ``qreadout <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 acceptance-expectation violation.
"""

import argparse
import fcntl
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import yaml

from qreadout import config as config_mod
from qreadout import dataset
from qreadout.evaluation import check_expectations
from qreadout.pipeline import MissingArtifact, Pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_ACCEPTANCE = 0, 1, 2, 3

SUBCOMMANDS = ("generate", "train-mf", "train-teacher", "distill", "quantize", "infer",
               "evaluate", "sweep", "latency", "repro")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration YAML (default: shipped desk config)")
    common.add_argument("--artifacts", help="artifact directory (overrides file and environment)")
    common.add_argument("--qubit", type=int, action="append",
                        help="restrict to this qubit index (repeatable)")
    common.add_argument("--duration-ns", type=float, action="append",
                        help="restrict to this readout duration (repeatable)")
    common.add_argument("--clock-mhz", type=float, help="clock for the latency model")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--format", choices=("json", "csv", "text"), default="json",
                        help="stdout format")
    common.add_argument("--validate-only", action="store_true",
                        help="check the configuration and exit")
    common.add_argument("--expectations", type=Path,
                        help="YAML bounds checked against the run summary (repro only)")
    common.add_argument("--traces", type=Path, help="QTRC file to classify (infer only)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="qreadout", description="Distilled qubit-readout classifiers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _overrides(args) -> dict:
    o = {}
    if args.artifacts:
        o["paths.artifacts"] = args.artifacts
    if args.clock_mhz is not None:
        o["clock_mhz"] = args.clock_mhz
    if args.seed is not None:
        for key in ("synth", "split", "teacher", "student"):
            o[f"{key}.seed"] = args.seed
    return o


@contextmanager
def _locked(root: Path):
    """Advisory lock so concurrent runs cannot interleave writes to one artifact tree."""
    root.mkdir(parents=True, exist_ok=True)
    with open(root / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise RuntimeError(f"{root} is locked by another run") from None
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _emit(obj, fmt, csv_text=None, text=None):
    if fmt == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    elif fmt == "text" and text is not None:
        print(text)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


def _run(args, cfg) -> int:
    pipe = Pipeline(cfg)
    qubits, durations = args.qubit, args.duration_ns
    cmd = args.command
    if cmd == "generate":
        train, test = pipe.generate()
        _emit({"train": train.n_traces, "test": test.n_traces,
               "train_path": str(pipe.train_path), "test_path": str(pipe.test_path)}, args.format)
    elif cmd == "train-mf":
        pipe.train_mf(qubits, durations)
    elif cmd == "train-teacher":
        pipe.train_teacher(qubits)
    elif cmd == "distill":
        _emit(pipe.distill(qubits, durations), args.format)
    elif cmd == "quantize":
        pipe.quantize(qubits, durations)
    elif cmd == "infer":
        ts = dataset.load_traces(args.traces) if args.traces else None
        rows = ["qubit,record,logit_raw,state,label,saturations"]
        out = {}
        for q in pipe._qubits(qubits):
            for d in durations or [None]:
                r = pipe.infer(q, d, ts)
                out[f"q{q}"] = {k: v.tolist() for k, v in r.items()}
                rows += [f"{q},{n},{r['logit_raw'][n]},{r['state'][n]},{r['label'][n]},"
                         f"{r['saturations'][n]}" for n in range(len(r["state"]))]
        _emit(out, args.format, csv_text="\n".join(rows) + "\n")
    elif cmd == "evaluate":
        _emit(pipe.evaluate(qubits), args.format,
              csv_text=pipe.report_path("evaluate.csv").read_text())
    elif cmd == "sweep":
        rep = pipe.sweep(qubits, durations)
        _emit(rep.to_dict(), args.format, csv_text=rep.to_csv())
    elif cmd == "latency":
        reps = pipe.latency(qubits, args.clock_mhz)
        _emit({str(q): r.to_dict() for q, r in reps.items()}, args.format,
              text=pipe.report_path("latency.txt").read_text())
    elif cmd == "repro":
        summary = pipe.repro()
        _emit(summary, args.format)
        if args.expectations:
            problems = check_expectations(summary, yaml.safe_load(args.expectations.read_text()))
            for p in problems:
                print(f"expectation violated: {p}", file=sys.stderr)
            if problems:
                return EXIT_ACCEPTANCE
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config, _overrides(args))
    except (config_mod.ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.validate_only:
        print(f"configuration OK (hash {cfg.config_hash()[:12]})")
        return EXIT_OK
    try:
        with _locked(Path(cfg.artifacts)):
            return _run(args, cfg)
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, KeyError, dataset.FormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
