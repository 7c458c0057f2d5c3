"""Command line front end.

    factprobe detect "Argentina won the World Cup in 1978." --fixture fixtures/figure1.json
    factprobe eval --dataset datasets/eval20.jsonl --fixture fixtures/eval20.json
    factprobe serve-mock --fixture fixtures/figure1.json --port 8181
    factprobe config --endpoint http://127.0.0.1:8000

Config resolution order, highest first: flag, environment variable,
--config file, built-in default. The API key is read only from the
FACTPROBE_API_KEY environment variable; there is deliberately no flag
for it so it cannot leak into shell history or process listings.

Exit codes: 0 success, 1 unexpected failure, 2 configuration problems,
3 backend/gateway failures, 4 unreadable or invalid input data.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path
from typing import Callable, NamedTuple, Optional

from .core import (
    AlignmentMode,
    ConfigError,
    DecodingMode,
    DetectionReport,
    ExtractorMode,
    FactProbeError,
    PipelineConfig,
    TokenMode,
)
from .evalharness import (
    EvalAborted,
    EvalMode,
    NoPositives,
    ParseError,
    eval_summary_text,
    eval_to_json,
    load_dataset,
    run_eval,
)
from .gateway import GatewayError
from .mockserver import FixtureParseError, MockServer, PortInUse
from .pipeline import build_gateway, detect, report_to_json
from .qgen import EmptyQuestion

ENV_PREFIX = "FACTPROBE_"


def _as_str(value) -> str:
    if not isinstance(value, str):
        raise ValueError(f"expected a string, got {value!r}")
    return value


def _as_int(value) -> int:
    if isinstance(value, bool):
        raise ValueError(f"expected an integer, got {value!r}")
    return int(value)


def _as_float(value) -> float:
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    return float(value)


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
    raise ValueError(f"expected a boolean, got {value!r}")


class _Field(NamedTuple):
    name: str            # PipelineConfig field and argparse dest
    flag: str
    env: str
    parse: Callable
    help: str


FIELD_SPECS = (
    _Field("endpoint", "--endpoint", "FACTPROBE_ENDPOINT", _as_str,
           "chat-completion backend base URL"),
    _Field("probe_model", "--model", "FACTPROBE_MODEL", _as_str,
           "model probed for regenerations"),
    _Field("judge_model", "--judge-model", "FACTPROBE_JUDGE_MODEL", _as_str,
           "model used for fact comparison (defaults to the probe model)"),
    _Field("generator_model", "--generator-model", "FACTPROBE_GENERATOR_MODEL", _as_str,
           "model credited with producing the passage, recorded in reports"),
    _Field("alignment_mode", "--alignment", "FACTPROBE_ALIGNMENT", AlignmentMode,
           "fact comparison method: judge or f1"),
    _Field("f1_threshold", "--f1-threshold", "FACTPROBE_F1_THRESHOLD", _as_float,
           "token-F1 at or above which a fact counts as aligned"),
    _Field("ks_alpha", "--ks-alpha", "FACTPROBE_KS_ALPHA", _as_float,
           "significance level for the uniformity test"),
    _Field("ks_token_mode", "--ks-mode", "FACTPROBE_KS_MODE", TokenMode,
           "which token positions feed the uniformity test: first, minp, meanp"),
    _Field("top_k", "--top-k", "FACTPROBE_TOP_K", _as_int,
           "how many top logprobs to request per token"),
    _Field("extractor", "--extractor", "FACTPROBE_EXTRACTOR", ExtractorMode,
           "key-fact extractor: heuristic, pos, random, llm"),
    _Field("temperature", "--temperature", "FACTPROBE_TEMPERATURE", _as_float,
           "sampling temperature for regenerations"),
    _Field("classification_threshold", "--classification-threshold",
           "FACTPROBE_CLASSIFICATION_THRESHOLD", _as_float,
           "passage score at or above which the label is 1"),
    _Field("seed", "--seed", "FACTPROBE_SEED", _as_int,
           "seed for the random extractor"),
    _Field("max_tokens", "--max-tokens", "FACTPROBE_MAX_TOKENS", _as_int,
           "completion budget per call"),
    _Field("decoding", "--decoding", "FACTPROBE_DECODING", DecodingMode,
           "regeneration decoding: greedy or beam (backend extension)"),
    _Field("beam_size", "--beam-size", "FACTPROBE_BEAM_SIZE", _as_int,
           "beam width when decoding is beam"),
    _Field("timeout_s", "--timeout", "FACTPROBE_TIMEOUT", _as_float,
           "per-request timeout in seconds"),
    _Field("max_retries", "--retries", "FACTPROBE_RETRIES", _as_int,
           "retries per call on transport failures and rate limits"),
    _Field("backoff_factor", "--backoff", "FACTPROBE_BACKOFF", _as_float,
           "multiplier between retry sleeps"),
    _Field("concurrency", "--concurrency", "FACTPROBE_CONCURRENCY", _as_int,
           "maximum in-flight LLM calls"),
    _Field("flat_fact_passage_score", "--flat-fact-score", "FACTPROBE_FLAT_FACT_SCORE",
           _as_bool, "score the passage as the raw mean over facts instead of "
           "the mean over sentence scores"),
)

_ENUM_CHOICES = {
    "alignment_mode": [m.value for m in AlignmentMode],
    "ks_token_mode": [m.value for m in TokenMode],
    "extractor": [m.value for m in ExtractorMode],
    "decoding": [m.value for m in DecodingMode],
}


def _add_config_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("pipeline configuration")
    for spec in FIELD_SPECS:
        if spec.name in _ENUM_CHOICES:
            group.add_argument(spec.flag, dest=spec.name, default=None,
                               type=spec.parse,
                               choices=[spec.parse(v) for v in _ENUM_CHOICES[spec.name]],
                               metavar="{" + ",".join(_ENUM_CHOICES[spec.name]) + "}",
                               help=spec.help)
        elif spec.parse is _as_bool:
            group.add_argument(spec.flag, dest=spec.name, action="store_const",
                               const=True, default=None, help=spec.help)
        else:
            caster = {_as_str: str, _as_int: int, _as_float: float}[spec.parse]
            group.add_argument(spec.flag, dest=spec.name, default=None,
                               type=caster, help=spec.help)
    group.add_argument("--config", dest="config_file", default=None, metavar="FILE",
                       help="JSON file of configuration values (flags and "
                            "environment variables win over it)")


def _load_config_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc.msg} (line {exc.lineno})")
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {spec.name for spec in FIELD_SPECS}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config file keys: {', '.join(unknown)}")
    return data


def resolve_config(args) -> tuple[PipelineConfig, dict]:
    """Merge flags, environment, config file, and defaults.

    Returns the config plus a field -> source map ("flag", "env",
    "file", "default") for the config subcommand.
    """
    file_values = _load_config_file(args.config_file) if args.config_file else {}
    defaults = {f.name: f.default for f in dataclasses.fields(PipelineConfig)}
    values, sources = {}, {}
    for spec in FIELD_SPECS:
        flag_value = getattr(args, spec.name, None)
        env_raw = os.environ.get(spec.env)
        try:
            if flag_value is not None:
                values[spec.name], sources[spec.name] = flag_value, "flag"
            elif env_raw is not None:
                values[spec.name], sources[spec.name] = spec.parse(env_raw), "env"
            elif spec.name in file_values:
                values[spec.name], sources[spec.name] = spec.parse(file_values[spec.name]), "file"
            else:
                values[spec.name], sources[spec.name] = defaults[spec.name], "default"
        except ValueError as exc:
            origin = spec.env if env_raw is not None else f"config file key {spec.name!r}"
            raise ConfigError(f"bad value for {origin}: {exc}")
    return PipelineConfig(**values), sources


def _read_text_file(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read input file: {exc}")
    except UnicodeDecodeError:
        raise ParseError(f"input file {path} is not UTF-8 text")


def _start_fixture_server(path: str) -> MockServer:
    server = MockServer.from_file(path)
    server.start()
    return server


def _fixture_setup(config: PipelineConfig, path: str, server: MockServer):
    """Config and gateway for a fixture-backed run.

    The gateway talks to the live loopback port, but the reported
    config carries a stable fixture:// endpoint; otherwise the
    ephemeral port number would leak into the report and break
    byte-reproducibility across runs.
    """
    gateway = build_gateway(dataclasses.replace(config, endpoint=server.base_url))
    return dataclasses.replace(config, endpoint=f"fixture://{path}"), gateway


def _write_output(document: str, out: Optional[str]):
    if out:
        Path(out).write_text(document, encoding="utf-8")
    else:
        sys.stdout.write(document)


def report_summary_text(report: DetectionReport) -> str:
    """Terminal-friendly rendering of one detection report."""
    threshold = report.config_snapshot.get("classification_threshold")
    lines = [
        f"label            {report.label} (threshold {threshold})",
        f"passage_score    {report.passage_score:.6f}",
        f"fact_mean_score  {report.fact_mean_score:.6f}",
        f"llm_calls        {report.llm_call_count} (retries {report.retry_count})",
    ]
    by_sentence: dict[int, list] = {}
    for record in report.records:
        by_sentence.setdefault(record.fact.sentence_index, []).append(record)
    for sentence, score in zip(report.passage.sentences, report.sentence_scores):
        shown = sentence.text if len(sentence.text) <= 60 else sentence.text[:57] + "..."
        lines.append(f"sentence {sentence.index}  score {score:.6f}  {shown!r}")
        for record in by_sentence.get(sentence.index, []):
            verdict = "FLAGGED" if record.final_flag else "ok"
            detail = record.alignment.detail
            if record.uniformity is not None:
                detail += f", {record.uniformity.detail}"
            elif record.uniformity_skip_reason:
                detail += f", uniformity skipped: {record.uniformity_skip_reason}"
            lines.append(f"  [{record.fact.fact_index}] {record.fact.surface!r}: "
                         f"{verdict} ({detail})")
    for note in report.notes:
        lines.append(f"note: {note}")
    if report.timings is not None:
        lines.append(f"wall_time_s      {report.timings.total_s:.4f}")
    return "\n".join(lines) + "\n"


def cmd_detect(args) -> int:
    config, _ = resolve_config(args)
    if args.file:
        text = _read_text_file(args.input)
    else:
        candidate = Path(args.input)
        text = _read_text_file(candidate) if candidate.is_file() else args.input

    server = _start_fixture_server(args.fixture) if args.fixture else None
    gateway = None
    try:
        if server is not None:
            config, gateway = _fixture_setup(config, args.fixture, server)
        report = detect(text, config, question=args.question, gateway=gateway,
                        timestamp=args.timestamp)
    finally:
        if server is not None:
            server.stop()

    if args.format == "json":
        document = report_to_json(report, include_timings=args.timing)
    else:
        document = report_summary_text(report)
    _write_output(document, args.out)
    if args.out:
        print(f"label {report.label}  passage_score {report.passage_score:.6f}  "
              f"-> {args.out}")
    return 0


def cmd_eval(args) -> int:
    items = load_dataset(args.dataset)
    config, _ = resolve_config(args)
    server = _start_fixture_server(args.fixture) if args.fixture else None
    gateway = None
    try:
        if server is not None:
            config, gateway = _fixture_setup(config, args.fixture, server)
        result = run_eval(items, config, mode=EvalMode(args.mode), gateway=gateway)
    finally:
        if server is not None:
            server.stop()

    summary = eval_summary_text(result)
    document = eval_to_json(result) if args.format == "json" else summary
    _write_output(document, args.out)
    if args.out:
        sys.stdout.write(summary)
    elif args.format == "json":
        sys.stderr.write(summary)
    return 0


def cmd_serve_mock(args) -> int:
    server = MockServer.from_file(args.fixture, port=args.port)
    server.start()
    print(f"ready: {server.base_url}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_config(args) -> int:
    config, sources = resolve_config(args)
    snapshot = config.snapshot()
    resolved = {name: {"value": snapshot[name], "source": sources[name]}
                for name in sources}
    print(json.dumps(resolved, sort_keys=True, indent=2, ensure_ascii=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factprobe",
        description="Two-stage hallucination detection for LLM output.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_detect = sub.add_parser("detect", help="run detection on one passage")
    p_detect.add_argument("input", help="passage text, or a path to a UTF-8 file")
    p_detect.add_argument("--file", action="store_true",
                          help="treat INPUT strictly as a file path")
    p_detect.add_argument("--question", default=None,
                          help="the question that elicited the passage, if any")
    p_detect.add_argument("--fixture", default=None, metavar="FILE",
                          help="serve this mock fixture on a loopback port and "
                               "use it as the endpoint")
    p_detect.add_argument("--out", default=None, metavar="FILE",
                          help="write the report here instead of stdout")
    p_detect.add_argument("--format", choices=("json", "text"), default="json")
    p_detect.add_argument("--timestamp", default=None,
                          help="timestamp string to embed in the report "
                               "(omitted by default to keep reports reproducible)")
    p_detect.add_argument("--timing", action="store_true",
                          help="include stage timings in the JSON report")
    _add_config_flags(p_detect)
    p_detect.set_defaults(func=cmd_detect)

    p_eval = sub.add_parser("eval", help="evaluate detection over a labeled dataset")
    p_eval.add_argument("--dataset", required=True, metavar="FILE",
                        help="JSON Lines dataset")
    p_eval.add_argument("--mode", choices=[m.value for m in EvalMode],
                        default=EvalMode.QA.value)
    p_eval.add_argument("--fixture", default=None, metavar="FILE",
                        help="serve this mock fixture on a loopback port and "
                             "use it as the endpoint")
    p_eval.add_argument("--out", default=None, metavar="FILE",
                        help="write the JSON report here; the summary still "
                             "prints to stdout")
    p_eval.add_argument("--format", choices=("json", "text"), default="json")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_mock = sub.add_parser("serve-mock", help="serve a deterministic mock backend")
    p_mock.add_argument("--fixture", required=True, metavar="FILE")
    p_mock.add_argument("--port", type=int, default=0,
                        help="port to bind (default: any free port)")
    p_mock.set_defaults(func=cmd_serve_mock)

    p_config = sub.add_parser("config", help="print the resolved configuration "
                                             "with each value's source")
    _add_config_flags(p_config)
    p_config.set_defaults(func=cmd_config)
    return parser


def _emit_error(exc: Exception, code: int) -> int:
    # one JSON object per failure so wrappers can parse stderr
    obj = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    print(json.dumps(obj, ensure_ascii=False), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, PortInUse) as exc:
        return _emit_error(exc, 2)
    except (ParseError, FixtureParseError, NoPositives) as exc:
        return _emit_error(exc, 4)
    except (GatewayError, EmptyQuestion, EvalAborted) as exc:
        return _emit_error(exc, 3)
    except FactProbeError as exc:
        return _emit_error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
