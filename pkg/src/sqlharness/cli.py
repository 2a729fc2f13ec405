"""Command-line entry point.

Every subcommand reads a YAML run config. Values resolve with the
precedence flag > environment > file; relative paths in the file are
taken relative to the file itself.

Exit codes: 0 success, 1 operational failure, 2 configuration error.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from . import __version__
from .content import MatchConfig, extract_content
from .decoding import (Paradigm, PipelineContext, build_task_prompt, combine_predictions,
                       read_predictions, run_batch, write_predictions)
from .errors import ConfigError, HarnessError
from .evaluation import EvalCase, EvalOptions, MetricsReport, report
from .datasets import augmented_paths
from .llm import CompletionRequest, backend_from_settings
from .schema import attach_sample_values, catalog_by_id, load_question_set, load_schema_catalog
from .selection import (aggregate_metrics, dump_selections, extract_references, retrieve_columns,
                        score_selection)
from .synth import (SynthConfig, build_synth_prompt, emit_training_records, filter_candidates,
                    parse_synth_response, summarize)

log = logging.getLogger("sqlharness")

ENV_PREFIX = "SQLHARNESS_"


@dataclass
class RunConfig:
    base_dir: Path
    catalogs: list
    questions: Path
    output_dir: Path
    demos: Optional[Path] = None
    test_suite_dir: Optional[Path] = None
    backend: dict = field(default_factory=dict)
    paradigms: list = field(default_factory=list)
    preliminary: dict = field(default_factory=dict)
    combine_priority: list = field(default_factory=list)
    evaluation: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    content: dict = field(default_factory=dict)
    seed: int = 0
    jobs: int = 1
    timeout: float = 30.0
    record_timing: bool = False


def _path(base, value, what, must_exist=True):
    if value is None:
        return None
    p = Path(os.path.expandvars(str(value)))
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"{what} not found: {p}")
    return p


def load_config(path, env=None, overrides=None):
    """Read, merge and validate a run config."""
    env = os.environ if env is None else env
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    base = path.resolve().parent

    def pick(key, cast=str):
        if key in overrides:
            return overrides[key]
        env_key = ENV_PREFIX + key.upper()
        if env_key in env:
            try:
                return cast(env[env_key])
            except ValueError as exc:
                raise ConfigError(f"{env_key}: {exc}") from exc
        return raw.get(key)

    catalogs = raw.get("catalogs")
    if catalogs is None and "catalog" in raw:
        catalogs = [raw["catalog"]]
    if not catalogs:
        raise ConfigError("config needs at least one entry under 'catalogs'")
    cats = []
    for c in catalogs:
        if isinstance(c, str):
            c = {"path": c}
        fmt = c.get("format", "spider_tables_json")
        if fmt not in ("spider_tables_json", "bird_tables_json"):
            raise ConfigError(f"unknown catalog format {fmt!r}")
        cats.append({"path": _path(base, c.get("path"), "catalog"), "format": fmt,
                     "db_root": _path(base, c.get("db_root"), "database directory")})

    if not pick("questions"):
        raise ConfigError("config needs 'questions'")
    backend = dict(raw.get("backend") or {})
    for key in ("url", "api_key", "model_id"):
        env_key = f"{ENV_PREFIX}BACKEND_{key.upper()}"
        if env_key in env:
            backend[key] = env[env_key]
    if "recording" in backend:
        backend["recording"] = str(_path(base, backend["recording"], "replay recording", must_exist=False))
    if backend.get("record_to"):
        backend["record_to"] = str(_path(base, backend["record_to"], "recording", must_exist=False))

    paradigms, preliminary = [], {}
    seen = set()
    for spec in raw.get("paradigms") or []:
        spec = dict(spec)
        pre = spec.pop("preliminary", None)
        try:
            p = Paradigm.from_dict(spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad paradigm {spec.get('id')!r}: {exc}") from exc
        if p.id in seen:
            raise ConfigError(f"duplicate paradigm id {p.id!r}")
        seen.add(p.id)
        paradigms.append(p)
        if pre is not None:
            preliminary[p.id] = pre
    priority = list(raw.get("combine_priority") or [p.id for p in paradigms])
    unknown = [p for p in priority if p not in seen]
    if unknown:
        raise ConfigError(f"combine_priority names unknown paradigms: {unknown}")

    try:
        jobs = int(pick("jobs", int) or os.cpu_count() or 1)
        seed = int(pick("seed", int) or 0)
        timeout = float(pick("timeout", float) or (raw.get("evaluation") or {}).get("timeout", 30))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad numeric setting: {exc}") from exc
    return RunConfig(
        base_dir=base,
        catalogs=cats,
        questions=_path(base, pick("questions"), "question file"),
        output_dir=_output_dir(base, raw, env, overrides),
        demos=_path(base, raw.get("demos"), "demonstration file"),
        test_suite_dir=_path(base, raw.get("test_suite_dir"), "test-suite directory"),
        backend=backend,
        paradigms=paradigms,
        preliminary={k: _path(base, v, "preliminary predictions", must_exist=False)
                     for k, v in preliminary.items()},
        combine_priority=priority,
        evaluation=dict(raw.get("evaluation") or {}),
        synth=dict(raw.get("synth") or {}),
        content=dict(raw.get("content") or {}),
        seed=seed,
        jobs=max(1, jobs),
        timeout=timeout,
        record_timing=bool(raw.get("record_timing", False)),
    )


def _output_dir(base, raw, env, overrides):
    # flag and environment values are relative to the working directory
    for value in (overrides.get("output_dir"), env.get(ENV_PREFIX + "OUTPUT_DIR")):
        if value:
            return Path(value).resolve()
    return _path(base, raw.get("output_dir") or "out", "output dir", must_exist=False)


def load_catalog(cfg):
    schemas = []
    for c in cfg.catalogs:
        schemas += load_schema_catalog(c["path"], c["format"], c["db_root"])
    return catalog_by_id(schemas)


def load_tasks(cfg, catalog):
    return load_question_set(cfg.questions, catalog)


def _task(tasks, qid):
    for t in tasks:
        if t.question_id == qid:
            return t
    raise HarnessError(f"unknown question id {qid!r}")


def _context(cfg, catalog, backend, paradigm=None):
    demos = tuple(load_question_set(cfg.demos, catalog)) if cfg.demos else ()
    preliminary = {}
    if paradigm is not None and paradigm.id in cfg.preliminary:
        preliminary = {k: v.get("chosen_sql") for k, v in read_predictions(cfg.preliminary[paradigm.id]).items()}
    return PipelineContext(catalog=catalog, backend=backend, demos=demos, preliminary=preliminary,
                           timeout=cfg.timeout, record_timing=cfg.record_timing,
                           match_config=MatchConfig(**cfg.content) if cfg.content else MatchConfig(),
                           seed=cfg.seed)


def _write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- subcommands ----------------------------------------------------------------

def cmd_serialize(args, cfg):
    catalog = load_catalog(cfg)
    tasks = load_tasks(cfg, catalog)
    task = _task(tasks, args.question_id)
    if args.paradigm:
        paradigm = next((p for p in cfg.paradigms if p.id == args.paradigm), None)
        if paradigm is None:
            raise ConfigError(f"unknown paradigm {args.paradigm!r}")
    else:
        paradigm = Paradigm("cli")
    style = paradigm.style
    if args.style:
        style = replace(style, mode=args.style)
    if args.lowercase is not None:
        style = replace(style, lowercase_names=args.lowercase)
    paradigm = replace(paradigm, style=style, shots=args.shots if args.shots is not None else paradigm.shots)
    if args.content:
        paradigm = replace(paradigm, content=True, style=replace(paradigm.style, include_content_values=True))
    bundle = build_task_prompt(task, paradigm, _context(cfg, catalog, None, paradigm))
    sys.stdout.write(bundle.rendered + "\n")
    return 0


def cmd_predict(args, cfg):
    catalog = load_catalog(cfg)
    tasks = load_tasks(cfg, catalog)
    backend = backend_from_settings(cfg.backend)
    chosen = cfg.paradigms
    if args.paradigm:
        chosen = [p for p in cfg.paradigms if p.id in args.paradigm]
        missing = set(args.paradigm) - {p.id for p in chosen}
        if missing:
            raise ConfigError(f"unknown paradigm(s): {sorted(missing)}")
    if not chosen:
        raise ConfigError("no paradigms configured")
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs or cfg.jobs
    per = {}
    failed = total = 0
    for p in chosen:
        path = out / f"predictions_{p.id}.jsonl"
        records = run_batch(tasks, p, _context(cfg, catalog, backend, p), path, jobs=jobs, resume=args.resume)
        per[p.id] = {r["question_id"]: r for r in records}
        failed += sum(1 for r in records if r["status"] != "ok")
        total += len(records)
        print(f"{p.id}: {len(records)} predictions -> {path}")
    if args.combine:
        priority = [pid for pid in cfg.combine_priority if pid in per] or list(per)
        if len(priority) < 2:
            raise ConfigError("--combine needs at least two paradigms")
        merged = combine_predictions(tasks, per, catalog, priority, cfg.timeout)
        path = out / "predictions_combined.jsonl"
        write_predictions(path, merged)
        print(f"combined: {len(merged)} predictions -> {path}")
    if total and failed == total:
        print("every question failed", file=sys.stderr)
        return 1
    if failed:
        print(f"{failed} of {total} questions failed", file=sys.stderr)
    return 0


def _eval_cases(cfg, catalog, tasks, with_ts):
    cases = []
    for t in tasks:
        if not t.gold_sql:
            continue
        copies = augmented_paths(cfg.test_suite_dir, t.db_id) if (with_ts and cfg.test_suite_dir) else ()
        cases.append(EvalCase(t, None, copies))
    return cases


def cmd_evaluate(args, cfg):
    catalog = load_catalog(cfg)
    tasks = load_tasks(cfg, catalog)
    ev = cfg.evaluation
    opts = EvalOptions(timeout=cfg.timeout,
                       distinct_compat=args.distinct_compat or bool(ev.get("distinct_compat", False)),
                       lenient=args.lenient or bool(ev.get("lenient", False)))
    cases = _eval_cases(cfg, catalog, tasks, not args.no_ts)
    rep = report(cases, args.predictions, catalog, opts, jobs=args.jobs or cfg.jobs)
    stem = Path(args.predictions).stem
    out = Path(args.output) if args.output else cfg.output_dir / f"report_{stem}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.dumps() + "\n", encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(rep.csv(), encoding="utf-8")
    print(rep.table())
    print(f"report -> {out}")
    floor = args.ex_floor if args.ex_floor is not None else ev.get("ex_floor")
    if floor is not None and rep.ex < float(floor):
        print(f"EX {rep.ex:.4f} below floor {float(floor):.4f}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args, cfg=None):
    data = json.loads(Path(args.report).read_text(encoding="utf-8"))
    rep = MetricsReport(ex=data["ex"], ts=data.get("ts"), invalid_rate=data["invalid_rate"],
                        per_difficulty=data["per_difficulty"], failures=data.get("failures", []),
                        total=data["total"], gold_invalid=data.get("gold_invalid", []),
                        unevaluable=data.get("unevaluable", []))
    if args.format == "json":
        print(rep.dumps())
    elif args.format == "csv":
        sys.stdout.write(rep.csv())
    else:
        print(rep.table())
    return 0


def cmd_select_columns(args, cfg):
    catalog = load_catalog(cfg)
    tasks = [t for t in load_tasks(cfg, catalog) if t.gold_sql]
    mode = args.mode.replace("-", "_")
    prelim = {}
    if mode == "program_aided":
        if not args.preliminary:
            raise ConfigError("--mode program-aided needs --preliminary")
        if not Path(args.preliminary).exists():
            raise ConfigError(f"preliminary predictions not found: {args.preliminary}")
        prelim = {k: v.get("chosen_sql") for k, v in read_predictions(args.preliminary).items()}
    sampled = {}
    rows, col_metrics, tab_metrics = [], [], []
    for t in tasks:
        schema = catalog[t.db_id]
        truth = extract_references(t.gold_sql, schema, "ground_truth", args.integration)
        if mode == "ground_truth":
            pred = truth
        elif mode == "program_aided":
            sql = prelim.get(t.question_id)
            try:
                pred = extract_references(sql, schema, "program_aided", args.integration) if sql else None
            except HarnessError:
                pred = None
            if pred is None:
                pred = type(truth)(frozenset(), frozenset(), "program_aided", args.integration)
        else:
            if t.db_id not in sampled:
                sampled[t.db_id] = attach_sample_values(schema)
            pred = retrieve_columns(t.question, sampled[t.db_id], top_k=args.top_k, integration=args.integration)
        rows.append((t.db_id, t.question_id, pred))
        col_metrics.append(score_selection(pred, truth, "column"))
        tab_metrics.append(score_selection(pred, truth, "table"))
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    dump_selections(out / f"selections_{mode}.jsonl", rows)

    def as_dict(m):
        return {"recall": m.recall, "precision": m.precision, "f1": m.f1, "avg_count": m.avg_count}

    result = {"mode": mode, "n": len(rows),
              "table": as_dict(aggregate_metrics(tab_metrics)),
              "column": as_dict(aggregate_metrics(col_metrics))}
    if mode == "retrieval":
        result["top_k"] = args.top_k
    _write_json(out / f"selection_metrics_{mode}.json", result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def cmd_match_content(args, cfg):
    catalog = load_catalog(cfg)
    if args.question_id:
        task = _task(load_tasks(cfg, catalog), args.question_id)
        question, db_id = task.question, task.db_id
    else:
        if not (args.question and args.db_id):
            raise ConfigError("give --question-id, or both --question and --db-id")
        question, db_id = args.question, args.db_id
    if db_id not in catalog:
        raise HarnessError(f"unknown database {db_id!r}")
    settings = dict(cfg.content)
    if args.threshold is not None:
        settings["threshold"] = args.threshold
    if args.top_k is not None:
        settings["top_k"] = args.top_k
    matches = extract_content(question, catalog[db_id], MatchConfig(**settings))
    if args.lines:
        print("\n".join(matches.render_lines()))
    else:
        print(json.dumps(matches.as_dict(), indent=2, ensure_ascii=False))
    return 0


def cmd_synthesize(args, cfg):
    catalog = load_catalog(cfg)
    tasks = [t for t in load_tasks(cfg, catalog) if t.gold_sql]
    settings = dict(cfg.synth)
    temperature = float(settings.pop("temperature", 0.0))
    max_tokens = int(settings.pop("max_output_len", 1024))
    config = SynthConfig(**settings)
    backend = backend_from_settings(cfg.backend)
    kept_all, stats, failures = [], [], []
    for t in tasks:
        schema = catalog[t.db_id]
        prompt = build_synth_prompt(schema, t, config)
        try:
            resp = backend.complete(CompletionRequest(prompt, temperature, 1, max_tokens))
            cands = parse_synth_response(resp.samples[0].text, t.question_id)
            kept, st, _ = filter_candidates(cands, t, schema, config, cfg.timeout)
        except HarnessError as exc:
            failures.append({"id": t.question_id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        kept_all += kept
        stats.append(st)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(stats)
    summary["failures"] = failures
    _write_json(out / "synth_stats.json", summary)
    if kept_all:
        emit_training_records(kept_all, {t.question_id: t for t in tasks}, out / "synthetic.jsonl")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if stats or not tasks else 1


# -- argument parsing ------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="sqlharness", description="Text-to-SQL harness")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        if needs_config:
            p.add_argument("--config", help="YAML run config (env SQLHARNESS_CONFIG)")
            p.add_argument("--output-dir", help="override output_dir from the config")
        p.set_defaults(func=fn, needs_config=needs_config)
        return p

    p = add("serialize", cmd_serialize, "print the exact prompt for one question")
    p.add_argument("--question-id", required=True)
    p.add_argument("--style", choices=("concise", "verbose"), help="prompt family")
    p.add_argument("--paradigm", help="take prompt settings from this paradigm")
    p.add_argument("--shots", type=int, help="number of demonstrations")
    p.add_argument("--content", action="store_true", help="include matched database values")
    p.add_argument("--lowercase", dest="lowercase", action="store_true", default=None,
                   help="lowercase schema names")
    p.add_argument("--no-lowercase", dest="lowercase", action="store_false")

    p = add("predict", cmd_predict, "generate and select SQL for every question")
    p.add_argument("--paradigm", action="append", help="run only this paradigm (repeatable)")
    p.add_argument("--combine", action="store_true", help="merge paradigms by execution majority")
    p.add_argument("--resume", action="store_true", help="skip questions already predicted")
    p.add_argument("--jobs", type=int, help="parallel questions (default: core count)")

    p = add("evaluate", cmd_evaluate, "score predictions by execution (EX) and test suite (TS)")
    p.add_argument("--predictions", required=True, help="prediction JSONL")
    p.add_argument("--ex-floor", type=float, help="exit 1 when EX falls below this value")
    p.add_argument("--distinct-compat", action="store_true", help="strip DISTINCT before comparing")
    p.add_argument("--lenient", action="store_true", help="treat numeric text and numbers as equal")
    p.add_argument("--no-ts", action="store_true", help="skip test-suite copies")
    p.add_argument("--csv", help="also write a CSV table here")
    p.add_argument("--output", help="report JSON path")
    p.add_argument("--jobs", type=int, help="parallel cases")

    p = add("select-columns", cmd_select_columns, "score table/column selection against gold references")
    p.add_argument("--mode", choices=("ground-truth", "program-aided", "retrieval"), required=True)
    p.add_argument("--preliminary", help="prediction JSONL with preliminary SQL (program-aided)")
    p.add_argument("--top-k", type=int, default=10, help="columns kept by retrieval")
    p.add_argument("--integration", choices=("hard", "soft"), default="soft")

    p = add("match-content", cmd_match_content, "show database values matched to a question")
    p.add_argument("--question-id")
    p.add_argument("--question")
    p.add_argument("--db-id")
    p.add_argument("--threshold", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--lines", action="store_true", help="print the prompt block instead of JSON")

    add("synthesize", cmd_synthesize, "generate and filter alternative gold SQL")

    p = add("report", cmd_report, "re-render a saved evaluation report", needs_config=False)
    p.add_argument("report", help="report JSON written by evaluate")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = None
        if args.needs_config:
            path = args.config or os.environ.get(ENV_PREFIX + "CONFIG")
            if not path:
                raise ConfigError("no config given (--config or SQLHARNESS_CONFIG)")
            cfg = load_config(path, overrides={"output_dir": args.output_dir})
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (HarnessError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
