"""Execution-based candidate selection and the per-question pipeline.

``consistency_select`` picks among samples from one configuration: drop
candidates that fail to execute, group the rest by result, and return a
member of the heaviest group. ``cross_paradigm_select`` does the same
across the single outputs of several configurations, by plain counting.
"""

import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

from .content import MatchConfig, extract_content
from .errors import EmptyInput, HarnessError, StorageError, UnparseableError
from .executor import DEFAULT_TIMEOUT, ExecutionOutcome, execute, result_key
from .llm import CompletionRequest
from .prompts import PromptStyle, build_prompt, make_demonstration
from .schema import attach_sample_values
from .selection import apply_selection, extract_references, retrieve_columns

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SqlCandidate:
    sql: str
    paradigm_id: str = "default"
    sample_index: int = 0
    weight: Optional[float] = None
    outcome: Optional[ExecutionOutcome] = None

    def __post_init__(self):
        if self.weight is not None and self.weight < 0:
            raise ValueError("candidate weight must be non-negative")


@dataclass(frozen=True)
class SelectionResult:
    chosen: SqlCandidate
    group_key: Optional[object]
    group_mass: float
    valid_count: int
    error_count: int
    tie_broken: bool = False
    all_invalid: bool = False
    group_size: int = 0


def _grouped(valid, order_sensitive, lenient):
    groups = {}
    for c in valid:
        groups.setdefault(result_key(c.outcome, order_sensitive, lenient), []).append(c)
    return groups


def consistency_select(candidates, use_weights=True, order_sensitive=False, lenient=False):
    """Heaviest execution-result group among the valid candidates.

    Group mass is the sum of candidate weights when ``use_weights`` is set
    and every candidate carries one, otherwise the member count. Between
    groups of equal mass the one holding the earliest sample wins; inside
    the winning group the lexicographically smallest SQL is returned.
    """
    candidates = list(candidates)
    if not candidates:
        raise EmptyInput("no candidates to select from")
    for c in candidates:
        if c.outcome is None:
            raise ValueError(f"candidate {c.sample_index} was never executed")
    valid = [c for c in candidates if c.outcome.status == "ok"]
    errors = len(candidates) - len(valid)
    if not valid:
        return SelectionResult(candidates[0], None, 0.0, 0, errors, all_invalid=True)

    weighted = use_weights and all(c.weight is not None for c in candidates)
    groups = _grouped(valid, order_sensitive, lenient)

    def mass(members):
        return math.fsum(c.weight for c in members) if weighted else float(len(members))

    scored = [(mass(m), min(c.sample_index for c in m), key, m) for key, m in groups.items()]
    best_mass = max(s[0] for s in scored)
    top = [s for s in scored if s[0] == best_mass]
    top.sort(key=lambda s: s[1])
    _, _, key, members = top[0]
    chosen = min(members, key=lambda c: (c.sql, c.sample_index))
    return SelectionResult(chosen, key, best_mass, len(valid), errors,
                           tie_broken=len(top) > 1, group_size=len(members))


def cross_paradigm_select(per_paradigm, schema=None, priority=None, order_sensitive=False,
                          timeout=DEFAULT_TIMEOUT, lenient=False):
    """Majority vote over one SQL per paradigm.

    ``per_paradigm`` maps paradigm id to SqlCandidate. Candidates without
    an outcome are executed against ``schema``. ``priority`` orders the
    paradigms for tie breaking; by default the mapping's own order.
    """
    if not per_paradigm:
        raise EmptyInput("no paradigm outputs to combine")
    priority = list(priority) if priority is not None else list(per_paradigm)
    missing = [p for p in per_paradigm if p not in priority]
    priority += sorted(missing)
    rank = {p: i for i, p in enumerate(priority)}

    executed = {}
    for pid, cand in per_paradigm.items():
        if cand.outcome is None:
            if schema is None:
                raise ValueError("a schema is needed to execute unexecuted candidates")
            cand = replace(cand, outcome=execute(cand.sql, schema, timeout))
        executed[pid] = cand

    ordered = sorted(executed, key=rank.__getitem__)
    valid = [p for p in ordered if executed[p].outcome.status == "ok"]
    errors = len(ordered) - len(valid)
    if not valid:
        return SelectionResult(executed[ordered[0]], None, 0.0, 0, errors, all_invalid=True)

    counts = {}
    members = {}
    for p in valid:
        key = result_key(executed[p].outcome, order_sensitive, lenient)
        counts[key] = counts.get(key, 0) + 1
        members.setdefault(key, []).append(p)
    best = max(counts.values())
    top = [k for k in counts if counts[k] == best]
    # members lists are already in priority order
    top.sort(key=lambda k: rank[members[k][0]])
    key = top[0]
    chosen = executed[members[key][0]]
    return SelectionResult(chosen, key, float(best), len(valid), errors,
                           tie_broken=len(top) > 1, group_size=best)


# -- paradigms and the pipeline ----------------------------------------------

SELECTION_SOURCES = ("none", "ground_truth", "program_aided", "retrieval")


@dataclass(frozen=True)
class Paradigm:
    id: str
    style: PromptStyle = field(default_factory=PromptStyle)
    selection: str = "none"
    integration: str = "soft"
    retrieval_top_k: int = 10
    content: bool = False
    num_samples: int = 1
    temperature: float = 0.0
    max_output_len: int = 256
    use_weights: bool = True
    shots: int = 0
    order_sensitive: bool = False
    stop: tuple = (";\n\n", "\n\n")

    def __post_init__(self):
        if self.selection not in SELECTION_SOURCES:
            raise ValueError(f"unknown selection source {self.selection!r}")
        if self.content and not self.style.include_content_values:
            object.__setattr__(self, "style", replace(self.style, include_content_values=True))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        style = PromptStyle(**d.pop("style", {}))
        if "stop" in d:
            d["stop"] = tuple(d["stop"])
        return cls(style=style, **d)


@dataclass
class PipelineContext:
    catalog: dict
    backend: object
    demos: tuple = ()
    preliminary: dict = field(default_factory=dict)
    timeout: float = DEFAULT_TIMEOUT
    record_timing: bool = False
    match_config: MatchConfig = field(default_factory=MatchConfig)
    embedder: object = None
    seed: Optional[int] = None
    _sampled: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def sampled_schema(self, db_id):
        with self._lock:
            if db_id not in self._sampled:
                self._sampled[db_id] = attach_sample_values(self.catalog[db_id])
            return self._sampled[db_id]


def _selection(task, schema, paradigm, ctx):
    if paradigm.selection == "none":
        return None
    if paradigm.selection == "ground_truth":
        return extract_references(task.gold_sql, schema, "ground_truth", paradigm.integration)
    if paradigm.selection == "program_aided":
        sql = ctx.preliminary.get(task.question_id)
        if not sql:
            raise HarnessError(f"no preliminary SQL for question {task.question_id}")
        try:
            return extract_references(sql, schema, "program_aided", paradigm.integration)
        except UnparseableError:
            log.warning("question %s: preliminary SQL unparseable, using full schema", task.question_id)
            return None
    return retrieve_columns(task.question, ctx.sampled_schema(schema.db_id), ctx.embedder,
                            paradigm.retrieval_top_k, paradigm.integration)


def _demos(paradigm, ctx):
    demo_style = replace(paradigm.style, include_content_values=False, selection=None,
                         include_descriptions="none" if paradigm.style.include_descriptions == "selected"
                         else paradigm.style.include_descriptions)
    out = []
    for d in list(ctx.demos)[:paradigm.shots]:
        out.append(make_demonstration(ctx.catalog[d.db_id], d, demo_style))
    return out


def build_task_prompt(task, paradigm, ctx):
    schema = ctx.catalog[task.db_id]
    selection = _selection(task, schema, paradigm, ctx)
    style = paradigm.style
    if selection is not None:
        style = apply_selection(style, selection)
    content = extract_content(task.question, schema, ctx.match_config) if style.include_content_values else None
    return build_prompt(schema, task, style, content, selection, _demos(paradigm, ctx))


def _weight(sample):
    return None if sample.logprob is None else math.exp(sample.logprob)


def run_pipeline(task, paradigm, ctx):
    """Prompt, sample, execute and select for one question; never raises."""
    start = time.monotonic()
    record = {
        "question_id": task.question_id,
        "db_id": task.db_id,
        "paradigm": paradigm.id,
        "chosen_sql": None,
        "candidates": [],
        "all_invalid": False,
        "status": "ok",
        "elapsed_ms": None,
    }
    try:
        schema = ctx.catalog[task.db_id]
        if not schema.storage_path or not os.path.isfile(schema.storage_path):
            raise StorageError(f"database file for {task.db_id} is missing")
        bundle = build_task_prompt(task, paradigm, ctx)
        request = CompletionRequest(bundle.rendered, paradigm.temperature, paradigm.num_samples,
                                    paradigm.max_output_len, paradigm.stop, ctx.seed)
        response = ctx.backend.complete(request)
        cands = []
        for i, s in enumerate(response.samples):
            sql = s.text.strip()
            cands.append(SqlCandidate(sql, paradigm.id, i, _weight(s), execute(sql, schema, ctx.timeout)))
        result = consistency_select(cands, paradigm.use_weights, paradigm.order_sensitive)
        record["chosen_sql"] = result.chosen.sql
        record["all_invalid"] = result.all_invalid
        record["candidates"] = [_candidate_record(c, paradigm.order_sensitive) for c in cands]
    except (HarnessError, KeyError, ValueError, OSError) as exc:
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
    if ctx.record_timing:
        record["elapsed_ms"] = round((time.monotonic() - start) * 1000, 3)
    return record


def _candidate_record(c, order_sensitive):
    ok = c.outcome.status == "ok"
    return {
        "sql": c.sql,
        "status": c.outcome.status,
        "result_digest": result_key(c.outcome, order_sensitive).digest if ok else None,
    }


# -- batch driving ------------------------------------------------------------

def read_predictions(path):
    out = {}
    if not os.path.exists(path):
        return out
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except ValueError:
                continue  # torn final line from an interrupted run
            out[str(rec["question_id"])] = rec
    return out


def write_predictions(path, records):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    os.replace(tmp, path)


def run_batch(tasks, paradigm, ctx, out_path, jobs=1, resume=False):
    """Run every task, appending records as they finish.

    The file is rewritten in task order at the end so that its bytes do not
    depend on ``jobs``. With ``resume`` set, questions already recorded
    with status ok are not rerun.
    """
    done = read_predictions(out_path) if resume else {}
    done = {k: v for k, v in done.items() if v.get("status") == "ok"}
    todo = [t for t in tasks if t.question_id not in done]
    if not resume:
        open(out_path, "w").close()
    lock = threading.Lock()

    def work(task):
        rec = run_pipeline(task, paradigm, ctx)
        with lock:
            with open(out_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        return rec

    if jobs > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            fresh = list(pool.map(work, todo))
    else:
        fresh = [work(t) for t in todo]
    by_id = dict(done)
    by_id.update((r["question_id"], r) for r in fresh)
    ordered = [by_id[t.question_id] for t in tasks]
    write_predictions(out_path, ordered)
    return ordered


def combine_predictions(tasks, per_paradigm_records, catalog, priority, timeout=DEFAULT_TIMEOUT,
                        order_sensitive=False):
    """Cross-paradigm refinement over per-paradigm prediction records."""
    out = []
    for task in tasks:
        schema = catalog[task.db_id]
        cands = {}
        for pid in priority:
            rec = per_paradigm_records[pid].get(task.question_id)
            if rec and rec.get("chosen_sql"):
                sql = rec["chosen_sql"]
                cands[pid] = SqlCandidate(sql, pid, 0, None, execute(sql, schema, timeout))
        record = {"question_id": task.question_id, "db_id": task.db_id, "paradigm": None,
                  "chosen_sql": None, "candidates": [], "all_invalid": False,
                  "status": "ok", "elapsed_ms": None}
        if not cands:
            record["status"] = "failed"
            record["error"] = "no paradigm produced SQL"
        else:
            res = cross_paradigm_select(cands, priority=priority, order_sensitive=order_sensitive)
            record["chosen_sql"] = res.chosen.sql
            record["paradigm"] = res.chosen.paradigm_id
            record["all_invalid"] = res.all_invalid
            record["candidates"] = [dict(_candidate_record(c, order_sensitive), paradigm=pid)
                                    for pid, c in cands.items()]
        out.append(record)
    return out
