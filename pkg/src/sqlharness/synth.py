"""Synthetic SQL rewrites of gold queries.

A model is shown the schema, the question and the gold SQL and asked for
alternative queries together with a self-reported similarity score.
Alternatives survive when they execute to the gold result and are not
too similar to it.
"""

import json
import logging
from dataclasses import dataclass, replace
from difflib import SequenceMatcher
from string import Template
from typing import Optional

from .errors import GoldInvalidError, IoError, MissingGoldError, NoJsonFoundError
from .executor import DEFAULT_TIMEOUT, execute, order_policy, result_key

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = """\
Below are the tables of a SQL database, a question about it, and a SQL query that answers the question. \
Write up to $max_rewrites alternative SQL queries that still answer the question correctly but are built \
from different constructs than the given query. Keep to the columns the given query uses. For every \
alternative, also give a score for how syntactically close it is to the given query.

Database schema:
$schema

Question:
$question

Original SQL query:
$sql

Output the generated queries and the similarity scores in a json list as follows:
[
  {"sql":        // generated query-1,
   "similarity": // similarity score (0.0-1.0) for query-1
  },
  {...}
]"""


@dataclass(frozen=True)
class SynthConfig:
    max_rewrites: int = 3
    similarity_ceiling: float = 0.9
    prompt_template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.max_rewrites < 1:
            raise ValueError("max_rewrites must be >= 1")
        if not 0 < self.similarity_ceiling < 1:
            raise ValueError("similarity_ceiling must lie strictly between 0 and 1")


@dataclass(frozen=True)
class SyntheticCandidate:
    source_question_id: str
    sql: str
    similarity: float
    correct: Optional[bool] = None
    kept: Optional[bool] = None
    local_similarity: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.similarity <= 1:
            raise ValueError(f"similarity {self.similarity} outside [0, 1]")
        if self.kept and not self.correct:
            raise ValueError("a kept candidate must be correct")


class CandidateList(list):
    """List of parsed candidates that also remembers how many were skipped."""

    skipped = 0


def create_table_ddl(schema):
    """CREATE TABLE statements with column descriptions as trailing comments."""
    blocks = []
    for t in schema.tables:
        defs = [f"  {c.name} {c.raw_type}," for c in t.columns]
        width = max(len(d) for d in defs)
        lines = []
        for d, c in zip(defs, t.columns):
            if c.description:
                lines.append(f"{d.ljust(width)} -- {c.description}")
            else:
                lines.append(d)
        blocks.append(f"CREATE TABLE {t.name} (\n" + "\n".join(lines) + "\n);")
    return "\n\n".join(blocks)


def build_synth_prompt(schema, task, config=None):
    config = config or SynthConfig()
    if not task.gold_sql:
        raise MissingGoldError(f"question {task.question_id} has no gold SQL")
    return Template(config.prompt_template).safe_substitute(
        max_rewrites=config.max_rewrites,
        schema=create_table_ddl(schema),
        question=task.question.strip(),
        sql=task.gold_sql.strip(),
    )


def _first_json_array(text):
    decoder = json.JSONDecoder()
    pos = text.find("[")
    while pos != -1:
        try:
            value, _ = decoder.raw_decode(text, pos)
        except ValueError:
            value = None
        if isinstance(value, list):
            return value
        pos = text.find("[", pos + 1)
    raise NoJsonFoundError("no JSON array in response")


def parse_synth_response(text, source_question_id=""):
    """Candidates from the first JSON array in ``text``; bad elements are skipped."""
    items = _first_json_array(text or "")
    out = CandidateList()
    for item in items:
        sim = item.get("similarity") if isinstance(item, dict) else None
        sql = item.get("sql") if isinstance(item, dict) else None
        if (not isinstance(sql, str) or not sql.strip() or isinstance(sim, bool)
                or not isinstance(sim, (int, float)) or not 0 <= sim <= 1):
            out.skipped += 1
            continue
        out.append(SyntheticCandidate(str(source_question_id), sql.strip(), float(sim)))
    if out.skipped:
        log.warning("skipped %d malformed synthetic candidates", out.skipped)
    return out


@dataclass(frozen=True)
class FilterStats:
    generated: int
    correct: int
    kept: int

    @property
    def any_correct(self):
        return self.correct > 0

    @property
    def any_kept(self):
        return self.kept > 0


def filter_candidates(candidates, task, schema, config=None, timeout=DEFAULT_TIMEOUT):
    """Mark each candidate correct/kept; return (kept, stats, all marked)."""
    config = config or SynthConfig()
    gold = execute(task.gold_sql, schema, timeout)
    if gold.status != "ok":
        raise GoldInvalidError(f"gold SQL of {task.question_id} does not execute: {gold.error_message}")
    ordered = order_policy(task.gold_sql)
    gold_key = result_key(gold, ordered)
    marked = []
    for c in candidates:
        out = execute(c.sql, schema, timeout)
        correct = out.status == "ok" and result_key(out, ordered) == gold_key
        local = SequenceMatcher(None, c.sql.lower(), task.gold_sql.lower(), autojunk=False).ratio()
        if abs(local - c.similarity) > 0.5:
            log.info("%s: reported similarity %.2f vs string ratio %.2f", task.question_id, c.similarity, local)
        marked.append(replace(c, correct=correct, kept=correct and c.similarity <= config.similarity_ceiling,
                              local_similarity=round(local, 6)))
    kept = [c for c in marked if c.kept]
    stats = FilterStats(len(marked), sum(1 for c in marked if c.correct), len(kept))
    return kept, stats, marked


def summarize(stats_list):
    """Fractions of questions with at least one correct / kept rewrite."""
    n = len(stats_list)
    if n == 0:
        return {"questions": 0, "with_correct": 0.0, "with_kept": 0.0, "generated": 0, "correct": 0, "kept": 0}
    return {
        "questions": n,
        "with_correct": sum(s.any_correct for s in stats_list) / n,
        "with_kept": sum(s.any_kept for s in stats_list) / n,
        "generated": sum(s.generated for s in stats_list),
        "correct": sum(s.correct for s in stats_list),
        "kept": sum(s.kept for s in stats_list),
    }


def training_record(task, sql, prompt_input=None, index=0):
    rec = {
        "question_id": f"{task.question_id}-syn{index}",
        "source_question_id": task.question_id,
        "db_id": task.db_id,
        "question": task.question,
        "query": sql,
        "synthetic": True,
    }
    if task.hint:
        rec["evidence"] = task.hint
    if task.difficulty_label:
        rec["difficulty"] = task.difficulty_label
    if prompt_input is not None:
        rec["input"] = prompt_input
    return rec


def emit_training_records(kept, tasks, path, inputs=None, append=False):
    """Write kept rewrites as JSONL training pairs readable by the question loader.

    ``tasks`` maps question id to QuestionTask; ``inputs`` optionally maps
    question id to the serialized model input.
    """
    if not kept:
        raise ValueError("nothing to emit")
    counters = {}
    try:
        with open(path, "a" if append else "w", encoding="utf-8") as fh:
            for c in kept:
                task = tasks[c.source_question_id]
                i = counters.get(task.question_id, 0)
                counters[task.question_id] = i + 1
                x = inputs.get(task.question_id) if inputs else None
                fh.write(json.dumps(training_record(task, c.sql, x, i), sort_keys=True,
                                    ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path
