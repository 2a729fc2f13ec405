"""Execution accuracy (EX) and test-suite accuracy (TS).

A prediction passes EX when it and the gold query both execute and their
results compare equal under the gold query's order policy. TS additionally
requires the same on every augmented copy of the database.
"""

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .decoding import read_predictions
from .errors import EmptyEvaluationError, MissingPredictionError, StorageError
from .executor import DEFAULT_TIMEOUT, execute, order_policy, result_key
from .schema import DIFFICULTIES
from .sqltokens import strip_distinct

UNLABELED = "unlabeled"


@dataclass(frozen=True)
class EvalCase:
    task: object
    predicted_sql: Optional[str] = None
    augmented_db_paths: tuple = ()

    def __post_init__(self):
        if not self.task.gold_sql:
            raise ValueError(f"case {self.task.question_id} has no gold SQL")
        object.__setattr__(self, "augmented_db_paths", tuple(self.augmented_db_paths))


@dataclass(frozen=True)
class Verdict:
    passed: bool
    cls: str  # pass, mismatch, invalid, gold_invalid, missing
    detail: str = ""


@dataclass(frozen=True)
class TsVerdict:
    passed: bool
    per_db: tuple


@dataclass(frozen=True)
class EvalOptions:
    timeout: float = DEFAULT_TIMEOUT
    distinct_compat: bool = False
    lenient: bool = False


def _compare(pred_sql, gold_sql, db, opts):
    if not pred_sql or not pred_sql.strip():
        return Verdict(False, "missing", "no predicted SQL")
    if opts.distinct_compat:
        pred_sql, gold_sql = strip_distinct(pred_sql), strip_distinct(gold_sql)
    gold = execute(gold_sql, db, opts.timeout)
    if gold.status != "ok":
        return Verdict(False, "gold_invalid", gold.error_message or gold.status)
    pred = execute(pred_sql, db, opts.timeout)
    if pred.status != "ok":
        return Verdict(False, "invalid", pred.error_message or pred.status)
    ordered = order_policy(gold_sql)
    same = result_key(pred, ordered, opts.lenient) == result_key(gold, ordered, opts.lenient)
    return Verdict(same, "pass" if same else "mismatch")


def eval_ex(case, schema, opts=None):
    """EX verdict on the original database."""
    return _compare(case.predicted_sql, case.task.gold_sql, schema, opts or EvalOptions())


def eval_ts(case, schema, opts=None):
    """EX on the original database and on every augmented copy.

    A missing copy raises StorageError: the case cannot be judged, which is
    different from failing it.
    """
    opts = opts or EvalOptions()
    if not case.augmented_db_paths:
        raise ValueError(f"case {case.task.question_id} has no augmented databases")
    for path in case.augmented_db_paths:
        if not os.path.isfile(path):
            raise StorageError(f"augmented database missing: {path}")
    per_db = [eval_ex(case, schema, opts)]
    per_db += [_compare(case.predicted_sql, case.task.gold_sql, p, opts) for p in case.augmented_db_paths]
    # a copy on which gold itself breaks says nothing about the prediction
    judged = [v for v in per_db[1:] if v.cls != "gold_invalid"]
    passed = per_db[0].passed and all(v.passed for v in judged)
    return TsVerdict(passed, tuple(per_db))


def aggregate_verdicts(matrix):
    """(EX, TS) from a boolean matrix: rows are cases, column 0 the original DB."""
    rows = [list(r) for r in matrix]
    if not rows:
        raise EmptyEvaluationError("no cases")
    ex = sum(1 for r in rows if r[0]) / len(rows)
    ts = sum(1 for r in rows if all(r)) / len(rows)
    return ex, ts


@dataclass
class MetricsReport:
    ex: float
    ts: Optional[float]
    invalid_rate: float
    per_difficulty: dict
    failures: list
    total: int
    gold_invalid: list = field(default_factory=list)
    unevaluable: list = field(default_factory=list)

    def to_json(self):
        return {
            "ex": self.ex,
            "ts": self.ts,
            "invalid_rate": self.invalid_rate,
            "total": self.total,
            "per_difficulty": self.per_difficulty,
            "failures": self.failures,
            "gold_invalid": self.gold_invalid,
            "unevaluable": self.unevaluable,
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def table(self):
        has_ts = self.ts is not None
        head = f"{'difficulty':<14}{'count':>7}{'EX':>9}" + (f"{'TS':>9}" if has_ts else "")
        lines = [head, "-" * len(head)]

        def row(name, b):
            line = f"{name:<14}{b['count']:>7}{b['ex']:>9.4f}"
            if has_ts:
                line += f"{b['ts']:>9.4f}" if b.get("ts") is not None else f"{'-':>9}"
            return line

        for name, b in self.per_difficulty.items():
            lines.append(row(name, b))
        lines.append("-" * len(head))
        lines.append(row("all", {"count": self.total, "ex": self.ex, "ts": self.ts}))
        lines.append(f"invalid rate: {self.invalid_rate:.4f}")
        if self.gold_invalid:
            lines.append(f"excluded (gold invalid): {', '.join(self.gold_invalid)}")
        return "\n".join(lines)

    def csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["difficulty", "count", "ex", "ts"])
        for name, b in self.per_difficulty.items():
            w.writerow([name, b["count"], b["ex"], "" if b.get("ts") is None else b["ts"]])
        w.writerow(["all", self.total, self.ex, "" if self.ts is None else self.ts])
        return buf.getvalue()


def _bucket_order(name):
    return (DIFFICULTIES.index(name) if name in DIFFICULTIES else len(DIFFICULTIES), name)


def attach_predictions(cases, predictions_path):
    """Fill predicted_sql from a prediction file; every case must be covered."""
    preds = read_predictions(predictions_path)
    missing = [c.task.question_id for c in cases if c.task.question_id not in preds]
    if missing:
        raise MissingPredictionError(missing)
    return [EvalCase(c.task, preds[c.task.question_id].get("chosen_sql"), c.augmented_db_paths)
            for c in cases]


def report(cases, predictions_path=None, catalog=None, opts=None, jobs=1):
    """Aggregate EX/TS overall and per difficulty.

    ``catalog`` maps db_id to DatabaseSchema. When ``predictions_path`` is
    given the predicted SQL is taken from that file.
    """
    cases = list(cases)
    if not cases:
        raise EmptyEvaluationError("refusing to evaluate zero cases")
    if predictions_path is not None:
        cases = attach_predictions(cases, predictions_path)
    opts = opts or EvalOptions()
    with_ts = any(c.augmented_db_paths for c in cases)

    def judge(case):
        schema = catalog[case.task.db_id]
        ex = eval_ex(case, schema, opts)
        ts = None
        unevaluable = False
        if with_ts and ex.cls != "gold_invalid":
            if not case.augmented_db_paths:
                unevaluable = True
            else:
                try:
                    ts = eval_ts(case, schema, opts).passed
                except StorageError:
                    unevaluable = True
        return ex, ts, unevaluable

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            verdicts = list(pool.map(judge, cases))
    else:
        verdicts = [judge(c) for c in cases]

    buckets = {}
    failures, gold_invalid, unevaluable = [], [], []
    n = n_ex = n_invalid = 0
    n_ts_cases = n_ts = 0
    for case, (ex, ts, unev) in zip(cases, verdicts):
        qid = case.task.question_id
        if ex.cls == "gold_invalid":
            gold_invalid.append(qid)
            continue
        label = case.task.difficulty or UNLABELED
        b = buckets.setdefault(label, {"count": 0, "ex_hits": 0, "ts_count": 0, "ts_hits": 0})
        n += 1
        b["count"] += 1
        if ex.passed:
            n_ex += 1
            b["ex_hits"] += 1
        else:
            failures.append({"id": qid, "class": ex.cls})
        if ex.cls in ("invalid", "missing"):
            n_invalid += 1
        if unev:
            unevaluable.append(qid)
        elif ts is not None:
            n_ts_cases += 1
            b["ts_count"] += 1
            if ts:
                n_ts += 1
                b["ts_hits"] += 1
    if n == 0:
        raise EmptyEvaluationError("every case was excluded (gold invalid)")

    per_difficulty = {}
    for label in sorted(buckets, key=_bucket_order):
        b = buckets[label]
        per_difficulty[label] = {
            "count": b["count"],
            "ex": b["ex_hits"] / b["count"],
            "ts": b["ts_hits"] / b["ts_count"] if with_ts and b["ts_count"] else None,
        }
    return MetricsReport(
        ex=n_ex / n,
        ts=(n_ts / n_ts_cases if n_ts_cases else None) if with_ts else None,
        invalid_rate=n_invalid / n,
        per_difficulty=per_difficulty,
        failures=failures,
        total=n,
        gold_invalid=gold_invalid,
        unevaluable=unevaluable,
    )
