"""Read-only SQL execution and result canonicalisation.

Cells are normalised to tagged values so that results can be hashed and
compared: integers stay exact, reals are rendered to six significant
digits, text is kept verbatim and blobs are replaced by their digest.
"""

import hashlib
import json
import sqlite3
import time
from dataclasses import dataclass
from decimal import Decimal
from typing import Optional

from .errors import NotExecutable, StorageError
from .schema import open_readonly
from .sqltokens import has_top_level_order_by

DEFAULT_TIMEOUT = 30.0
_PROGRESS_STEPS = 1000


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str  # ok, error, timeout
    rows: tuple = ()
    error_message: Optional[str] = None
    elapsed: float = 0.0

    @property
    def ok(self):
        return self.status == "ok"


@dataclass(frozen=True, order=True)
class ResultKey:
    digest: str

    def __str__(self):
        return self.digest


def _canonical_real(x):
    if x != x:
        return "NaN"
    if x in (float("inf"), float("-inf")):
        return "Infinity" if x > 0 else "-Infinity"
    d = Decimal(format(x, ".6g"))
    if d == 0:
        return "0"
    return format(d.normalize(), "f")


def normalize_cell(value):
    """Tagged canonical form: (tag, payload)."""
    if value is None:
        return ("null", None)
    if isinstance(value, bool):
        return ("int", int(value))
    if isinstance(value, int):
        return ("int", value)
    if isinstance(value, float):
        # 2.0 stays real-tagged and so differs from integer 2
        return ("real", _canonical_real(value))
    if isinstance(value, (bytes, bytearray, memoryview)):
        return ("blob", hashlib.sha256(bytes(value)).hexdigest())
    return ("text", str(value))


def _connect(schema_or_path):
    path = getattr(schema_or_path, "storage_path", schema_or_path)
    return open_readonly(path)


def execute(sql, schema, timeout=DEFAULT_TIMEOUT, clock=time.monotonic):
    """Run ``sql`` on the schema's database; never raises for query failures.

    ``schema`` may also be a plain path, which is how test-suite copies of a
    database are executed against.
    """
    start = clock()
    try:
        conn = _connect(schema)
    except StorageError as exc:
        return ExecutionOutcome("error", (), str(exc), clock() - start)
    deadline = start + timeout if timeout else None
    timed_out = [False]

    def _progress():
        if deadline is not None and clock() > deadline:
            timed_out[0] = True
            return 1
        return 0

    conn.set_progress_handler(_progress, _PROGRESS_STEPS)
    try:
        cur = conn.execute(sql)
        raw = cur.fetchall()
        rows = tuple(tuple(normalize_cell(v) for v in r) for r in raw)
        return ExecutionOutcome("ok", rows, None, clock() - start)
    except sqlite3.Warning as exc:
        # multiple statements in one string
        return ExecutionOutcome("error", (), str(exc), clock() - start)
    except sqlite3.Error as exc:
        if timed_out[0]:
            return ExecutionOutcome("timeout", (), f"exceeded {timeout}s", clock() - start)
        return ExecutionOutcome("error", (), str(exc), clock() - start)
    except (ValueError, OverflowError) as exc:
        return ExecutionOutcome("error", (), str(exc), clock() - start)
    finally:
        conn.close()


def _lenient_cell(cell):
    tag, payload = cell
    if tag == "text":
        try:
            d = Decimal(payload.strip())
        except Exception:
            return cell
        if not d.is_finite():
            return cell
        return _number_cell(d)
    if tag in ("int", "real"):
        return _number_cell(Decimal(str(payload)))
    return cell


def _number_cell(d):
    d = Decimal(format(d, ".6g"))
    if d == 0:
        return ("num", "0")
    return ("num", format(d.normalize(), "f"))


def result_key(outcome, order_sensitive=False, lenient=False):
    """Hash of the outcome's rows under the comparison policy.

    Unordered comparison sorts rows by their canonical encoding so equal
    multisets hash equally. Column order is always significant.
    """
    if outcome.status != "ok":
        raise NotExecutable(f"cannot key an outcome with status {outcome.status!r}")
    rows = outcome.rows
    if lenient:
        rows = tuple(tuple(_lenient_cell(c) for c in r) for r in rows)
    encoded = [json.dumps(r, separators=(",", ":"), ensure_ascii=False) for r in rows]
    if not order_sensitive:
        encoded.sort()
    h = hashlib.sha256()
    h.update(str(len(encoded)).encode())
    for line in encoded:
        h.update(b"\n")
        h.update(line.encode("utf-8"))
    return ResultKey(h.hexdigest())


def order_policy(gold_sql):
    """Order matters iff the gold query sorts at top level."""
    return bool(gold_sql) and has_top_level_order_by(gold_sql)


def outcome_record(question_id, index, outcome, order_sensitive=False, record_timing=False):
    return {
        "question_id": question_id,
        "candidate": index,
        "status": outcome.status,
        "result_digest": result_key(outcome, order_sensitive).digest if outcome.ok else None,
        "elapsed_ms": round(outcome.elapsed * 1000, 3) if record_timing else None,
    }


def dump_outcomes(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_outcomes(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
