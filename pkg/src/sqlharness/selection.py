"""Table and column selection.

Three ways of producing a selection are supported: extracting the
identifiers referenced by a gold SQL query (ground truth) or by a
preliminary predicted query (program-aided), and nearest-neighbour
retrieval over per-column descriptive sentences.
"""

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional, Protocol

import numpy as np

from .errors import EmbedderError, EmptySelectionError, UnparseableError
from .sqltokens import KEYWORDS, tokenize

MODES = ("ground_truth", "program_aided", "retrieval")
INTEGRATIONS = ("hard", "soft")


@dataclass(frozen=True)
class SelectionSet:
    tables: frozenset
    columns: frozenset
    mode: str = "ground_truth"
    integration: str = "soft"
    scores: Optional[dict] = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown selection mode {self.mode!r}")
        if self.integration not in INTEGRATIONS:
            raise ValueError(f"unknown integration {self.integration!r}")
        object.__setattr__(self, "tables", frozenset(self.tables))
        object.__setattr__(self, "columns", frozenset(self.columns))
        for col in self.columns:
            if col.partition(".")[0] not in self.tables:
                raise ValueError(f"column {col!r} belongs to an unselected table")
        if self.mode == "retrieval" and self.scores is None:
            raise ValueError("retrieval selections must carry scores")

    @property
    def column_names(self):
        """Bare (unqualified) column names."""
        return {c.partition(".")[2] for c in self.columns}

    def with_integration(self, integration):
        return replace(self, integration=integration)

    def to_json(self, db_id=None, question_id=None):
        return {
            "db_id": db_id,
            "question_id": question_id,
            "tables": sorted(self.tables),
            "columns": sorted(self.columns),
            "mode": self.mode,
            "integration": self.integration,
            "scores": None if self.scores is None else {k: self.scores[k] for k in sorted(self.scores)},
        }

    @classmethod
    def from_json(cls, record):
        return cls(tables=frozenset(record["tables"]), columns=frozenset(record["columns"]),
                   mode=record.get("mode", "ground_truth"),
                   integration=record.get("integration", "soft"),
                   scores=record.get("scores"))


def dump_selections(path, rows):
    """Write (db_id, question_id, SelectionSet) triples as JSONL."""
    with open(path, "w", encoding="utf-8") as fh:
        for db_id, qid, sel in rows:
            fh.write(json.dumps(sel.to_json(db_id, qid), sort_keys=True) + "\n")


def load_selections(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[str(rec["question_id"])] = SelectionSet.from_json(rec)
    return out


# -- reference extraction ---------------------------------------------------

_CLAUSE_END = {"where", "group", "order", "having", "limit", "union", "intersect", "except",
               "on", "using", "join", "inner", "left", "right", "full", "cross", "natural",
               "outer", "window", "offset"}


def _table_lookup(schema):
    return {t.name.casefold(): t for t in schema.tables}


def _read_table_refs(tokens, i, lookup, aliases, tables, after_from):
    """Consume `table [AS] alias` items starting at i; comma lists only after FROM."""
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        if not tok.is_identifier or (tok.kind == "ident" and tok.is_keyword):
            return i
        # schema-qualified names like main.t
        if i + 2 < n and tokens[i + 1].value == "." and tokens[i + 2].is_identifier:
            i += 2
            tok = tokens[i]
        table = lookup.get(tok.value.casefold())
        i += 1
        if table is not None:
            tables.add(table.name)
        if i < n and tokens[i].word() == "as":
            i += 1
        if i < n and tokens[i].is_identifier and not tokens[i].is_keyword:
            if table is not None:
                aliases[tokens[i].value.casefold()] = table
            i += 1
        if after_from and i < n and tokens[i].value == ",":
            i += 1
            continue
        return i
    return i


def extract_references(sql, schema, mode="program_aided", integration="soft"):
    """Tables after FROM/JOIN and the columns of those tables that the SQL mentions.

    Matching is case-insensitive; results use the schema's spelling. Alias
    references (``T1.col``) resolve through the alias map; a bare column
    name shared by several selected tables is attributed to all of them.
    """
    if not sql or not sql.strip():
        raise UnparseableError("empty SQL")
    tokens = tokenize(sql)
    lookup = _table_lookup(schema)
    aliases = {}
    tables = set()
    saw_from = False
    alias_positions = set()

    i = 0
    while i < len(tokens):
        w = tokens[i].word()
        if w in ("from", "join"):
            saw_from = True
            start = i + 1
            before = dict(aliases)
            i = _read_table_refs(tokens, start, lookup, aliases, tables, after_from=(w == "from"))
            new_aliases = {k for k in aliases if k not in before}
            for j in range(start, i):
                if tokens[j].is_identifier and tokens[j].value.casefold() in new_aliases:
                    alias_positions.add(j)
            continue
        i += 1

    if not saw_from:
        for tok in tokens:
            if tok.is_identifier and tok.value.casefold() in lookup:
                tables.add(lookup[tok.value.casefold()].name)
        if not tables:
            raise UnparseableError(f"no table reference in {sql!r}")

    selected = [schema.table(name) for name in tables]
    columns = set()
    for i, tok in enumerate(tokens):
        if not tok.is_identifier or i in alias_positions:
            continue
        if i + 1 < len(tokens) and tokens[i + 1].value == ".":
            continue  # qualifier
        if i + 1 < len(tokens) and tokens[i + 1].value == "(" and tok.kind == "ident":
            continue  # function call
        if i > 0 and tokens[i - 1].word() == "as":
            continue  # alias declaration or CAST target type
        if tok.kind == "ident" and tok.value.lower() in KEYWORDS and not _is_column_anywhere(tok, selected):
            continue
        name = tok.value.casefold()
        if i >= 2 and tokens[i - 1].value == "." and tokens[i - 2].is_identifier:
            qual = tokens[i - 2].value.casefold()
            owner = aliases.get(qual) or lookup.get(qual)
            if owner is not None and owner.name in tables:
                for c in owner.columns:
                    if c.name.casefold() == name:
                        columns.add(f"{owner.name}.{c.name}")
            continue
        for t in selected:
            for c in t.columns:
                if c.name.casefold() == name:
                    columns.add(f"{t.name}.{c.name}")
    return SelectionSet(tables=frozenset(tables), columns=frozenset(columns),
                        mode=mode, integration=integration)


def _is_column_anywhere(tok, tables):
    name = tok.value.casefold()
    return any(c.name.casefold() == name for t in tables for c in t.columns)


# -- retrieval --------------------------------------------------------------

def _escape(text):
    return text.replace("\\", "\\\\").replace("'", "\\'")


def unescape(text):
    out, i = [], 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def build_column_sentence(schema, table, column, n_examples=3):
    t = schema.table(table)
    c = t.column(column)
    parts = [f"Column name '{_escape(c.name)}' of type '{_escape(c.raw_type.upper())}' "
             f"from the table '{_escape(t.name)}'."]
    if c.description:
        parts.append(f"Description: '{_escape(c.description)}'.")
    if c.sample_values:
        examples = ", ".join(f"'{_escape(v)}'" for v in c.sample_values[:n_examples])
        parts.append(f"Value examples: {examples}.")
    return " ".join(parts)


class Embedder(Protocol):
    def embed(self, texts): ...


class HashingEmbedder:
    """Signed feature hashing of character trigrams, L2-normalised.

    Deterministic across processes (blake2b, not ``hash()``), so retrieval
    results can be frozen into tests.
    """

    def __init__(self, dim=512, n=3):
        self.dim = dim
        self.n = n

    def _vector(self, text):
        v = np.zeros(self.dim)
        padded = f" {text.lower()} "
        for i in range(len(padded) - self.n + 1):
            h = hashlib.blake2b(padded[i:i + self.n].encode("utf-8"), digest_size=8).digest()
            idx = int.from_bytes(h[:4], "little") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            v[idx] += sign
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def embed(self, texts):
        return np.vstack([self._vector(t) for t in texts]) if texts else np.zeros((0, self.dim))


def cosine_scores(query_vec, matrix):
    q = np.asarray(query_vec, dtype=float).ravel()
    m = np.asarray(matrix, dtype=float)
    denom = np.linalg.norm(m, axis=1) * np.linalg.norm(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (m @ q) / denom
    return np.where(denom > 0, s, 0.0)


def retrieve_columns(question, schema, embedder=None, top_k=10, integration="soft"):
    """Top-k columns by cosine similarity between question and column sentences."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    embedder = embedder or HashingEmbedder()
    ids, sentences = [], []
    for t, c in schema.iter_columns():
        ids.append(f"{t.name}.{c.name}")
        sentences.append(build_column_sentence(schema, t.name, c.name))
    try:
        vecs = np.asarray(embedder.embed([question] + sentences), dtype=float)
    except EmbedderError:
        raise
    except Exception as exc:
        raise EmbedderError(f"embedder failed: {exc}") from exc
    if vecs.ndim != 2 or vecs.shape[0] != len(sentences) + 1:
        raise EmbedderError(f"embedder returned shape {vecs.shape}, expected ({len(sentences) + 1}, d)")
    scores = cosine_scores(vecs[0], vecs[1:])
    order = np.argsort(-scores, kind="stable")[:top_k]
    kept = [ids[i] for i in order]
    return SelectionSet(
        tables=frozenset(k.partition(".")[0] for k in kept),
        columns=frozenset(kept),
        mode="retrieval",
        integration=integration,
        scores={ids[i]: float(scores[i]) for i in order},
    )


# -- metrics ----------------------------------------------------------------

@dataclass(frozen=True)
class SelectionMetrics:
    recall: Optional[float]
    precision: Optional[float]
    f1: Optional[float]
    avg_count: float
    n: int = 1


def score_selection(predicted, truth, level="column"):
    """Per-sample recall, precision and F1.

    With an empty truth set recall is undefined unless the prediction is
    empty too; undefined values are None and skipped when averaging.
    """
    pred = set(predicted.columns if level == "column" else predicted.tables)
    gold = set(truth.columns if level == "column" else truth.tables)
    pred = {p.casefold() for p in pred}
    gold = {g.casefold() for g in gold}
    hit = len(pred & gold)
    if not gold:
        if not pred:
            return SelectionMetrics(1.0, 1.0, 1.0, 0.0)
        return SelectionMetrics(None, 0.0, None, float(len(pred)))
    recall = hit / len(gold)
    precision = hit / len(pred) if pred else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return SelectionMetrics(recall, precision, f1, float(len(pred)))


def aggregate_metrics(per_sample):
    """Average per-sample metrics, ignoring undefined entries."""
    per_sample = list(per_sample)
    if not per_sample:
        return SelectionMetrics(None, None, None, 0.0, 0)

    def mean(values):
        values = [v for v in values if v is not None]
        return sum(values) / len(values) if values else None

    return SelectionMetrics(
        recall=mean(m.recall for m in per_sample),
        precision=mean(m.precision for m in per_sample),
        f1=mean(m.f1 for m in per_sample),
        avg_count=sum(m.avg_count for m in per_sample) / len(per_sample),
        n=len(per_sample),
    )


def apply_selection(style, selection):
    """Attach a selection to a prompt style.

    Hard integration filters the schema block; soft integration keeps the
    schema and restricts the description block to the selected columns.
    """
    if selection.integration == "hard":
        if not selection.columns and not selection.tables:
            raise EmptySelectionError("hard selection is empty")
        return replace(style, selection=selection)
    return replace(style, selection=selection, include_descriptions="selected")
