"""Database, schema and question data model plus benchmark-format loaders.

Spider ``tables.json`` and BIRD's equivalent (same JSON layout, plus a
``database_description/<table>.csv`` sidecar per table) are supported.
Schemas are immutable once loaded and can be shared between threads.
"""

import csv
import io
import json
import logging
import os
import sqlite3
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import IntegrityError, OutOfRange, ParseError, StorageError, UnknownDatabaseError

log = logging.getLogger(__name__)

DATA_TYPES = ("number", "text", "time", "boolean", "others")
DIFFICULTIES = ("simple", "moderate", "challenging", "easy", "medium", "hard", "extra")
SAMPLE_VALUE_CAP = 64

_TYPE_ALIASES = {
    "number": "number", "integer": "number", "int": "number", "real": "number",
    "float": "number", "double": "number", "numeric": "number", "decimal": "number",
    "bigint": "number", "smallint": "number",
    "text": "text", "string": "text", "varchar": "text", "char": "text", "clob": "text",
    "time": "time", "date": "time", "datetime": "time", "timestamp": "time",
    "boolean": "boolean", "bool": "boolean",
}

_DIFFICULTY_ALIASES = {
    "extra hard": "extra", "extra-hard": "extra", "extra_hard": "extra",
    "challenge": "challenging", "mod": "moderate",
}


def normalize_type(raw):
    """Map a source column type onto the five-way type enum."""
    base = (raw or "").strip().lower().split("(")[0].strip()
    return _TYPE_ALIASES.get(base, "others")


def normalize_difficulty(label):
    if label is None:
        return None
    key = str(label).strip().lower()
    key = _DIFFICULTY_ALIASES.get(key, key)
    return key if key in DIFFICULTIES else None


def _fold(name):
    return name.strip().casefold()


@dataclass(frozen=True)
class ColumnSpec:
    table_index: int
    name: str
    data_type: str = "text"
    raw_type: Optional[str] = None
    description: Optional[str] = None
    value_description: Optional[str] = None
    sample_values: tuple = ()

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise IntegrityError("column name must be non-empty")
        if self.data_type not in DATA_TYPES:
            raise IntegrityError(f"unknown data type {self.data_type!r} for column {self.name!r}")
        if len(set(self.sample_values)) != len(self.sample_values):
            raise IntegrityError(f"duplicate sample values for column {self.name!r}")
        if self.raw_type is None:
            object.__setattr__(self, "raw_type", self.data_type)


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple
    primary_key_columns: tuple = ()

    def __post_init__(self):
        seen = set()
        for col in self.columns:
            key = _fold(col.name)
            if key in seen:
                raise IntegrityError(f"duplicate column {col.name!r} in table {self.name!r}")
            seen.add(key)
        for ordinal in self.primary_key_columns:
            if not 0 <= ordinal < len(self.columns):
                raise IntegrityError(f"primary key ordinal {ordinal} out of range in {self.name!r}")

    def column_ordinal(self, name):
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        folded = _fold(name)
        for i, col in enumerate(self.columns):
            if _fold(col.name) == folded:
                return i
        raise KeyError(f"no column {name!r} in table {self.name!r}")

    def column(self, name):
        return self.columns[self.column_ordinal(name)]

    @property
    def primary_key_names(self):
        return [self.columns[i].name for i in self.primary_key_columns]


@dataclass(frozen=True)
class ForeignKeyLink:
    from_table: str
    from_column: str
    to_table: str
    to_column: str


@dataclass(frozen=True)
class DatabaseSchema:
    db_id: str
    tables: tuple
    foreign_keys: tuple = ()
    storage_path: Optional[str] = None

    def __post_init__(self):
        if not self.tables:
            raise IntegrityError(f"database {self.db_id!r} has no tables")
        seen = set()
        for t in self.tables:
            if _fold(t.name) in seen:
                raise IntegrityError(f"duplicate table {t.name!r} in {self.db_id!r}")
            seen.add(_fold(t.name))
        for fk in self.foreign_keys:
            try:
                self.table(fk.from_table).column(fk.from_column)
                target = self.table(fk.to_table)
                target.column(fk.to_column)
            except KeyError as exc:
                raise IntegrityError(f"dangling foreign key {fk} in {self.db_id!r}") from exc

    def table_ordinal(self, name):
        for i, t in enumerate(self.tables):
            if t.name == name:
                return i
        folded = _fold(name)
        for i, t in enumerate(self.tables):
            if _fold(t.name) == folded:
                return i
        raise KeyError(f"no table {name!r} in {self.db_id!r}")

    def table(self, name):
        return self.tables[self.table_ordinal(name)]

    def column(self, table, column):
        return self.table(table).column(column)

    def iter_columns(self):
        """Yield (table, column) pairs in ingestion order."""
        for t in self.tables:
            for c in t.columns:
                yield t, c

    def column_identifier(self, table_ordinal, column_ordinal):
        if not 0 <= table_ordinal < len(self.tables):
            raise OutOfRange(f"table ordinal {table_ordinal} out of range for {self.db_id!r}")
        table = self.tables[table_ordinal]
        if not 0 <= column_ordinal < len(table.columns):
            raise OutOfRange(f"column ordinal {column_ordinal} out of range for {table.name!r}")
        return f"{table.name}.{table.columns[column_ordinal].name}"

    def qualified(self, table, column):
        """Canonical 'table.column' identifier for names in any case."""
        t = self.table_ordinal(table)
        c = self.tables[t].column_ordinal(column)
        return self.column_identifier(t, c)

    def resolve(self, identifier):
        """Split a qualified identifier back into (TableSchema, ColumnSpec)."""
        table_name, sep, column_name = identifier.partition(".")
        if not sep:
            raise KeyError(f"not a qualified identifier: {identifier!r}")
        # table names never contain '.', column names might
        table = self.table(table_name)
        return table, table.column(column_name)


@dataclass(frozen=True)
class QuestionTask:
    question_id: str
    db_id: str
    question: str
    hint: Optional[str] = None
    gold_sql: Optional[str] = None
    difficulty: Optional[str] = None
    difficulty_label: Optional[str] = None
    extra: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise ParseError(f"question {self.question_id!r} has empty text")


def column_identifier(schema, table_ordinal, column_ordinal):
    """'table.column' for the given ordinals, using source spelling."""
    return schema.column_identifier(table_ordinal, column_ordinal)


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _read_description_csv(path):
    """Parse one BIRD description sidecar. Undecodable bytes are replaced."""
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8-sig", errors="replace")
    rows = {}
    for rec in csv.DictReader(io.StringIO(text)):
        rec = {(k or "").strip().lower(): (v or "").strip() for k, v in rec.items()}
        name = rec.get("original_column_name", "")
        if not name:
            continue
        rows[_fold(name)] = (
            rec.get("column_description") or None,
            rec.get("value_description") or None,
        )
    return rows


def _storage_path(db_root, db_id):
    if db_root is None:
        return None
    root = Path(db_root) / db_id
    for suffix in (".sqlite", ".db", ".sqlite3"):
        candidate = root / f"{db_id}{suffix}"
        if candidate.exists():
            return str(candidate)
    return str(root / f"{db_id}.sqlite")


def _schema_from_entry(entry, fmt, db_root):
    try:
        db_id = entry["db_id"]
        table_names = entry.get("table_names_original") or entry["table_names"]
        columns = entry.get("column_names_original") or entry["column_names"]
        types = entry["column_types"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed database entry: missing {exc}") from exc
    if len(types) != len(columns):
        raise ParseError(f"{db_id}: {len(columns)} columns but {len(types)} types")

    descriptions = {}
    if fmt == "bird_tables_json" and db_root is not None:
        desc_dir = Path(db_root) / db_id / "database_description"
        for tname in table_names:
            p = desc_dir / f"{tname}.csv"
            if p.exists():
                descriptions[_fold(tname)] = _read_description_csv(p)

    per_table = [[] for _ in table_names]
    global_index = {}
    for gidx, (pair, raw_type) in enumerate(zip(columns, types)):
        t_idx, cname = pair
        if t_idx == -1:
            continue
        if not 0 <= t_idx < len(table_names):
            raise IntegrityError(f"{db_id}: column {cname!r} references table {t_idx}")
        desc, vdesc = descriptions.get(_fold(table_names[t_idx]), {}).get(_fold(cname), (None, None))
        spec = ColumnSpec(
            table_index=t_idx,
            name=cname,
            data_type=normalize_type(raw_type),
            raw_type=raw_type,
            description=desc,
            value_description=vdesc,
        )
        global_index[gidx] = (t_idx, len(per_table[t_idx]))
        per_table[t_idx].append(spec)

    pks = [[] for _ in table_names]
    for pk in entry.get("primary_keys", []):
        for gidx in pk if isinstance(pk, list) else [pk]:
            if gidx not in global_index:
                raise IntegrityError(f"{db_id}: primary key references unknown column {gidx}")
            t_idx, c_idx = global_index[gidx]
            if c_idx not in pks[t_idx]:
                pks[t_idx].append(c_idx)

    tables = tuple(
        TableSchema(name=n, columns=tuple(cols), primary_key_columns=tuple(pk))
        for n, cols, pk in zip(table_names, per_table, pks)
    )

    fks = []
    for link in entry.get("foreign_keys", []):
        try:
            src, dst = link
            (st, sc), (dt, dc) = global_index[src], global_index[dst]
        except (KeyError, ValueError, TypeError) as exc:
            raise IntegrityError(f"{db_id}: foreign key {link!r} references an unknown column") from exc
        if dc not in pks[dt]:
            log.warning("%s: foreign key target %s.%s is not a declared primary key",
                        db_id, table_names[dt], tables[dt].columns[dc].name)
        fks.append(ForeignKeyLink(table_names[st], tables[st].columns[sc].name,
                                  table_names[dt], tables[dt].columns[dc].name))

    return DatabaseSchema(db_id=db_id, tables=tables, foreign_keys=tuple(fks),
                          storage_path=_storage_path(db_root, db_id))


def load_schema_catalog(path, format="spider_tables_json", db_root=None):
    """Load every database of a tables.json file.

    ``db_root`` is the directory holding ``<db_id>/<db_id>.sqlite`` (and,
    for BIRD, ``<db_id>/database_description/*.csv``).
    """
    if format not in ("spider_tables_json", "bird_tables_json"):
        raise ValueError(f"unknown catalog format {format!r}")
    data = _read_json(path)
    if not isinstance(data, list):
        raise ParseError(f"{path}: expected a JSON array of databases")
    return [_schema_from_entry(entry, format, db_root) for entry in data]


def catalog_by_id(schemas):
    return {s.db_id: s for s in schemas}


def schema_to_entry(schema):
    """Inverse of the tables.json reader for one database."""
    column_names = [[-1, "*"]]
    column_types = ["text"]
    gidx = {}
    for t_idx, table in enumerate(schema.tables):
        for c_idx, col in enumerate(table.columns):
            gidx[(t_idx, c_idx)] = len(column_names)
            column_names.append([t_idx, col.name])
            column_types.append(col.raw_type)
    primary_keys = []
    for t_idx, table in enumerate(schema.tables):
        keys = [gidx[(t_idx, c)] for c in table.primary_key_columns]
        if len(keys) == 1:
            primary_keys.append(keys[0])
        elif keys:
            primary_keys.append(keys)
    foreign_keys = []
    for fk in schema.foreign_keys:
        st = schema.table_ordinal(fk.from_table)
        dt = schema.table_ordinal(fk.to_table)
        foreign_keys.append([
            gidx[(st, schema.tables[st].column_ordinal(fk.from_column))],
            gidx[(dt, schema.tables[dt].column_ordinal(fk.to_column))],
        ])
    return {
        "db_id": schema.db_id,
        "table_names_original": [t.name for t in schema.tables],
        "table_names": [t.name.lower() for t in schema.tables],
        "column_names_original": column_names,
        "column_names": [[t, n.lower()] for t, n in column_names],
        "column_types": column_types,
        "primary_keys": primary_keys,
        "foreign_keys": foreign_keys,
    }


def dump_schema_catalog(schemas, path, db_root=None):
    """Write schemas as tables.json; descriptions go to BIRD sidecars under db_root."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([schema_to_entry(s) for s in schemas], fh, indent=2)
    if db_root is None:
        return
    for schema in schemas:
        if not any(c.description or c.value_description for _, c in schema.iter_columns()):
            continue
        desc_dir = Path(db_root) / schema.db_id / "database_description"
        desc_dir.mkdir(parents=True, exist_ok=True)
        for table in schema.tables:
            with open(desc_dir / f"{table.name}.csv", "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["original_column_name", "column_name", "column_description",
                            "data_format", "value_description"])
                for col in table.columns:
                    w.writerow([col.name, "", col.description or "", col.data_type,
                                col.value_description or ""])


_QUESTION_KEYS = ("question",)
_SQL_KEYS = ("gold_sql", "query", "SQL", "sql")
_HINT_KEYS = ("hint", "evidence")
_DIFFICULTY_KEYS = ("difficulty", "hardness")


def _first(record, keys):
    for k in keys:
        if k in record and record[k] not in (None, ""):
            return record[k]
    return None


def _read_records(path):
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if not stripped:
        return []
    if stripped.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return data
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return records


def load_question_set(path, catalog=None, strict=False):
    """Read a JSON array (or JSONL file) of question records.

    Both Spider (``query``) and BIRD (``SQL``, ``evidence``, ``difficulty``)
    key conventions are understood. Records without ``question_id`` get their
    position as id.
    """
    records = _read_records(path)
    if not isinstance(records, list):
        raise ParseError(f"{path}: expected a JSON array of question records")
    known = None
    if catalog is not None:
        known = set(catalog) if isinstance(catalog, dict) else {s.db_id for s in catalog}
    tasks = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise ParseError(f"{path}: record {i} is not an object")
        question = _first(rec, _QUESTION_KEYS)
        if question is None or "db_id" not in rec:
            missing = "question" if question is None else "db_id"
            raise ParseError(f"{path}: record {i} lacks {missing!r}")
        db_id = rec["db_id"]
        if strict and known is not None and db_id not in known:
            raise UnknownDatabaseError(f"record {i}: database {db_id!r} not in catalog")
        label = _first(rec, _DIFFICULTY_KEYS)
        used = {"question_id", "db_id", *_QUESTION_KEYS, *_SQL_KEYS, *_HINT_KEYS, *_DIFFICULTY_KEYS}
        tasks.append(QuestionTask(
            question_id=str(rec.get("question_id", i)),
            db_id=db_id,
            question=question,
            hint=_first(rec, _HINT_KEYS),
            gold_sql=_first(rec, _SQL_KEYS),
            difficulty=normalize_difficulty(label),
            difficulty_label=None if label is None else str(label),
            extra={k: v for k, v in rec.items() if k not in used},
        ))
    return tasks


def open_readonly(path):
    """Open a single-file SQL database read-only; raises StorageError."""
    if path is None or not os.path.isfile(path):
        raise StorageError(f"database file not found: {path}")
    try:
        conn = sqlite3.connect(f"file:{Path(path).resolve().as_posix()}?mode=ro", uri=True,
                               check_same_thread=False)
        conn.execute("PRAGMA query_only = ON")
    except sqlite3.Error as exc:
        raise StorageError(f"cannot open {path}: {exc}") from exc
    return conn


def quote_identifier(name):
    return '"' + name.replace('"', '""') + '"'


def fetch_sample_values(schema, table, column, limit=SAMPLE_VALUE_CAP):
    """Most frequent distinct non-null values of one column, as text."""
    t = schema.table(table)
    c = t.column(column)
    conn = open_readonly(schema.storage_path)
    try:
        q = (f"SELECT {quote_identifier(c.name)} AS v FROM {quote_identifier(t.name)} "
             f"WHERE v IS NOT NULL GROUP BY v ORDER BY COUNT(*) DESC, v LIMIT ?")
        rows = conn.execute(q, (limit,)).fetchall()
    except sqlite3.Error as exc:
        raise StorageError(f"{schema.db_id}: cannot sample {t.name}.{c.name}: {exc}") from exc
    finally:
        conn.close()
    out = []
    for (v,) in rows:
        s = v.hex() if isinstance(v, bytes) else str(v)
        if s not in out:
            out.append(s)
    return tuple(out)


def attach_sample_values(schema, limit=SAMPLE_VALUE_CAP):
    """Return a copy of ``schema`` whose columns carry sample values."""
    tables = []
    for t in schema.tables:
        cols = tuple(replace(c, sample_values=fetch_sample_values(schema, t.name, c.name, limit))
                     for c in t.columns)
        tables.append(replace(t, columns=cols))
    return replace(schema, tables=tuple(tables))
