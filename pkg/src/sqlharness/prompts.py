"""Linear prompt serialization of schema, auxiliary information and question.

Two template families exist. The concise family writes the schema as
``| db | table : col , col | table : ...`` followed by bracketed blocks;
the verbose family describes the same structure in English sentences.
Output is byte-for-byte reproducible for identical inputs.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import EmptySelectionError, MissingContentError

PREAMBLE = ("This is a task converting text into SQL statement. We will first given the "
            "dataset schema and then ask a question in text. You are asked to generate SQL statement.")
SQL_MARKER = "[SQL]:"
VERBOSE_MARKER = "The corresponding SQL is:"
CONTENT_HEADER = "[Database values that related with questions]:"
HINT_HEADER = "[Additional Info]:"
DESCRIPTION_HEADER = "[detailed description of tables and columns]:"
CONCISE_EXAMPLE = "Here is an example: Convert text to SQL:"
CONCISE_TEST = "Here is the test question to be answered: Convert text to SQL:"
VERBOSE_EXAMPLE = "Here is an example:"
VERBOSE_TEST = "Here is the test question to be answered:"
VERBOSE_INTRO = "Let us take a question and turn it into a SQL statement about database tables."
VERBOSE_QUESTION = "Let us take a text question and turn it into a SQL statement about database tables."

_DELIMITERS = (",", "|", ":")


@dataclass(frozen=True)
class PromptStyle:
    mode: str = "concise"
    include_data_types: bool = True
    include_descriptions: str = "none"  # none | selected | full
    include_content_values: bool = False
    include_hint: bool = True
    lowercase_names: bool = False
    include_preamble: bool = True
    selection: Optional[object] = None

    def __post_init__(self):
        if self.mode not in ("concise", "verbose"):
            raise ValueError(f"unknown prompt mode {self.mode!r}")
        if self.include_descriptions not in ("none", "selected", "full"):
            raise ValueError(f"unknown description policy {self.include_descriptions!r}")


@dataclass(frozen=True)
class PromptBundle:
    x1: str
    x2: str
    question: str
    demonstrations: tuple
    rendered: str
    mode: str = "concise"
    dropped: tuple = field(default=(), compare=False)


@dataclass(frozen=True)
class TokenBudget:
    fits: bool
    estimate: int
    overflow_chars: int


# -- schema visibility ------------------------------------------------------

@dataclass
class _View:
    tables: list  # (TableSchema, [ColumnSpec])
    primary_keys: list  # (table name, column name)
    foreign_keys: list  # ForeignKeyLink


def _visible(schema, selection):
    if selection is None or getattr(selection, "integration", "soft") != "hard":
        tables = [(t, list(t.columns)) for t in schema.tables]
        pks = [(t.name, n) for t in schema.tables for n in t.primary_key_names]
        return _View(tables, pks, list(schema.foreign_keys))

    if not selection.columns and not selection.tables:
        raise EmptySelectionError("hard column selection is empty")
    chosen_cols = {c.casefold() for c in selection.columns}
    chosen_tables = {t.casefold() for t in selection.tables}
    tables, kept = [], set()
    for t in schema.tables:
        cols = [c for c in t.columns if f"{t.name}.{c.name}".casefold() in chosen_cols]
        if not cols and t.name.casefold() not in chosen_tables:
            continue
        if not cols:
            # table referenced without any column (e.g. COUNT(*)): keep its key
            cols = [t.columns[i] for i in t.primary_key_columns] or [t.columns[0]]
        tables.append((t, cols))
        kept.update((t.name, c.name) for c in cols)
    pks = [(t.name, n) for t, _ in tables for n in t.primary_key_names if (t.name, n) in kept]
    fks = [fk for fk in schema.foreign_keys
           if (fk.from_table, fk.from_column) in kept and (fk.to_table, fk.to_column) in kept]
    return _View(tables, pks, fks)


def _name(name, style):
    out = name.lower() if style.lowercase_names else name
    if any(d in out for d in _DELIMITERS):
        out = "`" + out.replace("`", "``") + "`"
    return out


def _selection_for(style, selection):
    return selection if selection is not None else style.selection


# -- concise ----------------------------------------------------------------

def serialize_schema_concise(schema, style=None, selection=None):
    """Concise schema block: tables, optional typed column list, keys."""
    style = style or PromptStyle()
    view = _visible(schema, _selection_for(style, selection))
    n = lambda s: _name(s, style)  # noqa: E731

    tables = " | ".join(f"{n(t.name)} : " + " , ".join(n(c.name) for c in cols)
                        for t, cols in view.tables)
    lines = [f"[Schema (values)]: | {n(schema.db_id)} | {tables};"]
    if style.include_data_types:
        typed = " | ".join(f"{n(t.name)} : {n(c.name)} ({c.data_type})"
                           for t, cols in view.tables for c in cols)
        lines.append(f"[Column names (type)]: {typed};")
    pks = " | ".join(f"{n(t)} : {n(c)}" for t, c in view.primary_keys)
    lines.append(f"[Primary Keys]: {pks};")
    fks = " | ".join(f"{n(fk.from_table)} : {n(fk.from_column)} equals {n(fk.to_table)} : {n(fk.to_column)}"
                     for fk in view.foreign_keys)
    lines.append(f"[Foreign Keys]: {fks}".rstrip())
    return "\n".join(lines)


def _described_columns(schema, style, selection, view):
    if style.include_descriptions == "none":
        return []
    visible = [(t, c) for t, cols in view.tables for c in cols]
    if style.include_descriptions == "selected":
        chosen = {c.casefold() for c in selection.columns}
        visible = [(t, c) for t, c in visible if f"{t.name}.{c.name}".casefold() in chosen]
    return [(t, c) for t, c in visible if c.description or c.value_description]


def _description_block_concise(described):
    if not described:
        return ""
    lines = [DESCRIPTION_HEADER]
    current = None
    for t, c in described:
        if t.name != current:
            lines.append(f'Column description of Table "{t.name}" have the following descriptions:')
            current = t.name
        line = f'Column "{c.name}" of Table "{t.name}"'
        if c.description:
            line += f', means "{c.description}"'
        if c.value_description:
            line += f', has value descriptions "{c.value_description}"'
        lines.append(line)
    lines.append(";")
    return "\n".join(lines)


def _visible_matches(content, view, selection):
    if content is None:
        return None
    if selection is None or getattr(selection, "integration", "soft") != "hard":
        return content
    shown = {(t.name.casefold(), c.name.casefold()) for t, cols in view.tables for c in cols}
    return content.restricted(lambda m: (m.table.casefold(), m.column.casefold()) in shown)


# -- verbose ----------------------------------------------------------------

def serialize_schema_verbose(schema, style=None, selection=None):
    """English rendering of the schema, one sentence per table."""
    style = style or PromptStyle(mode="verbose")
    view = _visible(schema, _selection_for(style, selection))
    count = len(view.tables)
    titles = ", ".join(t.name for t, _ in view.tables)
    if count == 1:
        parts = [VERBOSE_INTRO, f"There is 1 table. Its title is: {titles}."]
    else:
        parts = [VERBOSE_INTRO, f"There are {count} tables. Their titles are: {titles}."]
    for k, (t, cols) in enumerate(view.tables, 1):
        if style.include_data_types:
            listing = ", ".join(f"{c.name} (Type is {c.data_type})" for c in cols)
            parts.append(f"Table {k} is {t.name}, and its column names and types are: {listing}.")
        else:
            listing = ", ".join(c.name for c in cols)
            parts.append(f"Table {k} is {t.name}, and its column names are: {listing}.")
    # key sentences use lowercase names, as in the reference template
    if view.primary_keys:
        keys = ", ".join(f"{c.lower()} from Table {t.lower()}" for t, c in view.primary_keys)
        parts.append(f"The primary keys are: {keys}.")
    if view.foreign_keys:
        links = ", ".join(
            f"{fk.from_column.lower()} from Table {fk.from_table.lower()} is equivalent with "
            f"{fk.to_column.lower()} from Table {fk.to_table.lower()}"
            for fk in view.foreign_keys)
        parts.append(f"The foreign keys are: {links}. Use foreign keys to join Tables.")
    return " ".join(parts)


def _verbose_x2(described, content, hint):
    parts = []
    if described:
        descs = "; ".join(
            f"Column {c.name} of Table {t.name}"
            + (f' means "{c.description}"' if c.description else "")
            + (f' has value descriptions "{c.value_description}"' if c.value_description else "")
            for t, c in described)
        parts.append(f"Column descriptions: {descs}.")
    if content is not None and len(content):
        groups = " ".join(f"Table {t} Column {c} have values: {', '.join(vals)};"
                          for t, c, vals in content.grouped())
        parts.append(f"Columns with relevant values: {groups}  Only use columns with relevant "
                     "values to generate SQL.")
    if hint:
        parts.append(f"Additional info: {hint}")
    return " ".join(parts)


# -- assembly ---------------------------------------------------------------

def _instance(schema, task, style, content, selection):
    if style.include_content_values and content is None:
        raise MissingContentError(f"question {task.question_id}: content values requested but none supplied")
    if style.include_descriptions == "selected" and selection is None:
        raise ValueError("include_descriptions='selected' needs a selection")
    view = _visible(schema, selection)
    described = _described_columns(schema, style, selection, view)
    matches = _visible_matches(content, view, selection) if style.include_content_values else None
    hint = task.hint if style.include_hint else None

    if style.mode == "concise":
        x1 = serialize_schema_concise(schema, style, selection)
        blocks = []
        desc = _description_block_concise(described)
        if desc:
            blocks.append(desc)
        if matches is not None:
            blocks.append("\n".join([CONTENT_HEADER, *matches.render_lines(), ";"]))
        if hint:
            blocks.append(f"{HINT_HEADER} {hint}")
        x2 = "\n".join(blocks)
        q = task.question.strip()
        body = "\n".join(p for p in (x1, x2, f"[Q]: {q};") if p)
    else:
        x1 = serialize_schema_verbose(schema, style, selection)
        x2 = _verbose_x2(described, matches, hint)
        q = task.question.strip()
        head = f"{x1} {x2}" if x2 else x1
        body = f"{head}  {VERBOSE_QUESTION} The question is: {q}"
    return x1, x2, q, body


def _complete_sql(sql):
    sql = sql.strip()
    return sql if sql.endswith(";") else sql + ";"


def make_demonstration(schema, task, style, content=None, selection=None):
    """Render a solved task as an (input, SQL) exemplar pair."""
    if not task.gold_sql:
        raise ValueError(f"demonstration {task.question_id} has no gold SQL")
    selection = _selection_for(style, selection)
    _, _, _, body = _instance(schema, task, style, content, selection)
    return body, task.gold_sql


def build_prompt(schema, task, style=None, content=None, selection=None, demos=()):
    """Assemble the full prompt for one question.

    ``demos`` is an ordered sequence of (input text, SQL) pairs placed
    before the test instance.
    """
    style = style or PromptStyle()
    selection = _selection_for(style, selection)
    x1, x2, q, body = _instance(schema, task, style, content, selection)
    demos = tuple((d_in, d_sql) for d_in, d_sql in demos)

    if style.mode == "concise":
        pieces = [PREAMBLE] if style.include_preamble else []
        pieces += [f"{CONCISE_EXAMPLE}\n{d_in}\n{SQL_MARKER} {_complete_sql(d_sql)}" for d_in, d_sql in demos]
        pieces.append(f"{CONCISE_TEST}\n{body}\n{SQL_MARKER}")
        rendered = "\n\n".join(pieces)
    else:
        lines = [PREAMBLE] if style.include_preamble else []
        lines += [f"{VERBOSE_EXAMPLE} {d_in} {VERBOSE_MARKER} {_complete_sql(d_sql)}" for d_in, d_sql in demos]
        lines.append(f"{VERBOSE_TEST} {body} {VERBOSE_MARKER}")
        rendered = "\n".join(lines)
    return PromptBundle(x1=x1, x2=x2, question=q, demonstrations=demos, rendered=rendered, mode=style.mode)


def estimate_token_budget(bundle, limit):
    """Character-proxy token count (ceil(chars / 4)) against ``limit`` tokens."""
    if limit <= 0:
        raise ValueError("limit must be positive")
    text = bundle.rendered if isinstance(bundle, PromptBundle) else str(bundle)
    estimate = math.ceil(len(text) / 4)
    return TokenBudget(fits=estimate <= limit, estimate=estimate,
                       overflow_chars=max(0, len(text) - 4 * limit))


def build_prompt_within_budget(schema, task, style, limit, content=None, selection=None, demos=()):
    """Build a prompt, shedding optional parts until it fits ``limit`` tokens.

    Shedding order: content values, full descriptions, then demonstrations
    from the front. The schema block and the question are never cut, so the
    result may still overflow; check ``estimate_token_budget`` on it.
    """
    demos = list(demos)
    dropped = []
    bundle = build_prompt(schema, task, style, content, selection, demos)
    if estimate_token_budget(bundle, limit).fits:
        return bundle
    if style.include_content_values:
        style = replace(style, include_content_values=False)
        dropped.append("content_values")
        bundle = build_prompt(schema, task, style, None, selection, demos)
    if not estimate_token_budget(bundle, limit).fits and style.include_descriptions == "full":
        style = replace(style, include_descriptions="none")
        dropped.append("descriptions")
        bundle = build_prompt(schema, task, style, None, selection, demos)
    while demos and not estimate_token_budget(bundle, limit).fits:
        demos.pop(0)
        dropped.append("demonstration")
        bundle = build_prompt(schema, task, style, None, selection, demos)
    return replace(bundle, dropped=tuple(dropped))
