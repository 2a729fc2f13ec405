"""Question-relevant database values via keyword-to-value fuzzy matching.

Every word of the question, and every short run of consecutive words, is
matched against the distinct values of each text column. A value is kept
when its similarity ratio reaches the threshold; at most ``top_k`` values
are kept per keyword and column.
"""

import logging
import re
import sqlite3
from dataclasses import dataclass, field
from difflib import SequenceMatcher

from .errors import StorageError
from .schema import open_readonly, quote_identifier

log = logging.getLogger(__name__)

STOP_WORDS = frozenset(
    """
    a an the of in on at to for from by with about as into over under and or
    but not no is are was were be been being do does did have has had what
    which who whom whose when where why how this that these those it its
    their them they there than then all any each me my we our you your
    """.split()
)

DISTINCT_SCAN_CAP = 10_000

_WORD_RE = re.compile(r"\w+(?:[-'.]\w+)*")


@dataclass(frozen=True)
class MatchConfig:
    threshold: float = 0.85
    top_k: int = 2
    max_span_words: int = 4
    min_keyword_len: int = 3
    stop_words: frozenset = STOP_WORDS

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_span_words < 1:
            raise ValueError("max_span_words must be >= 1")


@dataclass(frozen=True)
class ContentMatch:
    table: str
    column: str
    value: str
    keyword: str
    score: float


@dataclass(frozen=True)
class ContentMatchSet:
    matches: tuple = ()
    warnings: tuple = field(default=(), compare=False)

    def __len__(self):
        return len(self.matches)

    def __iter__(self):
        return iter(self.matches)

    def grouped(self):
        """[(table, column, [values...])] in match order."""
        out = []
        index = {}
        for m in self.matches:
            key = (m.table, m.column)
            if key not in index:
                index[key] = len(out)
                out.append((m.table, m.column, []))
            out[index[key]][2].append(m.value)
        return out

    def as_dict(self):
        """{table: {column: [values]}}."""
        out = {}
        for t, c, vals in self.grouped():
            out.setdefault(t, {})[c] = list(vals)
        return out

    def render_lines(self):
        return [f"The column `{c}` in Table `{t}` has database values: [{', '.join(vals)}]"
                for t, c, vals in self.grouped()]

    def restricted(self, keep):
        return ContentMatchSet(tuple(m for m in self.matches if keep(m)), self.warnings)


def extract_keywords(question, config=None):
    """Words of the question plus all contiguous n-grams up to max_span_words."""
    config = config or MatchConfig()
    words = _WORD_RE.findall(question or "")
    seen = set()
    spans = []
    for i in range(len(words)):
        for n in range(1, config.max_span_words + 1):
            if i + n > len(words):
                break
            chunk = words[i:i + n]
            span = " ".join(chunk)
            if len(span) < config.min_keyword_len:
                continue
            if all(w.lower() in config.stop_words for w in chunk):
                continue
            if span not in seen:
                seen.add(span)
                spans.append(span)
    return spans


def match_score(keyword, value):
    """Sequence-matcher ratio 2*M/T over case-folded strings."""
    if not keyword or not value:
        return 0.0
    return SequenceMatcher(None, keyword.lower(), value.lower(), autojunk=False).ratio()


class StringMatcher:
    """Default keyword/value similarity; other matchers only need ``score``."""

    def score(self, keyword, value):
        return match_score(keyword, value)


def _distinct_text_values(conn, table, column, cap):
    q = (f"SELECT DISTINCT {quote_identifier(column)} FROM {quote_identifier(table)} "
         f"WHERE {quote_identifier(column)} IS NOT NULL LIMIT ?")
    rows = conn.execute(q, (cap + 1,)).fetchall()
    if len(rows) > cap:
        return None
    return [v for (v,) in rows if isinstance(v, str) and v.strip()]


def _scan_column(keywords, values, config, matcher, table, column):
    found = []
    folded = [(v, v.lower()) for v in values]
    for kw in keywords:
        kw_low = kw.lower()
        sm = SequenceMatcher(None, autojunk=False)
        sm.set_seq1(kw_low)
        hits = []
        for value, low in folded:
            if isinstance(matcher, StringMatcher):
                sm.set_seq2(low)
                # quick upper bounds first; exact ratio only when they pass
                if sm.real_quick_ratio() < config.threshold or sm.quick_ratio() < config.threshold:
                    continue
                score = sm.ratio()
            else:
                score = matcher.score(kw, value)
            if score >= config.threshold:
                hits.append((score, value))
        hits.sort(key=lambda h: (-h[0], h[1]))
        found.extend(ContentMatch(table, column, v, kw, s) for s, v in hits[:config.top_k])
    return found


def extract_content(question, schema, config=None, matcher=None):
    """Collect values of text columns that fuzzily match question keywords."""
    config = config or MatchConfig()
    matcher = matcher or StringMatcher()
    keywords = extract_keywords(question, config)
    if not keywords:
        return ContentMatchSet()
    conn = open_readonly(schema.storage_path)
    warnings = []
    best = {}
    order = []
    try:
        for t_ord, table in enumerate(schema.tables):
            for c_ord, col in enumerate(table.columns):
                if col.data_type != "text":
                    continue
                try:
                    values = _distinct_text_values(conn, table.name, col.name, DISTINCT_SCAN_CAP)
                except sqlite3.Error as exc:
                    raise StorageError(f"{schema.db_id}: cannot scan {table.name}.{col.name}: {exc}") from exc
                if values is None:
                    msg = f"{table.name}.{col.name}: more than {DISTINCT_SCAN_CAP} distinct values, skipped"
                    log.warning(msg)
                    warnings.append(msg)
                    continue
                for m in _scan_column(keywords, values, config, matcher, table.name, col.name):
                    key = (t_ord, c_ord, m.value)
                    if key not in best:
                        order.append(key)
                        best[key] = m
                    elif m.score > best[key].score:
                        best[key] = m
    finally:
        conn.close()
    # schema order, then best score first, then value text
    order.sort(key=lambda k: (k[0], k[1], -best[k].score, k[2]))
    return ContentMatchSet(tuple(best[k] for k in order), tuple(warnings))
