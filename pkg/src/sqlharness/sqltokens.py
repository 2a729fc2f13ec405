"""Lexical SQL tokenizer.

Deliberately grammar-free: reference extraction, ORDER BY detection and
DISTINCT stripping only need to know where identifiers, literals and
parentheses are.
"""

import re
from dataclasses import dataclass

KEYWORDS = frozenset(
    """
    select from where join inner left right full outer cross natural on using
    group by order having limit offset union intersect except all distinct as
    and or not in is null like glob between case when then else end exists
    cast asc desc with recursive values insert update delete into set create
    drop alter table view index primary key foreign references default
    """.split()
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>--[^\n]*|/\*.*?\*/)
  | (?P<string>'(?:[^']|'')*')
  | (?P<dquote>"(?:[^"]|"")*")
  | (?P<backtick>`(?:[^`]|``)*`)
  | (?P<bracket>\[[^\]]*\])
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_$]*)
  | (?P<op><>|<=|>=|!=|==|\|\||.)
    """,
    re.VERBOSE | re.DOTALL,
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident, qident, string, number, op
    value: str
    start: int
    end: int

    @property
    def is_identifier(self):
        return self.kind in ("ident", "qident")

    @property
    def is_keyword(self):
        return self.kind == "ident" and self.value.lower() in KEYWORDS

    def word(self):
        """Lowercased keyword text, or '' for non-bare tokens."""
        return self.value.lower() if self.kind == "ident" else ""


def tokenize(sql):
    tokens = []
    for m in _TOKEN_RE.finditer(sql):
        kind = m.lastgroup
        text = m.group()
        if kind in ("ws", "comment"):
            continue
        if kind == "backtick":
            tokens.append(Token("qident", text[1:-1].replace("``", "`"), m.start(), m.end()))
        elif kind == "dquote":
            tokens.append(Token("qident", text[1:-1].replace('""', '"'), m.start(), m.end()))
        elif kind == "bracket":
            tokens.append(Token("qident", text[1:-1], m.start(), m.end()))
        elif kind == "string":
            tokens.append(Token("string", text[1:-1].replace("''", "'"), m.start(), m.end()))
        else:
            tokens.append(Token(kind, text, m.start(), m.end()))
    return tokens


def has_top_level_order_by(sql):
    """True iff ORDER BY occurs outside every parenthesised sub-expression."""
    depth = 0
    tokens = tokenize(sql)
    for i, tok in enumerate(tokens):
        if tok.kind == "op" and tok.value == "(":
            depth += 1
        elif tok.kind == "op" and tok.value == ")":
            depth = max(0, depth - 1)
        elif depth == 0 and tok.word() == "order":
            if i + 1 < len(tokens) and tokens[i + 1].word() == "by":
                return True
    return False


def strip_distinct(sql):
    """Remove every DISTINCT keyword, leaving literals untouched."""
    pieces = []
    last = 0
    for tok in tokenize(sql):
        if tok.word() == "distinct":
            pieces.append(sql[last:tok.start])
            last = tok.end
    pieces.append(sql[last:])
    return "".join(pieces)
