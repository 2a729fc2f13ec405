import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlharness.errors import EmbedderError, UnparseableError
from sqlharness.schema import ColumnSpec, DatabaseSchema, TableSchema, attach_sample_values
from sqlharness.selection import (
    HashingEmbedder,
    SelectionSet,
    aggregate_metrics,
    build_column_sentence,
    cosine_scores,
    dump_selections,
    extract_references,
    load_selections,
    retrieve_columns,
    score_selection,
    unescape,
)

ALAMEDA_SQL = ("SELECT `FRPM Count (K-12)`/`Enrollment (K-12)` FROM frpm WHERE `County Name`='Alameda' "
           "ORDER BY (CAST(`FRPM Count (K-12)` AS REAL) / `Enrollment (K-12)`) DESC LIMIT 1")
CASE_2_SQL = ("SELECT T2.Zip FROM frpm AS T1 INNER JOIN schools AS T2 ON T1.CDSCode = T2.CDSCode "
              "WHERE T1.`District Name` = 'Fresno County Office of Education' AND T1.`Charter School (Y/N)` = 1")
QUESTION_2 = "Please list the zip code of all the charter schools in Fresno County Office of Education."


def test_ratio_query(schools):
    sel = extract_references(ALAMEDA_SQL, schools)
    assert sel.tables == {"frpm"}
    assert sel.column_names == {"FRPM Count (K-12)", "Enrollment (K-12)", "County Name"}
    assert sel.mode == "program_aided"


def test_ratio_query_with_backticked_value(schools):
    # the value is written as an identifier; it names no column and is ignored
    sel = extract_references(ALAMEDA_SQL.replace("'Alameda'", "`Alameda`"), schools)
    assert sel.column_names == {"FRPM Count (K-12)", "Enrollment (K-12)", "County Name"}


def test_alias_join(schools):
    sel = extract_references(CASE_2_SQL, schools, mode="ground_truth")
    assert sel.tables == {"frpm", "schools"}
    assert {"schools.Zip", "frpm.District Name", "frpm.Charter School (Y/N)",
            "frpm.CDSCode", "schools.CDSCode"} <= sel.columns
    assert "schools.District" not in sel.columns


def test_no_table_reference(schools):
    with pytest.raises(UnparseableError):
        extract_references("SELECT 1", schools)
    with pytest.raises(UnparseableError):
        extract_references("  ", schools)


def test_without_from_falls_back_to_names(concert):
    sel = extract_references("singer Name", concert)
    assert sel.tables == {"singer"}


def test_comma_from_list_and_case(spider):
    sql = "select t.theme, f.cows from FARM_COMPETITION as t, farm f where t.year = f.year"
    sel = extract_references(sql, spider["farm"])
    assert sel.tables == {"farm_competition", "farm"}
    assert {"farm_competition.Theme", "farm.Cows", "farm.Year", "farm_competition.Year"} <= sel.columns


def test_bare_shared_column_goes_to_every_selected_table(spider):
    sel = extract_references("SELECT Year FROM farm JOIN farm_competition", spider["farm"])
    assert {"farm.Year", "farm_competition.Year"} <= sel.columns


def test_subquery(concert):
    sql = "SELECT Name FROM singer WHERE Age = (SELECT max(Age) FROM singer)"
    sel = extract_references(sql, concert)
    assert sel.columns == {"singer.Name", "singer.Age"}


@pytest.mark.parametrize("which", ["spider", "bird"])
def test_references_resolve_and_are_stable(which, spider, bird, spider_tasks, bird_tasks):
    catalog, tasks = (spider, spider_tasks) if which == "spider" else (bird, bird_tasks)
    for t in tasks:
        schema = catalog[t.db_id]
        a = extract_references(t.gold_sql, schema, "ground_truth")
        assert a == extract_references(t.gold_sql, schema, "ground_truth")
        for col in a.columns:
            table, spec = schema.resolve(col)
            assert table.name in a.tables
        assert a.tables


def test_selection_set_invariants():
    with pytest.raises(ValueError):
        SelectionSet({"a"}, {"b.x"})
    with pytest.raises(ValueError):
        SelectionSet({"a"}, {"a.x"}, mode="retrieval")
    with pytest.raises(ValueError):
        SelectionSet({"a"}, set(), integration="medium")


def test_selection_file_round_trip(tmp_path):
    a = SelectionSet({"t"}, {"t.x"}, "retrieval", "hard", scores={"t.x": 0.5})
    b = SelectionSet({"u"}, set())
    path = tmp_path / "sel.jsonl"
    dump_selections(path, [("db", "q1", a), ("db", "q2", b)])
    rows = load_selections(path)
    assert rows == {"q1": a, "q2": b}
    assert rows["q1"].scores == {"t.x": 0.5}


def package_schema(description="package size dimensions", samples=("small", "medium", "long")):
    col = ColumnSpec(0, "size", "text", raw_type="string", description=description, sample_values=samples)
    return DatabaseSchema("shop", (TableSchema("package", (col,)),))


def test_column_sentence_example():
    assert build_column_sentence(package_schema(), "package", "size") == (
        "Column name 'size' of type 'STRING' from the table 'package'. "
        "Description: 'package size dimensions'. Value examples: 'small', 'medium', 'long'.")


def test_column_sentence_bare():
    s = package_schema(description=None, samples=())
    assert build_column_sentence(s, "package", "size") == \
        "Column name 'size' of type 'STRING' from the table 'package'."


def test_apostrophe_escaping():
    desc = "the customer's box"
    sentence = build_column_sentence(package_schema(description=desc), "package", "size")
    assert "customer\\'s" in sentence
    inner = sentence.split("Description: '")[1].split("'. Value")[0]
    assert unescape(inner) == desc
    e = HashingEmbedder()
    assert np.array_equal(e.embed([sentence])[0], e.embed([sentence])[0])


def scalar_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return dot / (na * nb) if na and nb else 0.0


def oracle_top_k(question, schema, embedder, k):
    ids = [f"{t.name}.{c.name}" for t, c in schema.iter_columns()]
    sentences = [build_column_sentence(schema, t.name, c.name) for t, c in schema.iter_columns()]
    vecs = embedder.embed([question] + sentences).tolist()
    ranked = sorted(range(len(ids)), key=lambda i: (-scalar_cosine(vecs[0], vecs[i + 1]), i))
    return [ids[i] for i in ranked[:k]]


def test_retrieval_golden(schools):
    sampled = attach_sample_values(schools)
    sel = retrieve_columns(QUESTION_2, sampled, HashingEmbedder(), top_k=5)
    assert sel.columns == {"schools.District", "satscores.dname", "frpm.District Name",
                           "schools.DOCType", "frpm.District Type"}
    assert sel.tables == {"schools", "satscores", "frpm"}
    assert sel.mode == "retrieval" and set(sel.scores) == sel.columns


@pytest.mark.parametrize("question", [QUESTION_2, "average math score", "K-12 enrollment", "zip"])
def test_retrieval_matches_scalar_oracle(schools, question):
    sampled = attach_sample_values(schools)
    e = HashingEmbedder()
    for k in (1, 3, 5, 10):
        sel = retrieve_columns(question, sampled, e, top_k=k)
        assert sel.columns == set(oracle_top_k(question, sampled, e, k))


@pytest.mark.parametrize("db", ["concert_singer", "farm"])
def test_retrieval_nested_in_k(spider, spider_tasks, db):
    schema = attach_sample_values(spider[db])
    n = sum(1 for _ in schema.iter_columns())
    for t in [t for t in spider_tasks if t.db_id == db]:
        prev = set()
        for k in range(1, n + 1):
            cur = retrieve_columns(t.question, schema, top_k=k).columns
            assert prev <= cur and len(cur) == k
            prev = cur
        assert prev == {f"{a.name}.{c.name}" for a, c in schema.iter_columns()}


def test_retrieval_nested_in_k_bird(schools, bird_tasks):
    schema = attach_sample_values(schools)
    for t in bird_tasks:
        prev = set()
        for k in range(1, 37):
            cur = retrieve_columns(t.question, schema, top_k=k).columns
            assert prev <= cur
            prev = cur


class EchoEmbedder:
    """Returns the question's vector for one chosen sentence."""

    def __init__(self, target):
        self.target = target

    def embed(self, texts):
        rng = np.random.default_rng(0)
        out = rng.normal(size=(len(texts), 16))
        for i, t in enumerate(texts[1:], 1):
            if t == self.target:
                out[i] = out[0]
        return out


def test_identical_vector_ranks_first(concert):
    target = build_column_sentence(concert, "singer", "Country")
    sel = retrieve_columns("anything", concert, EchoEmbedder(target), top_k=1)
    assert sel.columns == {"singer.Country"}
    assert sel.scores["singer.Country"] == pytest.approx(1.0)


def test_full_top_k_has_full_recall(concert):
    n = sum(1 for _ in concert.iter_columns())
    every = SelectionSet({t.name for t in concert.tables},
                         {f"{t.name}.{c.name}" for t, c in concert.iter_columns()})
    got = retrieve_columns("singers", concert, top_k=n)
    assert score_selection(got, every).recall == 1.0


def test_embedder_errors(concert):
    class Broken:
        def embed(self, texts):
            raise RuntimeError("down")

    class Short:
        def embed(self, texts):
            return np.zeros((1, 4))

    with pytest.raises(EmbedderError):
        retrieve_columns("q", concert, Broken())
    with pytest.raises(EmbedderError):
        retrieve_columns("q", concert, Short())
    with pytest.raises(ValueError):
        retrieve_columns("q", concert, top_k=0)


def test_cosine_scores_oracle():
    rng = random.Random(3)
    for _ in range(50):
        q = [rng.uniform(-1, 1) for _ in range(6)]
        m = [[rng.uniform(-1, 1) for _ in range(6)] for _ in range(4)] + [[0.0] * 6]
        got = cosine_scores(q, m)
        for row, g in zip(m, got):
            assert g == pytest.approx(scalar_cosine(q, row), abs=1e-12)


def sel(items):
    items = set(items)
    return SelectionSet({i.partition(".")[0] for i in items}, items)


def test_metric_examples():
    m = score_selection(sel({"t.a", "t.b", "t.c"}), sel({"t.a", "t.b"}))
    assert m.recall == 1.0
    assert m.precision == pytest.approx(2 / 3, abs=1e-12)
    assert m.f1 == pytest.approx(0.8, abs=1e-12)
    same = score_selection(sel({"t.a"}), sel({"t.a"}))
    assert (same.recall, same.precision, same.f1) == (1.0, 1.0, 1.0)
    none = score_selection(sel({"t.a"}), sel({"t.b"}))
    assert (none.recall, none.precision, none.f1) == (0.0, 0.0, 0.0)


def test_metric_edge_cases():
    empty = score_selection(sel(()), sel(()))
    assert (empty.recall, empty.precision, empty.f1) == (1.0, 1.0, 1.0)
    only_pred = score_selection(sel({"t.a"}), sel(()))
    assert only_pred.recall is None and only_pred.precision == 0.0
    agg = aggregate_metrics([only_pred, score_selection(sel({"t.a"}), sel({"t.a", "t.b"}))])
    assert agg.recall == 0.5 and agg.precision == 0.5 and agg.n == 2
    assert aggregate_metrics([]).n == 0
    tables = score_selection(sel({"t.a", "u.b"}), sel({"t.c"}), level="table")
    assert tables.recall == 1.0 and tables.precision == 0.5


def test_metrics_case_fold():
    m = score_selection(sel({"T.A"}), sel({"t.a"}))
    assert m.f1 == 1.0


universe = [f"t.c{i}" for i in range(8)]


@settings(max_examples=300, deadline=None)
@given(st.sets(st.sampled_from(universe)), st.sets(st.sampled_from(universe), min_size=1))
def test_f1_bounds(pred, truth):
    m = score_selection(sel(pred), sel(truth))
    assert 0 <= m.f1 <= min(1.0, 2 * min(m.precision, m.recall)) + 1e-12
    if m.precision + m.recall > 0:
        assert m.f1 == pytest.approx(2 * m.precision * m.recall / (m.precision + m.recall))
