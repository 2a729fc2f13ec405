import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlharness.errors import IntegrityError, OutOfRange, ParseError, UnknownDatabaseError
from sqlharness.schema import (
    SAMPLE_VALUE_CAP,
    ColumnSpec,
    DatabaseSchema,
    ForeignKeyLink,
    TableSchema,
    attach_sample_values,
    column_identifier,
    dump_schema_catalog,
    fetch_sample_values,
    load_question_set,
    load_schema_catalog,
    normalize_difficulty,
)


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data), encoding="utf-8")
    return p


def test_concert_singer_has_four_tables(concert):
    assert [t.name for t in concert.tables] == ["stadium", "singer", "concert", "singer_in_concert"]


def test_column_ordinals_follow_source(concert):
    assert [c.name for c in concert.table("stadium").columns][:3] == ["Stadium_ID", "Location", "Name"]
    assert concert.table("singer").column("Is_male").data_type == "others"


def test_empty_catalog(tmp_path):
    assert load_schema_catalog(write(tmp_path, "t.json", [])) == []


def test_dangling_foreign_key_rejected(tmp_path):
    entry = {
        "db_id": "x",
        "table_names_original": ["a", "b"],
        "column_names_original": [[-1, "*"], [0, "id"], [1, "a_id"]],
        "column_types": ["text", "number", "number"],
        "primary_keys": [1],
        "foreign_keys": [[2, 9]],
    }
    with pytest.raises((IntegrityError, ParseError)):
        load_schema_catalog(write(tmp_path, "t.json", [entry]))


def test_foreign_key_to_missing_column_in_constructor():
    t = TableSchema("a", (ColumnSpec(0, "id", "number"),), (0,))
    with pytest.raises(IntegrityError):
        DatabaseSchema("x", (t,), (ForeignKeyLink("a", "id", "a", "nope"),))


def test_malformed_catalog(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_schema_catalog(p)
    with pytest.raises(ParseError):
        load_schema_catalog(write(tmp_path, "t.json", [{"db_id": "x"}]))


def test_case_insensitive_duplicates_rejected():
    with pytest.raises(IntegrityError):
        TableSchema("t", (ColumnSpec(0, "Name"), ColumnSpec(0, " name ")))
    t1 = TableSchema("T", (ColumnSpec(0, "a"),))
    t2 = TableSchema("t", (ColumnSpec(1, "a"),))
    with pytest.raises(IntegrityError):
        DatabaseSchema("x", (t1, t2))


def test_column_spec_invariants():
    with pytest.raises(IntegrityError):
        ColumnSpec(0, "")
    with pytest.raises(IntegrityError):
        ColumnSpec(0, "a", "float")
    with pytest.raises(IntegrityError):
        ColumnSpec(0, "a", sample_values=("x", "x"))
    with pytest.raises(IntegrityError):
        DatabaseSchema("x", ())


def test_bird_descriptions_attached(schools):
    col = schools.column("frpm", "County Name")
    assert col.description
    # spider has no descriptions at all
    assert schools.column("schools", "Zip").data_type in ("text", "number")


def test_question_loader_fields(spider_tasks):
    first = spider_tasks[0]
    assert first.question == "How many singers do we have?"
    assert first.db_id == "concert_singer"
    assert first.gold_sql == "SELECT count(*) FROM singer"
    assert first.difficulty == "easy"


def test_question_loader_bird_keys(bird_tasks):
    cal0 = bird_tasks[0]
    assert cal0.hint.startswith("Eligible free rate")
    assert cal0.difficulty == "simple"
    assert bird_tasks[2].hint is None


def test_question_loader_edge_cases(tmp_path, spider):
    assert load_question_set(write(tmp_path, "e.json", [])) == []
    with pytest.raises(ParseError):
        load_question_set(write(tmp_path, "m.json", [{"db_id": "concert_singer"}]))
    rec = [{"question": "q?", "db_id": "nowhere"}]
    assert load_question_set(write(tmp_path, "u.json", rec), spider)[0].db_id == "nowhere"
    with pytest.raises(UnknownDatabaseError):
        load_question_set(write(tmp_path, "u2.json", rec), spider, strict=True)


def test_jsonl_questions(tmp_path):
    p = tmp_path / "q.jsonl"
    p.write_text('{"question": "a?", "db_id": "d", "question_id": 7}\n\n{"question": "b?", "db_id": "d"}\n')
    tasks = load_question_set(p)
    assert [t.question_id for t in tasks] == ["7", "1"]


def test_difficulty_labels():
    assert normalize_difficulty("Simple") == "simple"
    assert normalize_difficulty(None) is None
    assert normalize_difficulty("extra") == "extra"


def test_column_identifier(concert):
    assert column_identifier(concert, 0, 3) == "stadium.Capacity"
    assert column_identifier(concert, 0, 3) == column_identifier(concert, 0, 3)
    with pytest.raises(OutOfRange):
        column_identifier(concert, 9, 0)
    with pytest.raises(OutOfRange):
        column_identifier(concert, 0, 99)


def test_case_insensitive_lookup_matches_exact(concert):
    for t, c in concert.iter_columns():
        assert concert.column(t.name.upper(), c.name.lower()) is concert.column(t.name, c.name)
    assert concert.qualified("STADIUM", "capacity") == "stadium.Capacity"
    table, col = concert.resolve("stadium.Capacity")
    assert (table.name, col.name) == ("stadium", "Capacity")


def structural(schema):
    return (
        schema.db_id,
        [(t.name, t.primary_key_columns, [(c.name, c.data_type, c.description) for c in t.columns])
         for t in schema.tables],
        schema.foreign_keys,
    )


@pytest.mark.parametrize("which", ["spider", "bird"])
def test_round_trip(which, tmp_path, fixture_paths, spider, bird):
    catalog, fmt = (spider, "spider_tables_json") if which == "spider" else (bird, "bird_tables_json")
    out = tmp_path / "tables.json"
    dump_schema_catalog(list(catalog.values()), out, db_root=tmp_path)
    again = load_schema_catalog(out, format=fmt, db_root=tmp_path)
    assert [structural(s) for s in again] == [structural(s) for s in catalog.values()]


names = st.text(alphabet="abcdefghij_", min_size=1, max_size=6)


@st.composite
def schemas(draw):
    n_tables = draw(st.integers(1, 4))
    tnames = draw(st.lists(names, min_size=n_tables, max_size=n_tables, unique_by=str.casefold))
    tables = []
    for i, tn in enumerate(tnames):
        cn = draw(st.lists(names, min_size=1, max_size=5, unique_by=str.casefold))
        cols = tuple(ColumnSpec(i, c, draw(st.sampled_from(["number", "text"]))) for c in cn)
        pk = (0,) if draw(st.booleans()) else ()
        tables.append(TableSchema(tn, cols, pk))
    fks = []
    if len(tables) > 1 and draw(st.booleans()):
        a, b = tables[0], tables[1]
        fks.append(ForeignKeyLink(a.name, a.columns[-1].name, b.name, b.columns[0].name))
    return DatabaseSchema("db", tuple(tables), tuple(fks))


@settings(max_examples=60, deadline=None)
@given(schemas())
def test_round_trip_property(tmp_path_factory, schema):
    out = tmp_path_factory.mktemp("rt") / "tables.json"
    dump_schema_catalog([schema], out)
    (again,) = load_schema_catalog(out)
    assert structural(again) == structural(schema)


def test_sample_values(concert):
    values = fetch_sample_values(concert, "singer", "Country")
    assert len(values) == len(set(values)) <= SAMPLE_VALUE_CAP
    assert "France" in values
    sampled = attach_sample_values(concert)
    assert sampled.column("singer", "Country").sample_values == values
    assert concert.column("singer", "Country").sample_values == ()
