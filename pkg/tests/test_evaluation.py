import json
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqlharness.datasets import augmented_paths
from sqlharness.errors import EmptyEvaluationError, MissingPredictionError, StorageError
from sqlharness.evaluation import (
    EvalCase,
    EvalOptions,
    aggregate_verdicts,
    eval_ex,
    eval_ts,
    report,
)


def by_id(tasks):
    return {t.question_id: t for t in tasks}


@pytest.fixture(scope="module")
def tasks(spider_tasks):
    return by_id(spider_tasks)


@pytest.fixture(scope="module")
def ts_cases(fixture_paths, spider_tasks):
    def make(task, sql=None):
        return EvalCase(task, task.gold_sql if sql is None else sql,
                        augmented_paths(fixture_paths.spider_ts_root, task.db_id))
    return make


def test_gold_vs_gold(spider_tasks, spider, ts_cases):
    cases = [ts_cases(t) for t in spider_tasks]
    rep = report(cases, catalog=spider)
    assert rep.ex == 1.0 and rep.ts == 1.0 and rep.invalid_rate == 0.0
    assert rep.failures == [] and rep.total == len(spider_tasks)


def test_column_order_fails(tasks, spider):
    t = tasks["fa-2"]
    v = eval_ex(EvalCase(t, "SELECT min(Cows), max(Cows) FROM farm"), spider["farm"])
    assert not v.passed and v.cls == "mismatch"


def test_syntax_error_is_invalid(tasks, spider):
    t = tasks["cs-0"]
    v = eval_ex(EvalCase(t, "SELECT FROM WHERE"), spider["concert_singer"])
    assert v.cls == "invalid"
    assert eval_ex(EvalCase(t, "  "), spider["concert_singer"]).cls == "missing"


def test_order_sensitivity_follows_gold(tasks, spider):
    farm = spider["farm"]
    asc = tasks["fa-1"]
    assert not eval_ex(EvalCase(asc, "SELECT Theme FROM farm_competition ORDER BY Year DESC"), farm).passed
    unordered = tasks["cs-0"]
    assert eval_ex(EvalCase(unordered, "SELECT count(Singer_ID) FROM singer"), spider["concert_singer"]).passed


def test_ts_catches_what_ex_misses(tasks, spider, ts_cases):
    t = tasks["cs-5"]
    case = ts_cases(t, "SELECT Name FROM singer WHERE Age = (SELECT max(Age) FROM singer)")
    schema = spider["concert_singer"]
    assert eval_ex(case, schema).passed
    ts = eval_ts(case, schema)
    assert not ts.passed and ts.per_db[0].passed
    assert any(not v.passed for v in ts.per_db[1:])


def test_ts_errors(tasks, spider, tmp_path):
    t = tasks["cs-0"]
    with pytest.raises(ValueError):
        eval_ts(EvalCase(t, t.gold_sql), spider["concert_singer"])
    with pytest.raises(StorageError):
        eval_ts(EvalCase(t, t.gold_sql, [str(tmp_path / "nope.sqlite")]), spider["concert_singer"])


def test_missing_copy_is_unevaluable(tasks, spider, ts_cases, tmp_path):
    good = ts_cases(tasks["cs-0"])
    broken = EvalCase(tasks["cs-1"], tasks["cs-1"].gold_sql, [str(tmp_path / "nope.sqlite")])
    rep = report([good, broken], catalog=spider)
    assert rep.unevaluable == ["cs-1"] and rep.ts == 1.0 and rep.ex == 1.0


def test_four_case_rates(tasks, spider):
    cases = [
        EvalCase(tasks["cs-0"], tasks["cs-0"].gold_sql),
        EvalCase(tasks["cs-1"], tasks["cs-1"].gold_sql),
        EvalCase(tasks["fa-0"], "SELECT count(*) FROM city"),
        EvalCase(tasks["fa-1"], "SELECT nope FROM"),
    ]
    rep = report(cases, catalog=spider)
    assert rep.ex == 0.5 and rep.invalid_rate == 0.25 and rep.ts is None
    assert [f["class"] for f in rep.failures] == ["mismatch", "invalid"]
    assert sum(b["count"] for b in rep.per_difficulty.values()) == 4


def test_gold_invalid_excluded(tasks, spider):
    bad = replace(tasks["cs-0"], question_id="bad", gold_sql="SELEC 1")
    rep = report([EvalCase(tasks["cs-0"], tasks["cs-0"].gold_sql), EvalCase(bad, "SELECT 1")], catalog=spider)
    assert rep.gold_invalid == ["bad"] and rep.total == 1 and rep.ex == 1.0
    with pytest.raises(EmptyEvaluationError):
        report([EvalCase(bad, "SELECT 1")], catalog=spider)


def test_empty_and_missing_predictions(tasks, spider, tmp_path):
    with pytest.raises(EmptyEvaluationError):
        report([], catalog=spider)
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({"question_id": "cs-0", "chosen_sql": "SELECT 1"}) + "\n")
    cases = [EvalCase(tasks["cs-0"]), EvalCase(tasks["cs-1"])]
    with pytest.raises(MissingPredictionError) as info:
        report(cases, predictions_path=path, catalog=spider)
    assert "cs-1" in str(info.value)


def test_distinct_compat(tasks, spider):
    t = tasks["cs-3"]
    case = EvalCase(t, "SELECT Country FROM singer WHERE Age > 20")
    schema = spider["concert_singer"]
    assert not eval_ex(case, schema).passed
    assert eval_ex(case, schema, EvalOptions(distinct_compat=True)).passed


def test_permutation_invariance_and_jobs(spider_tasks, spider, ts_cases):
    rng = random.Random(3)
    cases = [ts_cases(t, t.gold_sql if i % 3 else "SELECT 1") for i, t in enumerate(spider_tasks)]
    base = report(cases, catalog=spider)
    shuffled = list(cases)
    rng.shuffle(shuffled)
    again = report(shuffled, catalog=spider, jobs=4)
    assert (again.ex, again.ts, again.invalid_rate) == (base.ex, base.ts, base.invalid_rate)
    assert again.per_difficulty == base.per_difficulty


def test_report_renderings(spider_tasks, spider, ts_cases):
    rep = report([ts_cases(t) for t in spider_tasks], catalog=spider)
    assert json.loads(rep.dumps())["ex"] == 1.0
    assert rep.table().splitlines()[0].split() == ["difficulty", "count", "EX", "TS"]
    assert rep.csv().splitlines()[-1].startswith("all,10,1.0,1.0")


matrices = st.lists(st.lists(st.booleans(), min_size=1, max_size=5).map(tuple), min_size=1, max_size=30)


@settings(max_examples=300, deadline=None)
@given(matrices)
def test_ts_never_exceeds_ex(matrix):
    width = len(matrix[0])
    matrix = [tuple((list(r) * width)[:width]) for r in matrix]
    ex, ts = aggregate_verdicts(matrix)
    assert 0 <= ts <= ex <= 1


def test_aggregate_empty():
    with pytest.raises(EmptyEvaluationError):
        aggregate_verdicts([])
