from pathlib import Path

import pytest

from sqlharness.datasets import materialize, write_replay_fixture
from sqlharness.schema import catalog_by_id, load_question_set, load_schema_catalog

GOLDEN = Path(__file__).parent / "fixtures" / "golden"


@pytest.fixture(scope="session")
def fixture_paths(tmp_path_factory):
    return materialize(tmp_path_factory.mktemp("data"))


@pytest.fixture(scope="session")
def spider(fixture_paths):
    return catalog_by_id(load_schema_catalog(fixture_paths.spider_tables, db_root=fixture_paths.spider_db_root))


@pytest.fixture(scope="session")
def bird(fixture_paths):
    return catalog_by_id(load_schema_catalog(fixture_paths.bird_tables, format="bird_tables_json",
                                             db_root=fixture_paths.bird_db_root))


@pytest.fixture(scope="session")
def spider_tasks(fixture_paths, spider):
    return load_question_set(fixture_paths.spider_dev, spider)


@pytest.fixture(scope="session")
def bird_tasks(fixture_paths, bird):
    return load_question_set(fixture_paths.bird_dev, bird)


@pytest.fixture(scope="session")
def concert(spider):
    return spider["concert_singer"]


@pytest.fixture(scope="session")
def schools(bird):
    return bird["california_schools"]


@pytest.fixture()
def replay_config(tmp_path):
    """A fresh copy of the data plus a replay recording and run config."""
    paths = materialize(tmp_path / "data")
    return write_replay_fixture(paths, tmp_path / "data")
