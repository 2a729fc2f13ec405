"""Small shipped databases for tests and demos.

``materialize(dest)`` turns the SQL scripts under ``data/`` into the usual
benchmark layout: ``<db_root>/<db_id>/<db_id>.sqlite`` plus BIRD
description sidecars and test-suite copies of the Spider databases.
"""

import shutil
import sqlite3
from dataclasses import dataclass
from pathlib import Path

import yaml

DATA_DIR = Path(__file__).resolve().parent / "data"
SPIDER_DBS = ("concert_singer", "farm")
BIRD_DBS = ("california_schools",)


@dataclass(frozen=True)
class FixturePaths:
    root: Path
    spider_tables: Path
    spider_dev: Path
    spider_train: Path
    spider_db_root: Path
    spider_ts_root: Path
    bird_tables: Path
    bird_dev: Path
    bird_db_root: Path


def build_database(scripts, dest):
    """Run SQL scripts, in order, into a fresh database file."""
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    if dest.exists():
        dest.unlink()
    conn = sqlite3.connect(dest)
    try:
        for script in scripts:
            conn.executescript(Path(script).read_text(encoding="utf-8"))
        conn.commit()
    finally:
        conn.close()
    return dest


def materialize(dest):
    dest = Path(dest)
    spider = dest / "spider"
    bird = dest / "bird"
    for name in ("tables.json", "dev.json", "train.json"):
        spider.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(DATA_DIR / "spider" / name, spider / name)
    for db_id in SPIDER_DBS:
        base = DATA_DIR / "spider" / f"{db_id}.sql"
        build_database([base], spider / "database" / db_id / f"{db_id}.sqlite")
        for patch in sorted((DATA_DIR / "spider").glob(f"{db_id}__ts*.sql")):
            k = patch.stem.split("__")[1]
            build_database([base, patch], spider / "test_suite" / db_id / f"{db_id}_{k}.sqlite")
    bird.mkdir(parents=True, exist_ok=True)
    for name in ("dev_tables.json", "dev.json"):
        shutil.copyfile(DATA_DIR / "bird" / name, bird / name)
    for db_id in BIRD_DBS:
        src = DATA_DIR / "bird" / db_id
        build_database([src / f"{db_id}.sql"], bird / "database" / db_id / f"{db_id}.sqlite")
        shutil.copytree(src / "database_description", bird / "database" / db_id / "database_description",
                        dirs_exist_ok=True)
    return FixturePaths(
        root=dest,
        spider_tables=spider / "tables.json",
        spider_dev=spider / "dev.json",
        spider_train=spider / "train.json",
        spider_db_root=spider / "database",
        spider_ts_root=spider / "test_suite",
        bird_tables=bird / "dev_tables.json",
        bird_dev=bird / "dev.json",
        bird_db_root=bird / "database",
    )


def augmented_paths(ts_root, db_id):
    """Sorted test-suite copies of one database (possibly none)."""
    folder = Path(ts_root) / db_id
    if not folder.is_dir():
        return ()
    return tuple(str(p) for p in sorted(folder.glob("*.sqlite")))


# -- replay fixture -----------------------------------------------------------

# Plausible wrong answers, one per fixture question.
_WRONG = {
    "cs-0": "SELECT count(*) FROM stadium",
    "cs-1": "SELECT avg(Age), max(Age), min(Age) FROM singer WHERE Country = 'France'",
    "cs-2": "SELECT Song_Name, Song_release_year FROM singer ORDER BY Age DESC LIMIT 1",
    "cs-3": "SELECT Country FROM singer WHERE Age > 20",
    "cs-4": "SELECT T2.Name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.Stadium_ID = T2.Stadium_ID",
    # right on the original database, wrong once two singers share the top age
    "cs-5": "SELECT Name FROM singer WHERE Age = (SELECT max(Age) FROM singer)",
    "fa-0": "SELECT count(*) FROM city",
    "fa-1": "SELECT Theme FROM farm_competition ORDER BY Year DESC",
    "fa-2": "SELECT min(Cows), max(Cows) FROM farm",
    "fa-3": ("SELECT T1.Status FROM city AS T1 JOIN farm_competition AS T2 ON T1.City_ID = T2.Host_city_ID "
             "GROUP BY T2.Host_city_ID ORDER BY COUNT(*) ASC LIMIT 1"),
}
_BROKEN = "SELECT FROM WHERE"

REPLAY_PARADIGMS = [
    {"id": "concise", "style": {"mode": "concise", "lowercase_names": True},
     "num_samples": 4, "temperature": 0.5, "shots": 1},
    {"id": "verbose", "style": {"mode": "verbose"}, "num_samples": 1, "temperature": 0.0},
    {"id": "content", "style": {"mode": "concise", "lowercase_names": True}, "content": True,
     "num_samples": 1, "temperature": 0.0},
]


def _samples(pid, qid, gold, position):
    wrong = _WRONG[qid]
    if pid == "concise":
        # every third question gets a wrong majority
        if position % 3 == 2:
            return [(wrong, -0.4), (gold, -0.9), (wrong, -1.2), (_BROKEN, -2.0)]
        return [(gold, -0.3), (wrong, -1.5), (gold + " ", -0.5), (_BROKEN, -2.5)]
    if pid == "verbose":
        return [wrong if position % 2 else gold]
    return [gold if position % 4 != 3 else wrong]


def write_replay_fixture(paths, dest=None):
    """Write a replay recording and a run config for the Spider fixture questions.

    Returns the config path. The recording is produced by rendering each
    paradigm's real prompts and pairing them with canned samples, so a
    replay run exercises the full prompt path.
    """
    from ..decoding import Paradigm, PipelineContext, build_task_prompt
    from ..llm import CompletionRequest, write_recordings
    from ..schema import catalog_by_id, load_question_set, load_schema_catalog

    dest = Path(dest or paths.root)
    dest.mkdir(parents=True, exist_ok=True)
    catalog = catalog_by_id(load_schema_catalog(paths.spider_tables, db_root=paths.spider_db_root))
    tasks = load_question_set(paths.spider_dev, catalog)
    demos = tuple(load_question_set(paths.spider_train, catalog))
    ctx = PipelineContext(catalog=catalog, backend=None, demos=demos)
    exchanges = []
    for spec in REPLAY_PARADIGMS:
        paradigm = Paradigm.from_dict(spec)
        for pos, task in enumerate(tasks):
            bundle = build_task_prompt(task, paradigm, ctx)
            req = CompletionRequest(bundle.rendered, paradigm.temperature, paradigm.num_samples,
                                    paradigm.max_output_len, paradigm.stop)
            exchanges.append((req, _samples(paradigm.id, task.question_id, task.gold_sql, pos)))
    recording = dest / "replay.jsonl"
    write_recordings(recording, exchanges)

    def rel(p):
        return Path(p).resolve().relative_to(dest.resolve()).as_posix()

    config = {
        "catalogs": [{"path": rel(paths.spider_tables), "format": "spider_tables_json",
                      "db_root": rel(paths.spider_db_root)}],
        "questions": rel(paths.spider_dev),
        "demos": rel(paths.spider_train),
        "output_dir": "out",
        "test_suite_dir": rel(paths.spider_ts_root),
        "backend": {"kind": "replay", "recording": "replay.jsonl"},
        "seed": 0,
        "paradigms": REPLAY_PARADIGMS,
        "combine_priority": [p["id"] for p in REPLAY_PARADIGMS],
        "evaluation": {"timeout": 30},
    }
    cfg_path = dest / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
    return cfg_path


