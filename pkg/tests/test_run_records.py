import pytest

from Domain.experiment import MetricsReport, RunRecord
from Repository.db import init_db
from Repository.run_record_repository import (
    InMemoryRunRecordRepository,
    JsonDirRunRecordRepository,
    SqliteRunRecordRepository,
)


def _record(run_id, task="far-domain", strategy="dgst", shots=5, seed=0, kind="finetune"):
    metrics = MetricsReport()
    metrics.add(0.8, 0.7)
    metrics.add(0.6, 0.5)
    return RunRecord(
        run_id=run_id,
        kind=kind,
        task=task,
        strategy=strategy,
        shots=shots,
        gamma=1,
        seed=seed,
        config={"optim": {"lr0": 0.001}},
        loss_curve=[1.0, 0.5],
        mask_cardinalities=[10, 10],
        metrics=metrics,
        created_at="2026-01-01T09:00:00+09:00",
    )


@pytest.fixture(params=["memory", "jsondir", "sqlite"])
def repo(request, tmp_path, monkeypatch):
    if request.param == "memory":
        return InMemoryRunRecordRepository()
    if request.param == "jsondir":
        return JsonDirRunRecordRepository(tmp_path / "records")
    monkeypatch.setenv("DB_PATH", str(tmp_path / "runs.db"))
    init_db()
    return SqliteRunRecordRepository()


def test_add_and_get(repo):
    record = _record("r1")
    repo.add(record)
    loaded = repo.get("r1")
    assert loaded is not None
    assert loaded.to_dict() == record.to_dict()
    assert loaded.metrics.dsc_mean == pytest.approx(0.7)
    assert repo.get("missing") is None


def test_list_filters_and_orders(repo):
    repo.add(_record("b", shots=10))
    repo.add(_record("a", shots=5, seed=1))
    repo.add(_record("c", shots=5, seed=0))
    repo.add(_record("d", task="near-domain"))
    repo.add(_record("e", strategy="full"))
    repo.add(_record("p", kind="pretrain", task="source", strategy="full"))

    ids = [r.run_id for r in repo.list(task="far-domain", strategy="dgst")]
    assert ids == ["c", "a", "b"]
    assert [r.run_id for r in repo.list(kind="pretrain")] == ["p"]
    assert len(repo.list()) == 6


def test_add_overwrites_same_run_id(repo):
    repo.add(_record("r1"))
    failed = _record("r1")
    failed.status = "failed"
    failed.error = "boom"
    repo.add(failed)
    assert repo.get("r1").status == "failed"
    assert len(repo.list()) == 1


def test_clear(repo):
    repo.add(_record("r1"))
    repo.clear()
    assert repo.list() == []
