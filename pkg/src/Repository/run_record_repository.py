from __future__ import annotations

import json
import sqlite3
from pathlib import Path
from typing import List, Optional

from Domain.experiment import RunRecord
from Repository.db import get_connection
from time_utils import record_timestamp


class BaseRunRecordRepository:
    """
    実行記録 (RunRecord) の保存先のインターフェース定義。
    """

    def add(self, record: RunRecord) -> None:
        raise NotImplementedError

    def get(self, run_id: str) -> Optional[RunRecord]:
        raise NotImplementedError

    def list(
        self,
        task: Optional[str] = None,
        strategy: Optional[str] = None,
        kind: Optional[str] = None,
    ) -> List[RunRecord]:
        """
        条件に合う記録を (task, strategy, shots, gamma, seed) の順で返す。
        """
        raise NotImplementedError

    def clear(self) -> None:
        raise NotImplementedError


def _sort_key(r: RunRecord):
    return (r.task, r.strategy, r.shots, r.gamma, r.seed, r.run_id)


def _matches(r: RunRecord, task: Optional[str], strategy: Optional[str], kind: Optional[str]) -> bool:
    return (
        (task is None or r.task == task)
        and (strategy is None or r.strategy == strategy)
        and (kind is None or r.kind == kind)
    )


class InMemoryRunRecordRepository(BaseRunRecordRepository):
    """
    プロセスメモリ内で完結するリポジトリ。
    - 開発・テスト用
    """

    def __init__(self) -> None:
        self._records: dict[str, RunRecord] = {}

    def add(self, record: RunRecord) -> None:
        self._records[record.run_id] = record

    def get(self, run_id: str) -> Optional[RunRecord]:
        return self._records.get(run_id)

    def list(self, task=None, strategy=None, kind=None) -> List[RunRecord]:
        return sorted(
            (r for r in self._records.values() if _matches(r, task, strategy, kind)),
            key=_sort_key,
        )

    def clear(self) -> None:
        self._records.clear()


class JsonDirRunRecordRepository(BaseRunRecordRepository):
    """
    1 記録 = 1 JSON ファイル（<root>/<run_id>.json）。既定のバックエンド。
    """

    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    def _path(self, run_id: str) -> Path:
        return self.root / f"{run_id}.json"

    def add(self, record: RunRecord) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self._path(record.run_id).write_text(
            json.dumps(record.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )

    def get(self, run_id: str) -> Optional[RunRecord]:
        path = self._path(run_id)
        if not path.exists():
            return None
        return RunRecord.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def list(self, task=None, strategy=None, kind=None) -> List[RunRecord]:
        if not self.root.exists():
            return []
        records = [
            RunRecord.from_dict(json.loads(p.read_text(encoding="utf-8")))
            for p in sorted(self.root.glob("*.json"))
        ]
        return sorted((r for r in records if _matches(r, task, strategy, kind)), key=_sort_key)

    def clear(self) -> None:
        if self.root.exists():
            for p in self.root.glob("*.json"):
                p.unlink()


class SqliteRunRecordRepository(BaseRunRecordRepository):
    """
    SQLite バックエンド。run_records テーブルを利用する（init_db() 済みであること）。
    db_path 未指定なら get_db_path() の既定を使う。
    """

    def __init__(self, db_path: Optional[str] = None) -> None:
        self.db_path = db_path

    def add(self, record: RunRecord) -> None:
        conn = get_connection(self.db_path)
        try:
            cur = conn.cursor()
            cur.execute(
                """
            INSERT INTO run_records
              (run_id, kind, task, strategy, shots, gamma, seed, status, payload, created_at)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
            ON CONFLICT(run_id)
            DO UPDATE SET status = excluded.status, payload = excluded.payload, created_at = excluded.created_at
            """,
                (
                    record.run_id,
                    record.kind,
                    record.task,
                    record.strategy,
                    record.shots,
                    record.gamma,
                    record.seed,
                    record.status,
                    json.dumps(record.to_dict(), sort_keys=True),
                    record.created_at or record_timestamp(),
                ),
            )
            conn.commit()
        finally:
            conn.close()

    def get(self, run_id: str) -> Optional[RunRecord]:
        conn = get_connection(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            cur = conn.cursor()
            cur.execute("SELECT payload FROM run_records WHERE run_id = ?", (run_id,))
            row = cur.fetchone()
        finally:
            conn.close()

        if row is None:
            return None
        return RunRecord.from_dict(json.loads(row["payload"]))

    def list(self, task=None, strategy=None, kind=None) -> List[RunRecord]:
        clauses, args = [], []
        for column, value in (("task", task), ("strategy", strategy), ("kind", kind)):
            if value is not None:
                clauses.append(f"{column} = ?")
                args.append(value)
        where = f"WHERE {' AND '.join(clauses)}" if clauses else ""
        conn = get_connection(self.db_path)
        conn.row_factory = sqlite3.Row
        try:
            cur = conn.cursor()
            cur.execute(
                f"""
            SELECT payload FROM run_records
            {where}
            ORDER BY task, strategy, shots, gamma, seed, run_id
            """,
                args,
            )
            rows = cur.fetchall()
        finally:
            conn.close()

        return [RunRecord.from_dict(json.loads(r["payload"])) for r in rows]

    def clear(self) -> None:
        conn = get_connection(self.db_path)
        try:
            cur = conn.cursor()
            cur.execute("DELETE FROM run_records")
            conn.commit()
        finally:
            conn.close()
