import sqlite3
from pathlib import Path
from typing import Optional, Union

from settings import get_str_env, output_root

DB_FILENAME = "dgst_runs.db"


def get_db_path(root: Optional[Union[str, Path]] = None) -> str:
    """
    実際に使うDBパスを返す。

    - 環境変数 DB_PATH があればそれを優先
    - なければ root（実験の output_dir）直下、root 未指定なら DGST_OUTPUT_ROOT 直下の dgst_runs.db
    """
    env_path = get_str_env("DB_PATH", "")
    if env_path:
        return env_path
    return str(Path(root if root is not None else output_root()) / DB_FILENAME)


def get_connection(db_path: Optional[str] = None):
    path = Path(db_path or get_db_path())
    path.parent.mkdir(parents=True, exist_ok=True)
    return sqlite3.connect(str(path), check_same_thread=False)


def init_db(db_path: Optional[str] = None):
    conn = get_connection(db_path)
    cur = conn.cursor()

    # --- run_records テーブル ---
    cur.execute(
        """
    CREATE TABLE IF NOT EXISTS run_records (
      run_id      TEXT PRIMARY KEY,
      kind        TEXT NOT NULL,   -- pretrain / finetune
      task        TEXT NOT NULL,
      strategy    TEXT NOT NULL,
      shots       INTEGER NOT NULL,
      gamma       INTEGER NOT NULL,
      seed        INTEGER NOT NULL,
      status      TEXT NOT NULL,
      payload     TEXT NOT NULL,   -- RunRecord の JSON
      created_at  TEXT NOT NULL    -- ISO8601 (JST)
    );
    """
    )
    cur.execute(
        """
    CREATE INDEX IF NOT EXISTS idx_runs_cell
      ON run_records(task, strategy, shots, gamma);
    """
    )

    conn.commit()
    conn.close()
