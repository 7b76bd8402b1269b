# Repository package
from .checkpoint_repository import load_checkpoint, save_checkpoint
from .run_record_repository import (
    InMemoryRunRecordRepository,
    JsonDirRunRecordRepository,
    SqliteRunRecordRepository,
)

__all__ = [
    'load_checkpoint',
    'save_checkpoint',
    'InMemoryRunRecordRepository',
    'JsonDirRunRecordRepository',
    'SqliteRunRecordRepository',
]
