from __future__ import annotations

import time
from datetime import datetime
from typing import Optional
from zoneinfo import ZoneInfo

JST = ZoneInfo("Asia/Tokyo")


def now_jst() -> datetime:
    return datetime.now(tz=JST)


def record_timestamp(dt: Optional[datetime] = None) -> str:
    """
    実行記録・レポートに書く時刻文字列（JST、ミリ秒まで、+09:00 付き）。

    桁数を固定しているので文字列のまま比較すれば時刻順になる（同じ条件の記録から最新を選ぶときに使う）。
    dt 省略時は現在時刻。naive な datetime はどのゾーンか決められないので受け付けない。
    """
    if dt is None:
        dt = now_jst()
    elif dt.tzinfo is None:
        raise ValueError(f"record_timestamp: naive datetime {dt!r} has no timezone")
    return dt.astimezone(JST).isoformat(timespec="milliseconds")


class Stopwatch:
    """
    区間ごとの経過秒数を積み上げる計測器（perf_counter ベース）。

    with sw.lap():
        ...  # この中だけが 1 区間として記録される
    """

    def __init__(self) -> None:
        self.laps: list[float] = []
        self._started = time.perf_counter()

    class _Lap:
        def __init__(self, owner: "Stopwatch") -> None:
            self.owner = owner
            self.t0 = 0.0
            self.seconds = 0.0

        def __enter__(self) -> "Stopwatch._Lap":
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, *exc) -> None:
            self.seconds = time.perf_counter() - self.t0
            self.owner.laps.append(self.seconds)

    def lap(self) -> "Stopwatch._Lap":
        return Stopwatch._Lap(self)

    @property
    def total(self) -> float:
        return time.perf_counter() - self._started

