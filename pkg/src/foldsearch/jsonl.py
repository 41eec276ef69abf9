"""Append-only jsonl logs that make batch stages resumable."""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Callable, Iterator, Sequence, TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")


def iter_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


class ResumableLog:
    """One json object per finished item, keyed by ``key(entry)``.

    Opening an existing log drops a torn final line (a write interrupted by
    a kill) and rewrites the file with the complete entries only. Appends
    are serialized and fsynced, so the log is safe for concurrent workers.
    """

    def __init__(self, path: str | Path, key: Callable[[dict[str, Any]], str] = lambda e: e["id"]):
        self.path = Path(path)
        self.key = key
        self._lock = threading.Lock()
        self.entries: dict[str, dict[str, Any]] = {}
        if self.path.exists():
            good = []
            for line in self.path.read_text(encoding="utf-8").splitlines():
                try:
                    entry = json.loads(line)
                    self.entries[key(entry)] = entry
                    good.append(line)
                except (json.JSONDecodeError, KeyError, TypeError):
                    log.warning("dropping torn line in %s", self.path)
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            tmp.write_text("".join(g + "\n" for g in good), encoding="utf-8")
            os.replace(tmp, self.path)
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def append(self, entry: dict[str, Any]) -> None:
        line = dumps(entry) + "\n"
        with self._lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            self.entries[self.key(entry)] = entry


def run_stage(
    items: Sequence[tuple[str, T]],
    fn: Callable[[str, T], dict[str, Any]],
    log_: ResumableLog,
    concurrency: int = 1,
    on_error: Callable[[str, Exception], dict[str, Any]] | None = None,
) -> int:
    """Apply ``fn`` to every item whose id is not yet in ``log_``.

    ``fn`` returns the entry to log (it must carry the item id under the
    log's key). If ``on_error`` is given, exceptions are turned into logged
    entries; otherwise they propagate. Returns the number of items processed.
    On interrupt, queued items are cancelled and in-flight ones finish.
    """
    pending = [(i, x) for i, x in items if i not in log_]

    def work(item_id: str, x: T) -> dict[str, Any]:
        try:
            return fn(item_id, x)
        except Exception as exc:
            if on_error is None:
                raise
            return on_error(item_id, exc)

    pool = ThreadPoolExecutor(max_workers=max(1, concurrency))
    try:
        futures = [pool.submit(work, i, x) for i, x in pending]
        for fut in as_completed(futures):
            log_.append(fut.result())
    except BaseException:
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown(wait=True)
    return len(pending)
