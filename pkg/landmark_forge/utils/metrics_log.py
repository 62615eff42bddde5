import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence


class CsvMetricsLog:
    """Append-only CSV log; rows are buffered and written on flush()."""

    def __init__(self, path: Optional[Path], fields: Sequence[str]):
        self.path = Path(path) if path is not None else None
        self.fields = list(fields)
        self.rows: List[Dict] = []
        self._pending: List[Dict] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as f:
                csv.DictWriter(f, fieldnames=self.fields).writeheader()

    def append(self, **row) -> None:
        self.rows.append(row)
        self._pending.append(row)

    def flush(self) -> None:
        if self.path is not None and self._pending:
            with open(self.path, "a", newline="") as f:
                writer = csv.DictWriter(f, fieldnames=self.fields)
                writer.writerows(self._pending)
        self._pending = []

    def column(self, name: str) -> List:
        return [row[name] for row in self.rows]
