# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Line-delimited JSON metrics.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class MetricsWriter:
    """
    Append one JSON object per record to ``path``.

    A writer without a path keeps records in memory only.
    """

    def __init__(self, path: Optional[Path] = None, truncate: bool = True):
        self.path = Path(path) if path is not None else None
        self.records: List[Dict[str, Any]] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if truncate:
                self.path.write_text("", encoding="utf-8")

    def write(self, record: Mapping[str, Any]) -> None:
        clean = {key: _plain(value) for key, value in record.items()}
        self.records.append(clean)
        if self.path is None:
            return
        with self.path.open("a", encoding="utf-8") as stream:
            stream.write(json.dumps(clean, sort_keys=True) + "\n")


def read_metrics(path: Path) -> List[Dict[str, Any]]:
    """Parse a metrics file; blank lines are skipped."""
    records = []
    with Path(path).open(encoding="utf-8") as stream:
        for line in stream:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
