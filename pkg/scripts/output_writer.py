#!/usr/bin/env python3
"""
Transfer Lab Output Writer
Renders sweep records as CSV and writes the run manifests that sit next
to every output file.
"""

import csv
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from sweep_processor import TERM_COLUMNS, SweepMethod, SweepRecord

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"

CSV_COLUMNS = (
    "sweep_var", "value", "regime",
    "empirical_mean", "empirical_se",
    "theory_kind", "theory_value", "theory_lower", "theory_upper",
    "term1", "term2",
)


def format_float(value: Optional[float]) -> str:
    """Shortest round-trippable rendering; empty for a missing value."""
    if value is None:
        return ""
    return f"{float(value):.12g}"


def record_row(record: SweepRecord, method: SweepMethod, extra_columns: Sequence[str] = ()) -> List[str]:
    """One CSV row; theory fields are empty where no closed form applies."""
    theory = record.theory
    term1, term2 = TERM_COLUMNS[method]

    row = [
        record.variable,
        format_float(record.value),
        record.regime.value,
        format_float(record.empirical_mean),
        format_float(record.empirical_se),
        theory.kind.value if theory else "",
        format_float(theory.value) if theory else "",
        format_float(theory.lower) if theory and not theory.is_exact else "",
        format_float(theory.upper) if theory and not theory.is_exact else "",
        format_float(record.term(term1)),
        format_float(record.term(term2)),
    ]
    for column in extra_columns:
        row.append(format_float(theory.terms.get(column)) if theory else "")
    return row


def write_sweep_csv(records: Sequence[SweepRecord], path, method: SweepMethod,
                    extra_columns: Sequence[str] = ()) -> Path:
    """Write one CSV per sweep, UTF-8 with LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(list(CSV_COLUMNS) + list(extra_columns))
        for record in records:
            writer.writerow(record_row(record, method, extra_columns))
    logger.info(f"Wrote {len(records)} rows to {path}")
    return path


@dataclass
class RunManifest:
    """Everything needed to reproduce an output file."""
    command: str
    config: Dict
    master_seed: int
    outputs: List[str] = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    started_at: str = field(default_factory=lambda: datetime.now().isoformat())
    tool_version: str = TOOL_VERSION
    python_version: str = field(default_factory=platform.python_version)

    def to_dict(self) -> Dict:
        return asdict(self)


def manifest_path(output: Path) -> Path:
    """<stem>.manifest.json next to an output file."""
    output = Path(output)
    return output.with_name(f"{output.stem}.manifest.json")


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Manifest saved to: {path}")
    return path
