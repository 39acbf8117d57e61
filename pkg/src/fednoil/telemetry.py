"""Per-round diagnostics and run logs.

Tracks what the selection machinery actually did: the realized noise ratio
of selected clients, the label precision/recall of the selected subsets
(pooled over every selection event), cumulative training batches, and the
pseudo-label acceptance rate. Records round-trip through a fixed-schema CSV
with a flat key=value metadata sidecar.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .data import ClientShard
from .errors import ParseError

CSV_HEADER = (
    "round,selected,epochs,accuracy,noise_ratio,precision,recall,"
    "cum_batches,pl_accept,wall_ms"
)
_COLUMNS = CSV_HEADER.split(",")


@dataclass
class RoundRecord:
    round: int
    selected: tuple[int, ...]
    epochs: int
    accuracy: float
    noise_ratio: float | None
    precision: float | None
    recall: float | None
    cum_batches: int
    pl_accept: float | None
    wall_ms: float | None


def avg_selected_noise_ratio(shards: Sequence[ClientShard]) -> float | None:
    """Unweighted mean of the realized noise ratios of the selected clients."""
    if not shards:
        return None
    return sum(s.realized_noise_ratio() for s in shards) / len(shards)


def label_precision_recall(
    labeled_sets: Sequence, shards: Sequence[ClientShard]
) -> tuple[float | None, float | None]:
    """Pooled precision/recall of labeled-subset selection.

    Takes one entry per selection event (a client epoch): the drawn index
    set and the shard it came from. Precision is the fraction of selected
    samples whose given label is true; recall is the fraction of the truly
    clean samples that were selected, both pooled over all events. Recall is
    None when no event contains a clean sample.
    """
    if len(labeled_sets) != len(shards):
        raise ValueError("labeled_sets and shards must align")
    selected = 0
    selected_clean = 0
    clean_total = 0
    for idx, shard in zip(labeled_sets, shards):
        clean = shard.clean_mask
        selected += len(idx)
        selected_clean += int(clean[idx].sum())
        clean_total += int(clean.sum())
    precision = selected_clean / selected if selected else None
    recall = selected_clean / clean_total if clean_total else None
    return precision, recall


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)  # shortest representation that round-trips exactly
    return str(value)


def write_run_log(
    records: Iterable[RoundRecord], path, metadata: dict[str, str] | None = None
) -> None:
    """Write the per-round CSV and, if given, a key=value metadata sidecar.

    Missing values become empty fields. The sidecar lands at `<path>.meta`.
    """
    path = Path(path)
    lines = [CSV_HEADER]
    for rec in records:
        lines.append(
            ",".join(
                [
                    str(rec.round),
                    ";".join(str(c) for c in rec.selected),
                    str(rec.epochs),
                    _fmt(rec.accuracy),
                    _fmt(rec.noise_ratio),
                    _fmt(rec.precision),
                    _fmt(rec.recall),
                    str(rec.cum_batches),
                    _fmt(rec.pl_accept),
                    _fmt(rec.wall_ms),
                ]
            )
        )
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        if metadata is not None:
            write_metadata(path.with_name(path.name + ".meta"), metadata)
    except OSError as exc:
        raise ParseError(f"cannot write run log {path}: {exc}") from exc


def write_metadata(path, metadata: dict[str, str]) -> None:
    text = "".join(f"{k}={v}\n" for k, v in metadata.items())
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _parse_opt_float(field: str) -> float | None:
    return None if field == "" else float(field)


def read_run_log(path) -> list[RoundRecord]:
    """Parse a CSV written by write_run_log back into records."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty run log") from None
        if header != _COLUMNS:
            raise ParseError(f"{path}: unexpected header {header!r}")
        records = []
        for row in reader:
            if len(row) != len(_COLUMNS):
                raise ParseError(f"{path}: row has {len(row)} fields: {row!r}")
            selected = tuple(int(c) for c in row[1].split(";")) if row[1] else ()
            records.append(
                RoundRecord(
                    round=int(row[0]),
                    selected=selected,
                    epochs=int(row[2]),
                    accuracy=float(row[3]),
                    noise_ratio=_parse_opt_float(row[4]),
                    precision=_parse_opt_float(row[5]),
                    recall=_parse_opt_float(row[6]),
                    cum_batches=int(row[7]),
                    pl_accept=_parse_opt_float(row[8]),
                    wall_ms=_parse_opt_float(row[9]),
                )
            )
    return records
