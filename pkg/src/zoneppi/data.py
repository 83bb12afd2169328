"""Field-level CSV ingestion, zone eligibility filtering, and study-region assignment.

A *field* is one farm plot with coordinates, an administrative division
(``admin1``), an optional ground-truth yield from a crop cut, an optional
model prediction, and an optional numeric feature vector.  Fields whose yield
cell is empty are "unlabeled"; a present-but-zero yield is a real labeled
zero.  Zones (the insurance units) group fields and are the unit of
estimation downstream.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .util import substream

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("field_id", "zone_id", "admin1", "latitude", "longitude")
OPTIONAL_COLUMNS = ("yield", "prediction")
FEATURE_PREFIX = "feat_"


class SchemaError(ValueError):
    """A required column is missing from the input file."""


class DatasetError(ValueError):
    """The file as a whole is unusable (e.g. contains no data rows)."""


@dataclass(frozen=True)
class FieldRecord:
    """One field observation.

    ``yield_`` and ``prediction`` are in mt/ha; ``features`` is a fixed-width
    numeric vector shared by all records of a dataset that carry one.
    """

    field_id: str
    zone_id: str
    admin1: str
    latitude: float
    longitude: float
    yield_: float | None = None
    prediction: float | None = None
    features: tuple[float, ...] | None = None

    @property
    def is_labeled(self) -> bool:
        return self.yield_ is not None


@dataclass
class ZoneDataset:
    """A zone's labeled (n) and unlabeled (N) fields, disjoint by field_id."""

    zone_id: str
    study_region: str
    labeled: list[FieldRecord]
    unlabeled: list[FieldRecord] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.labeled)

    @property
    def N(self) -> int:
        return len(self.unlabeled)

    @property
    def fields(self) -> list[FieldRecord]:
        return self.labeled + self.unlabeled


@dataclass(frozen=True)
class RowIssue:
    """Diagnostic for a rejected CSV row (1-based data row number)."""

    row: int
    message: str


def _parse_float(cell: str | None, what: str) -> float | None:
    if cell is None or cell.strip() == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise ValueError(f"non-numeric {what}: {cell!r}") from None


def _resolve_schema(schema: Mapping[str, str] | None) -> dict[str, str]:
    resolved = {name: name for name in REQUIRED_COLUMNS + OPTIONAL_COLUMNS}
    resolved["feature_prefix"] = FEATURE_PREFIX
    if schema:
        unknown = set(schema) - set(resolved)
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        resolved.update(schema)
    return resolved


def load_dataset(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    issues: list[RowIssue] | None = None,
) -> list[FieldRecord]:
    """Load field records from a CSV file.

    Rows violating record invariants (non-numeric or non-finite coordinates,
    negative or non-numeric yields, partially filled feature cells) are
    skipped; each rejection is logged with its data row number and, when an
    ``issues`` list is supplied, appended to it.

    Raises ``SchemaError`` when a required column is absent and
    ``DatasetError`` when the file has no data rows.
    """
    cols = _resolve_schema(schema)
    path = Path(path)
    collected: list[RowIssue] = issues if issues is not None else []
    records: list[FieldRecord] = []

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise DatasetError(f"{path}: empty file")
        missing = [cols[c] for c in REQUIRED_COLUMNS if cols[c] not in header]
        if missing:
            raise SchemaError(f"{path}: missing required columns {missing}")
        feat_cols = sorted(
            (c for c in header if c.startswith(cols["feature_prefix"])),
            key=lambda c: int(c[len(cols["feature_prefix"]):]),
        )

        n_rows = 0
        for row_no, row in enumerate(reader, start=1):
            n_rows += 1
            try:
                records.append(_parse_row(row, row_no, cols, feat_cols))
            except ValueError as exc:
                issue = RowIssue(row=row_no, message=str(exc))
                collected.append(issue)
                logger.warning("%s: row %d rejected: %s", path, row_no, exc)

    if n_rows == 0:
        raise DatasetError(f"{path}: no records")
    return records


def _parse_row(
    row: Mapping[str, str],
    row_no: int,
    cols: Mapping[str, str],
    feat_cols: Sequence[str],
) -> FieldRecord:
    field_id = (row.get(cols["field_id"]) or "").strip()
    zone_id = (row.get(cols["zone_id"]) or "").strip()
    admin1 = (row.get(cols["admin1"]) or "").strip()
    if not field_id or not zone_id:
        raise ValueError("missing field_id or zone_id")

    lat = _parse_float(row.get(cols["latitude"]), "latitude")
    lon = _parse_float(row.get(cols["longitude"]), "longitude")
    if lat is None or lon is None or not (math.isfinite(lat) and math.isfinite(lon)):
        raise ValueError("latitude/longitude missing or non-finite")

    y = _parse_float(row.get(cols["yield"]), "yield")
    if y is not None and (not math.isfinite(y) or y < 0):
        raise ValueError(f"yield must be finite and >= 0, got {y}")

    pred = _parse_float(row.get(cols["prediction"]), "prediction")
    if pred is not None and not math.isfinite(pred):
        raise ValueError("prediction non-finite")

    features: tuple[float, ...] | None = None
    if feat_cols:
        cells = [_parse_float(row.get(c), c) for c in feat_cols]
        present = [c for c in cells if c is not None]
        if len(present) == len(feat_cols):
            if not all(math.isfinite(v) for v in present):
                raise ValueError("non-finite feature value")
            features = tuple(present)
        elif present:
            raise ValueError("partially filled feature vector")

    return FieldRecord(
        field_id=field_id,
        zone_id=zone_id,
        admin1=admin1,
        latitude=lat,
        longitude=lon,
        yield_=y,
        prediction=pred,
        features=features,
    )


def write_dataset(records: Iterable[FieldRecord], path: str | Path) -> None:
    """Write records to CSV in the same schema :func:`load_dataset` reads.

    Floats are written with ``repr`` (shortest round-trip form), so a
    write/load cycle reproduces the record multiset exactly and repeated
    writes of the same records are byte-identical.
    """
    records = list(records)
    dim = 0
    for rec in records:
        if rec.features is not None:
            dim = len(rec.features)
            break
    header = list(REQUIRED_COLUMNS) + list(OPTIONAL_COLUMNS)
    header += [f"{FEATURE_PREFIX}{i}" for i in range(dim)]

    def fmt(v: float | None) -> str:
        return "" if v is None else repr(v)

    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in records:
            row = [
                rec.field_id,
                rec.zone_id,
                rec.admin1,
                repr(rec.latitude),
                repr(rec.longitude),
                fmt(rec.yield_),
                fmt(rec.prediction),
            ]
            feats = rec.features if rec.features is not None else ()
            row += [repr(v) for v in feats] + [""] * (dim - len(feats))
            writer.writerow(row)


def filter_eligible_zones(
    records: Iterable[FieldRecord], min_zone_size: int
) -> list[ZoneDataset]:
    """Group records by zone and keep zones with >= min_zone_size labeled fields.

    The dropped-zone summary is logged as JSON.  Output is sorted by zone_id.
    """
    if min_zone_size < 1:
        raise ValueError("min_zone_size must be >= 1")

    by_zone: dict[str, ZoneDataset] = {}
    for rec in records:
        zone = by_zone.setdefault(rec.zone_id, ZoneDataset(rec.zone_id, "", [], []))
        (zone.labeled if rec.is_labeled else zone.unlabeled).append(rec)

    kept: list[ZoneDataset] = []
    dropped: dict[str, int] = {}
    for zone_id in sorted(by_zone):
        zone = by_zone[zone_id]
        if zone.n >= min_zone_size:
            kept.append(zone)
        else:
            dropped[zone_id] = zone.n
    summary = {
        "min_zone_size": min_zone_size,
        "zones_kept": len(kept),
        "zones_dropped": len(dropped),
        "dropped_labeled_counts": dropped,
    }
    logger.info("zone eligibility filter: %s", json.dumps(summary, sort_keys=True))
    return kept


def assign_study_regions(zones: Sequence[ZoneDataset], rng_seed: int) -> list[ZoneDataset]:
    """Set each zone's study region to the plurality admin1 of its fields.

    All fields count (labeled and unlabeled).  Ties are broken by a draw from
    a substream keyed by (seed, zone_id), so the result depends only on the
    zone's contents and the seed, never on list order.
    """
    assigned = []
    for zone in zones:
        counts = Counter(rec.admin1 for rec in zone.fields)
        if not counts:
            raise ValueError(f"zone {zone.zone_id} has no fields")
        top = max(counts.values())
        tied = sorted(a for a, c in counts.items() if c == top)
        if len(tied) == 1:
            region = tied[0]
        else:
            rng = substream(rng_seed, "study-region", zone.zone_id)
            region = tied[int(rng.integers(len(tied)))]
        assigned.append(
            ZoneDataset(zone.zone_id, region, list(zone.labeled), list(zone.unlabeled))
        )
    return assigned
