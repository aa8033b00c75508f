"""Charging-transaction and station-location I/O, one-hot encoding, splits and synthetic data."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

CANONICAL_COLUMNS = ("cs_id", "tx_id", "date", "time", "energy_kwh")

# Header of the Dundee City Council open charging data, mapped onto the canonical names.
DUNDEE_COLUMNS = {
    "cs_id": "CP ID",
    "tx_id": "Charging event",
    "date": "Start Date",
    "time": "Start Time",
    "energy_kwh": "Total kWh",
}

DUNDEE_BOX = ((56.44, 56.49), (-3.05, -2.90))


class IngestError(ValueError):
    """Malformed input; ``row`` is the 1-based line number in the file (header is line 1)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass(frozen=True)
class TransactionRecord:
    cs_id: str
    tx_id: str
    date: dt.date
    start_time: dt.time
    energy_kwh: float

    def __post_init__(self):
        if not self.energy_kwh >= 0:
            raise ValueError(f"energy_kwh must be nonnegative, got {self.energy_kwh}")


@dataclass(frozen=True)
class StationLocation:
    cs_id: str
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


@dataclass(frozen=True)
class FeatureLayout:
    """Column blocks of the encoded matrix: stations, then 7 weekdays, then 24 hours."""

    stations: tuple[str, ...]

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    @property
    def width(self) -> int:
        return self.n_stations + 7 + 24

    def blocks(self) -> list[tuple[str, int, int]]:
        s = self.n_stations
        return [("station", 0, s), ("day_of_week", s, s + 7), ("hour", s + 7, s + 31)]


@dataclass
class EncodedDataset:
    features: np.ndarray
    labels: np.ndarray
    layout: FeatureLayout
    cs_ids: np.ndarray  # station id of each row, for sharding

    def __post_init__(self):
        if self.features.shape[0] != self.labels.shape[0] or self.cs_ids.shape[0] != self.labels.shape[0]:
            raise ValueError("features, labels and cs_ids must have the same row count")
        if self.features.shape[1] != self.layout.width:
            raise ValueError("feature width does not match layout")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, rows) -> EncodedDataset:
        rows = np.asarray(rows)
        return EncodedDataset(self.features[rows], self.labels[rows], self.layout, self.cs_ids[rows])

    def shard(self, cs_id: str) -> EncodedDataset:
        return self.subset(np.flatnonzero(self.cs_ids == cs_id))


def _parse_date(text: str, fmt: str | None) -> dt.date:
    text = text.strip()
    if fmt:
        return dt.datetime.strptime(text, fmt).date()
    return dt.date.fromisoformat(text)


def _parse_time(text: str) -> dt.time:
    text = text.strip()
    for fmt in ("%H:%M", "%H:%M:%S"):
        try:
            return dt.datetime.strptime(text, fmt).time().replace(second=0)
        except ValueError:
            continue
    raise ValueError(f"bad time {text!r}")


def parse_transactions(path: str | Path, registry: Sequence[str],
                       column_map: Mapping[str, str] | None = None,
                       date_format: str | None = None) -> list[TransactionRecord]:
    """Read a transactions CSV into records, in file order.

    ``column_map`` maps canonical names to the file's header names (see
    ``DUNDEE_COLUMNS``); dates are ISO unless ``date_format`` is given.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing file {path}")
    names = {c: (column_map or {}).get(c, c) for c in CANONICAL_COLUMNS}
    known = set(registry)
    out: list[TransactionRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [names[c] for c in CANONICAL_COLUMNS if names[c] not in header]
        if missing:
            raise IngestError(f"header lacks columns {missing}", row=1)
        for line, row in enumerate(reader, start=2):
            try:
                cs_id = row[names["cs_id"]].strip()
                if cs_id not in known:
                    raise ValueError(f"unknown cs_id {cs_id!r}")
                energy = float(row[names["energy_kwh"]])
                if not energy >= 0:
                    raise ValueError(f"negative energy {energy}")
                out.append(TransactionRecord(
                    cs_id=cs_id,
                    tx_id=row[names["tx_id"]].strip(),
                    date=_parse_date(row[names["date"]], date_format),
                    start_time=_parse_time(row[names["time"]]),
                    energy_kwh=energy,
                ))
            except (ValueError, TypeError, AttributeError) as exc:
                raise IngestError(str(exc), row=line) from exc
    return out


def parse_locations(path: str | Path) -> list[StationLocation]:
    path = Path(path)
    if not path.exists():
        raise IngestError(f"missing file {path}")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"cs_id", "latitude", "longitude"}:
            raise IngestError("header must declare cs_id,latitude,longitude", row=1)
        for line, row in enumerate(reader, start=2):
            try:
                out.append(StationLocation(row["cs_id"].strip(), float(row["latitude"]),
                                           float(row["longitude"])))
            except (ValueError, TypeError) as exc:
                raise IngestError(str(exc), row=line) from exc
    return out


def write_transactions(records: Sequence[TransactionRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for r in records:
            w.writerow([r.cs_id, r.tx_id, r.date.isoformat(), r.start_time.strftime("%H:%M"),
                        f"{r.energy_kwh:.3f}"])


def write_locations(locations: Sequence[StationLocation], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cs_id", "latitude", "longitude"])
        for s in locations:
            w.writerow([s.cs_id, f"{s.latitude:.6f}", f"{s.longitude:.6f}"])


def encode(records: Sequence[TransactionRecord], registry: Sequence[str]) -> EncodedDataset:
    """One-hot station, weekday (Monday = 0) and start-hour blocks; label is kWh."""
    layout = FeatureLayout(tuple(registry))
    index = {cs: k for k, cs in enumerate(registry)}
    n, s = len(records), layout.n_stations
    features = np.zeros((n, layout.width))
    labels = np.empty(n)
    ids = np.empty(n, dtype=object)
    for row, r in enumerate(records):
        if r.cs_id not in index:
            raise IngestError(f"unknown cs_id {r.cs_id!r}")
        features[row, index[r.cs_id]] = 1.0
        features[row, s + r.date.weekday()] = 1.0
        features[row, s + 7 + r.start_time.hour] = 1.0
        labels[row] = r.energy_kwh
        ids[row] = r.cs_id
    return EncodedDataset(features, labels, layout, ids)


def split(dataset: EncodedDataset, ratio: float, seed: int) -> tuple[EncodedDataset, EncodedDataset]:
    """Seeded shuffle, then the first floor(ratio * N) rows train and the rest test."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(np.floor(ratio * n))
    return dataset.subset(np.sort(perm[:cut])), dataset.subset(np.sort(perm[cut:]))


def station_ids(n_stations: int) -> list[str]:
    return [f"CS-{k + 1:02d}" for k in range(n_stations)]


def synth_generate(seed: int, n_stations: int, n_tx: int,
                   location_box: tuple[tuple[float, float], tuple[float, float]] = DUNDEE_BOX,
                   start: dt.date = dt.date(2018, 1, 1), n_days: int = 365,
                   ) -> tuple[list[TransactionRecord], list[StationLocation]]:
    """Reproducible synthetic transactions with station, weekday and hour structure.

    Each station has its own base session energy and a two-peak daily profile
    with a station-specific phase; weekends scale demand down. Noise is
    log-normal. Stations are placed uniformly inside ``location_box``.
    """
    if n_stations < 1 or n_tx < 1:
        raise ValueError("n_stations and n_tx must be >= 1")
    rng = np.random.default_rng(seed)
    ids = station_ids(n_stations)
    (lat_lo, lat_hi), (lon_lo, lon_hi) = location_box
    lats = rng.uniform(lat_lo, lat_hi, n_stations)
    lons = rng.uniform(lon_lo, lon_hi, n_stations)
    base = rng.uniform(6.0, 24.0, n_stations)
    phase = rng.uniform(-2.0, 2.0, n_stations)
    popularity = rng.dirichlet(np.full(n_stations, 4.0))

    # first pass covers every station once; the rest follow popularity
    station = np.concatenate([np.arange(min(n_stations, n_tx)),
                              rng.choice(n_stations, size=max(n_tx - n_stations, 0), p=popularity)])
    day = rng.integers(0, n_days, n_tx)
    hour_weights = np.exp(-0.5 * ((np.arange(24) - 8.5) / 2.0) ** 2) \
        + 1.2 * np.exp(-0.5 * ((np.arange(24) - 17.5) / 2.5) ** 2) + 0.08
    hour = rng.choice(24, size=n_tx, p=hour_weights / hour_weights.sum())
    minute = rng.integers(0, 60, n_tx)
    dates = [start + dt.timedelta(days=int(d)) for d in day]
    weekend = np.array([d.weekday() >= 5 for d in dates])
    h = hour.astype(float)
    profile = 1.0 + 0.6 * np.sin(2 * np.pi * (h - 6.0 + phase[station]) / 24.0) \
        + 0.3 * np.cos(2 * np.pi * h / 12.0)
    mean = base[station] * profile * np.where(weekend, 0.75, 1.0)
    energy = np.maximum(mean * rng.lognormal(-0.02, 0.2, n_tx), 0.0)
    records = [TransactionRecord(ids[s], f"T{k + 1:07d}", dates[k], dt.time(int(hour[k]), int(minute[k])),
                                 round(float(energy[k]), 3))
               for k, s in enumerate(station)]
    locations = [StationLocation(ids[k], float(lats[k]), float(lons[k])) for k in range(n_stations)]
    return records, locations
