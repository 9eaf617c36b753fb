"""Dataset readers and writers.

Two series formats are supported:

* UCR text: one series per line, class label first, values after, comma or
  tab/whitespace delimited. Lines may differ in length; trailing NaN padding
  is dropped.
* Multivariate long CSV: rows of ``series_id, channel_id, t, value`` with an
  optional header, plus an optional ``series_id, label`` file.
"""

from __future__ import annotations

import csv
import hashlib
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from .embedding import EmbeddedCovariance, MultiSeries, TimeSeries
from .errors import ValidationError

Series = Union[TimeSeries, MultiSeries]


@dataclass
class Dataset:
    series: List[Series]
    source: str = ""
    format: str = ""

    def __post_init__(self):
        if not self.series:
            raise ValidationError(f"dataset {self.source or ''} is empty")
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            raise ValidationError("series ids are not unique")

    def __len__(self):
        return len(self.series)

    @property
    def ids(self):
        return [s.id for s in self.series]

    @property
    def labels(self):
        labels = [s.label for s in self.series]
        return None if any(lab is None for lab in labels) else labels

    def digest(self):
        """SHA-256 over ids, labels and the float64 bytes of every value."""
        h = hashlib.sha256()
        for s in self.series:
            h.update(f"{s.id}\x00{s.label}\x00".encode())
            for ch in channels_of(s):
                h.update(np.asarray(ch.values, dtype="<f8").tobytes())
                h.update(b"\x01")
        return h.hexdigest()


def channels_of(s):
    return list(s.channels) if isinstance(s, MultiSeries) else [s]


def _label_text(raw):
    value = float(raw)
    if value.is_integer():
        return str(int(value))
    return raw


def load_ucr(path):
    path = Path(path)
    series = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",") if "," in line else line.split()
            try:
                label = _label_text(fields[0].strip())
                values = np.array([float(f) for f in fields[1:]], dtype=float)
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            while values.size and math.isnan(values[-1]):
                values = values[:-1]
            if values.size < 2:
                raise ValidationError(f"{path}:{lineno}: series needs at least 2 values")
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"{path}:{lineno}: non-finite value inside the series")
            series.append(TimeSeries(f"s{lineno:05d}", values, label))
    if not series:
        raise ValidationError(f"{path}: no series found")
    return Dataset(series, str(path), "ucr")


def write_ucr(series, path, delimiter=","):
    with Path(path).open("w") as fh:
        for s in series:
            label = s.label if s.label is not None else "0"
            fh.write(delimiter.join([label] + [repr(float(v)) for v in s.values]) + "\n")


def load_multivariate(path, labels_path=None):
    path = Path(path)
    cells = defaultdict(lambda: defaultdict(dict))
    order = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise ValidationError(f"{path}:{lineno}: expected 4 columns (series_id, channel_id, t, value)")
            sid, cid, t_raw, v_raw = (c.strip() for c in row)
            try:
                t = int(t_raw)
                value = float(v_raw)
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise ValidationError(f"{path}:{lineno}: bad t or value field") from None
            if sid not in cells:
                order.append(sid)
            if t in cells[sid][cid]:
                raise ValidationError(f"{path}:{lineno}: duplicate t={t} for {sid}/{cid}")
            cells[sid][cid][t] = value
    if not order:
        raise ValidationError(f"{path}: no observations found")
    labels = _read_labels(labels_path) if labels_path else {}
    out = []
    for sid in order:
        channels = []
        lengths = set()
        for cid, obs in cells[sid].items():
            ts = sorted(obs)
            if ts != list(range(ts[0], ts[0] + len(ts))):
                raise ValidationError(f"series {sid!r} channel {cid!r}: missing t index")
            channels.append(TimeSeries(f"{sid}/{cid}", [obs[t] for t in ts]))
            lengths.add((ts[0], len(ts)))
        if len(lengths) != 1:
            raise ValidationError(f"series {sid!r}: ragged channels {sorted(lengths)}")
        out.append(MultiSeries(sid, channels, labels.get(sid)))
    return Dataset(out, str(path), "multivariate")


def _read_labels(path):
    labels = {}
    with Path(path).open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}:{lineno}: expected series_id,label")
            sid, label = row[0].strip(), row[1].strip()
            if lineno == 1 and sid.lower() == "series_id":
                continue
            labels[sid] = label
    return labels


def write_multivariate(series, path, labels_path=None):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series_id", "channel_id", "t", "value"])
        for ms in series:
            for k, ch in enumerate(ms.channels):
                cid = ch.id.rsplit("/", 1)[-1] if "/" in ch.id else str(k)
                for t, v in enumerate(ch.values):
                    w.writerow([ms.id, cid, t, repr(float(v))])
    if labels_path:
        with Path(labels_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["series_id", "label"])
            for ms in series:
                w.writerow([ms.id, ms.label if ms.label is not None else ""])


def load_dataset(path, fmt="auto", labels_path=None):
    if fmt == "auto":
        fmt = "multivariate" if str(path).endswith(".csv") and _looks_long(path) else "ucr"
    if fmt == "ucr":
        return load_ucr(path)
    if fmt == "multivariate":
        return load_multivariate(path, labels_path)
    raise ValidationError(f"unknown dataset format {fmt!r}")


def _looks_long(path):
    with Path(path).open() as fh:
        first = fh.readline()
    return len(first.split(",")) == 4 and bool(re.match(r"\s*series_id\s*,", first))


def save_covariances(covs, path):
    np.savez(
        path,
        ids=np.array([c.source_id for c in covs]),
        matrices=np.array([c.matrix for c in covs]),
        norm_applied=np.array([c.norm_applied for c in covs]),
    )


def load_covariances(path):
    with np.load(path) as z:
        return [
            EmbeddedCovariance(m, str(i), bool(n)) for i, m, n in zip(z["ids"], z["matrices"], z["norm_applied"])
        ]
