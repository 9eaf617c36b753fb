"""Time-delay embedding and embedded covariances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class TimeSeries:
    id: str
    values: np.ndarray
    label: Optional[str] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValidationError(f"series {self.id!r} needs at least 2 values")
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"series {self.id!r} has non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class MultiSeries:
    id: str
    channels: Sequence[TimeSeries]
    label: Optional[str] = None

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise ValidationError(f"multiseries {self.id!r} has no channels")
        lengths = {len(ch) for ch in channels}
        if len(lengths) != 1:
            raise ValidationError(f"multiseries {self.id!r} has channels of unequal length {sorted(lengths)}")
        object.__setattr__(self, "channels", channels)

    def __len__(self):
        return len(self.channels[0])


@dataclass(frozen=True)
class EmbeddedCovariance:
    """An L x L delay-embedding covariance tagged with its source series."""

    matrix: np.ndarray
    source_id: str = ""
    norm_applied: bool = False

    @property
    def L(self):
        return self.matrix.shape[0]


def _values(series):
    if isinstance(series, TimeSeries):
        return series.values
    return np.asarray(series, dtype=float)


def embed(series, L):
    """Hankel trajectory matrix of shape (L, N - L + 1); column j is ``y[j:j+L]``."""
    y = _values(series)
    N = y.size
    # L == N is allowed: a single-column trajectory
    if not 2 <= L <= N:
        raise ValidationError(f"embedding dimension L={L} out of range for series of length N={N}")
    K = N - L + 1
    return np.lib.stride_tricks.sliding_window_view(y, L)[:K].T.copy()


def covariance(X, unit_norm=True, source_id=""):
    """``X @ X.T`` for a trajectory matrix, optionally scaled to unit Frobenius norm."""
    X = np.asarray(X, dtype=float)
    C = X @ X.T
    C = 0.5 * (C + C.T)
    if unit_norm:
        norm = np.linalg.norm(C)
        if norm == 0:
            raise ValidationError(f"zero covariance for {source_id or 'series'}; cannot normalise")
        C = C / norm
    return EmbeddedCovariance(C, source_id, unit_norm)


def series_covariance(series, L, unit_norm=True):
    """Shortcut for ``covariance(embed(series, L))``."""
    sid = series.id if isinstance(series, TimeSeries) else ""
    return covariance(embed(series, L), unit_norm=unit_norm, source_id=sid)


def stack_covariance(ms, L, unit_norm=True):
    """Covariance of the horizontally stacked trajectory matrices of all channels.

    ``[X1 ... XM] @ [X1 ... XM].T`` equals the sum of per-channel
    covariances, so it is accumulated channel by channel; the result stays
    L x L whatever the channel count.
    """
    if isinstance(ms, MultiSeries):
        channels, sid = ms.channels, ms.id
    else:
        channels, sid = list(ms), ""
    if not channels:
        raise ValidationError("no channels to stack")
    lengths = {len(_values(ch)) for ch in channels}
    if len(lengths) != 1:
        raise ValidationError(f"channel lengths differ: {sorted(lengths)}")
    if min(lengths) < L + 1:
        raise ValidationError(f"channels of length {min(lengths)} are too short for L={L}")
    C = np.zeros((L, L))
    for ch in channels:
        X = embed(ch, L)
        C += X @ X.T
    C = 0.5 * (C + C.T)
    if unit_norm:
        norm = np.linalg.norm(C)
        if norm == 0:
            raise ValidationError(f"zero covariance for {sid or 'multiseries'}; cannot normalise")
        C = C / norm
    return EmbeddedCovariance(C, sid, unit_norm)


def embed_any(item, L, unit_norm=True, zscore=False):
    """Covariance for either a TimeSeries or a MultiSeries."""
    if isinstance(item, MultiSeries):
        if zscore:
            item = MultiSeries(item.id, [_zscored(ch) for ch in item.channels], item.label)
        return stack_covariance(item, L, unit_norm)
    if zscore:
        item = _zscored(item)
    return series_covariance(item, L, unit_norm)


def _zscored(ts):
    sd = ts.values.std()
    values = ts.values - ts.values.mean()
    if sd > 0:
        values = values / sd
    return TimeSeries(ts.id, values, ts.label)


def default_L(N, policy="tenth"):
    """Embedding dimension for a series of length ``N``.

    ``policy`` is ``"tenth"`` (ceil(N/10)), ``"fixed:K"`` or
    ``"fraction:F"`` (ceil(F*N)), or a ``(kind, value)`` tuple. The result
    is clamped to ``[2, N-1]``.
    """
    kind, value = parse_policy(policy)
    if kind == "tenth":
        L = math.ceil(N / 10)
    elif kind == "fixed":
        L = int(value)
    else:
        # rounding guard: 1/3 * 144 lands a hair above 48
        L = math.ceil(round(value * N, 9))
    return max(2, min(L, N - 1))


def parse_policy(policy):
    if isinstance(policy, tuple):
        kind, value = policy
    elif policy == "tenth":
        kind, value = "tenth", None
    else:
        kind, _, raw = str(policy).partition(":")
        try:
            value = _parse_number(raw)
        except ValueError:
            raise ValidationError(f"bad embedding policy {policy!r}") from None
    if kind not in ("tenth", "fixed", "fraction"):
        raise ValidationError(f"unknown embedding policy {policy!r}")
    if kind == "fixed" and (value is None or int(value) != value or value < 1):
        raise ValidationError(f"fixed policy needs a positive integer, got {value!r}")
    if kind == "fraction" and not (value is not None and 0 < value <= 1):
        raise ValidationError(f"fraction policy needs 0 < F <= 1, got {value!r}")
    return kind, value


def _parse_number(raw):
    if "/" in raw:
        num, den = raw.split("/")
        return float(num) / float(den)
    return float(raw)
