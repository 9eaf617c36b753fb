"""Orchestration: embed -> train -> assign -> evaluate -> forecast.

Each stage writes its artifacts into one output directory and registers
them, with their SHA-256, in ``manifest.json``. The manifest is written
with status ``running`` before any stage executes and rewritten at the end
as ``ok`` or ``failed``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from sklearn.cluster import KMeans

from . import evaluation as ev
from .embedding import MultiSeries, TimeSeries, default_L, embed_any
from .errors import NumericalError, SOEMError, ValidationError
from .io import channels_of, save_covariances
from .ssa import DEFAULT_ENERGY, forecast, shared_model, univariate_model
from .trainer import Assignment, TrainConfig, assign, deviation_matrix, load_map, save_map, train

logger = logging.getLogger(__name__)

STAGES = ("embed", "train", "assign", "evaluate", "forecast")
DEFAULT_HOLDOUT_TRAIN_FRAC = 2 / 3


@dataclass
class PipelineConfig:
    rows: int = 30
    cols: int = 30
    iterations: int = 10
    sigma0: Optional[float] = None
    nu0: float = 0.9
    jd_tol: float = 1e-8
    jd_max_sweeps: int = 100
    seed: int = 0
    unit_norm: bool = True
    zscore: bool = False
    stop_below_unit_radius: bool = False
    embed_policy: str = "tenth"
    clusters: int = 3
    horizons: Tuple[int, ...] = (1, 3, 6, 12)
    train_frac: Optional[float] = None
    energy: float = DEFAULT_ENERGY
    r: Optional[int] = None
    draws: int = 100
    random_partitions: int = 10
    cache_covariances: bool = True

    def __post_init__(self):
        self.horizons = tuple(int(h) for h in self.horizons)
        if not self.horizons or min(self.horizons) < 1:
            raise ValidationError("horizons must be positive integers")
        if self.train_frac is not None and not 0 < self.train_frac <= 1:
            raise ValidationError("train_frac must be in (0, 1]")
        if self.clusters < 1:
            raise ValidationError("clusters must be >= 1")

    def train_config(self, L):
        return TrainConfig(
            rows=self.rows,
            cols=self.cols,
            L=L,
            iterations=self.iterations,
            sigma0=self.sigma0,
            nu0=self.nu0,
            jd_tol=self.jd_tol,
            jd_max_sweeps=self.jd_max_sweeps,
            seed=self.seed,
            unit_norm=self.unit_norm,
            stop_below_unit_radius=self.stop_below_unit_radius,
        )

    def effective_train_frac(self, commands):
        if self.train_frac is not None:
            return self.train_frac
        return DEFAULT_HOLDOUT_TRAIN_FRAC if "forecast" in commands else 1.0

    def to_dict(self):
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def parse_config_value(key, raw):
    if key not in _FIELD_TYPES:
        raise ValidationError(f"unknown config key {key!r}")
    raw = raw.strip()
    kind = _FIELD_TYPES[key]
    try:
        if raw.lower() in ("none", "") and "Optional" in kind:
            return None
        if kind == "bool":
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if "Tuple" in kind:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return _fraction(raw)
        return raw
    except ValueError:
        raise ValidationError(f"bad value {raw!r} for config key {key!r}") from None


def _fraction(raw):
    if "/" in raw:
        a, b = raw.split("/")
        return float(a) / float(b)
    return float(raw)


def read_config(path):
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        values[key] = parse_config_value(key, raw)
    return values


def make_config(path=None, **overrides):
    values = read_config(path) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


# --- partitioning and forecasting --------------------------------------------------


def partition_grid(assignment, K, seed=0, n_init=50):
    """k-means over winner coordinates; labels renumbered by first appearance."""
    coords = np.asarray(assignment.winner if isinstance(assignment, Assignment) else assignment, dtype=float)
    if K < 1:
        raise ValidationError("K must be >= 1")
    distinct = len({tuple(c) for c in coords})
    if K > distinct:
        raise ValidationError(f"K={K} exceeds the {distinct} distinct winning nodes")
    if K == 1:
        return np.zeros(len(coords), dtype=int)
    raw = KMeans(n_clusters=K, n_init=n_init, random_state=seed).fit(coords).labels_
    relabel = {}
    for lab in raw:
        relabel.setdefault(int(lab), len(relabel))
    return np.array([relabel[int(lab)] for lab in raw])


def _cluster_model(train_values, L, r, energy):
    try:
        return shared_model(train_values, L, r=r, energy=energy), False
    except NumericalError as exc:
        logger.warning("shared LRF failed (%s); using univariate models for this cluster", exc)
        return None, True


def rolling_origin_errors(values, n_train, model, horizons):
    """Squared h-step errors for every origin in the holdout of one series.

    The model is fixed; the origin rolls from the end of the training prefix
    to the last point for which an ``h``-step target exists.
    """
    hmax = max(horizons)
    out = {h: [] for h in horizons}
    N = values.size
    for origin in range(n_train, N):
        fc = forecast(values[:origin], model, hmax)
        for h in horizons:
            target = origin + h - 1
            if target < N:
                out[h].append((fc[h - 1] - values[target]) ** 2)
    return out


def partition_rmse(values, n_train, parts, L, horizons, r=None, energy=DEFAULT_ENERGY):
    """RMSE per horizon of cluster-wise MSSA, pooled over all origins and series."""
    sq = {h: [] for h in horizons}
    for p in np.unique(parts):
        idx = np.flatnonzero(parts == p)
        model, fallback = _cluster_model([values[i][: n_train[i]] for i in idx], L, r, energy)
        for i in idx:
            m = univariate_model(values[i][: n_train[i]], L, r=r, energy=energy) if fallback else model
            for h, errs in rolling_origin_errors(values[i], n_train[i], m, horizons).items():
                sq[h].extend(errs)
    return {h: float(np.sqrt(np.mean(sq[h]))) if sq[h] else float("nan") for h in horizons}


def expand_channels(series_list, parts):
    """Flatten multivariate members into per-channel series, inheriting the member's cluster."""
    ids, values, ch_parts = [], [], []
    for s, p in zip(series_list, parts):
        for ch in channels_of(s):
            ids.append(ch.id)
            values.append(ch.values)
            ch_parts.append(p)
    return ids, values, np.array(ch_parts)


# --- stages ------------------------------------------------------------------------


@dataclass
class RunManifest:
    config: Dict
    commands: List[str]
    input_digest: str
    source: str = ""
    L: Optional[int] = None
    train_frac: float = 1.0
    status: str = "running"
    error: Optional[str] = None
    outputs: Dict[str, Dict[str, str]] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def validate_commands(commands):
    commands = list(commands)
    if not commands:
        raise ValidationError("no pipeline stages requested")
    unknown = [c for c in commands if c not in STAGES]
    if unknown:
        raise ValidationError(f"unknown stage(s) {unknown}")
    start = STAGES.index(commands[0])
    if commands != list(STAGES[start : start + len(commands)]):
        raise ValidationError(f"stages must form a contiguous chain in the order {STAGES}")
    return commands


def training_prefix(s, frac):
    """Leading ``floor(frac * N)`` observations of a series (all channels)."""
    if frac >= 1:
        return s
    n = int(np.floor(frac * len(s)))
    if isinstance(s, MultiSeries):
        return MultiSeries(s.id, [TimeSeries(c.id, c.values[:n], c.label) for c in s.channels], s.label)
    return TimeSeries(s.id, s.values[:n], s.label)


def resolve_L(dataset, cfg, frac):
    shortest = min(len(training_prefix(s, frac)) for s in dataset.series)
    L = default_L(shortest, cfg.embed_policy)
    # every series must embed with at least two columns
    if shortest < L + 1:
        raise ValidationError(f"shortest training series has {shortest} points; need more than L={L}")
    return L


def _fmt(x):
    return repr(float(x))


def write_assignment(path, ids, a):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "i", "j", "deviation", "runner_i", "runner_j", "runner_deviation"])
        for k, sid in enumerate(ids):
            w.writerow(
                [sid, int(a.winner[k, 0]), int(a.winner[k, 1]), _fmt(a.deviation[k]),
                 int(a.runner_up[k, 0]), int(a.runner_up[k, 1]), _fmt(a.runner_up_deviation[k])]
            )


def read_assignment(path):
    rows = list(csv.DictReader(Path(path).open(newline="")))
    if not rows:
        raise ValidationError(f"{path}: empty assignment file")
    winner = np.array([[int(r["i"]), int(r["j"])] for r in rows])
    runner = np.array([[int(r["runner_i"]), int(r["runner_j"])] for r in rows])
    return [r["id"] for r in rows], Assignment(
        winner,
        np.array([float(r["deviation"]) for r in rows]),
        runner,
        np.array([float(r["runner_deviation"]) for r in rows]),
    )


class Pipeline:
    """Holds intermediate state between stages of one run."""

    def __init__(self, dataset, cfg, out_dir, commands):
        self.dataset = dataset
        self.cfg = cfg
        self.out = Path(out_dir)
        self.commands = validate_commands(commands)
        self.frac = cfg.effective_train_frac(self.commands)
        self.train_series = [training_prefix(s, self.frac) for s in dataset.series]
        self.L = resolve_L(dataset, cfg, self.frac)
        self.covs = None
        self.map = None
        self.assignment = None
        self.manifest = RunManifest(
            config=cfg.to_dict(),
            commands=self.commands,
            input_digest=dataset.digest(),
            source=dataset.source,
            L=self.L,
            train_frac=self.frac,
        )

    def _register(self, name, path):
        self.manifest.outputs[name] = {"path": str(Path(path).name), "sha256": sha256_file(path)}

    def covariances(self):
        if self.covs is None:
            self.covs = [
                embed_any(s, self.L, unit_norm=self.cfg.unit_norm, zscore=self.cfg.zscore)
                for s in self.train_series
            ]
        return self.covs

    def eigenmap(self):
        if self.map is None:
            path = self.out / "map.json"
            if not path.exists():
                raise ValidationError(f"{path} not found; run the train stage first")
            self.map = load_map(path)
            if self.map.L != self.L:
                raise ValidationError(f"map has L={self.map.L} but the data resolves to L={self.L}")
        return self.map

    def current_assignment(self):
        if self.assignment is None:
            self.assignment = assign(self.eigenmap(), self.covariances())
        return self.assignment

    # stages

    def embed(self):
        covs = self.covariances()
        if self.cfg.cache_covariances or self.commands == ["embed"]:
            path = self.out / "covariances.npz"
            save_covariances(covs, path)
            self._register("covariances", path)

    def train(self):
        result = train(self.covariances(), self.cfg.train_config(self.L))
        self.map = result.map
        path = self.out / "map.json"
        save_map(self.map, path)
        self._register("map", path)
        hist = self.out / "training_history.csv"
        with hist.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "sigma", "nu", "mean_deviation"])
            for i, (a, s, n) in enumerate(zip(result.history, result.sigmas, result.nus)):
                w.writerow([i, _fmt(s), _fmt(n), _fmt(a.deviation.mean())])
        self._register("training_history", hist)

    def assign(self):
        a = self.current_assignment()
        path = self.out / "assignment.csv"
        write_assignment(path, self.dataset.ids, a)
        self._register("assignment", path)

    def evaluate(self):
        emap, covs, a = self.eigenmap(), self.covariances(), self.current_assignment()
        report = ev.evaluate(emap, covs, a, labels=self.dataset.labels, draws=self.cfg.draws, seed=self.cfg.seed)
        path = self.out / "report.json"
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        self._register("report", path)

        curve = self.out / "rank_distance.csv"
        with curve.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "mean_distance"])
            for k, d in report.rank_distance_curve:
                w.writerow([k, _fmt(d)])
        self._register("rank_distance", curve)

        dev = deviation_matrix(emap, covs)
        coords = emap.coords()
        surf = self.out / "deviation_surfaces.csv"
        with surf.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "i", "j", "deviation"])
            for sid, row in zip(self.dataset.ids, dev):
                for (i, j), v in zip(coords, row):
                    w.writerow([sid, int(i), int(j), _fmt(v)])
        self._register("deviation_surfaces", surf)

    def forecast(self):
        cfg = self.cfg
        parts = partition_grid(self.current_assignment(), cfg.clusters, seed=cfg.seed)
        ids, values, ch_parts = expand_channels(self.dataset.series, parts)
        n_train = [int(np.floor(self.frac * v.size)) for v in values]
        hmax = max(cfg.horizons)

        fc_path = self.out / "forecast.csv"
        with fc_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "cluster", "horizon", "value"])
            for p in np.unique(ch_parts):
                idx = np.flatnonzero(ch_parts == p)
                model, fallback = _cluster_model([values[i][: n_train[i]] for i in idx], self.L, cfg.r, cfg.energy)
                for i in idx:
                    m = univariate_model(values[i][: n_train[i]], self.L, cfg.r, cfg.energy) if fallback else model
                    for h, v in enumerate(forecast(values[i], m, hmax), start=1):
                        w.writerow([ids[i], int(p), h, _fmt(v)])
        self._register("forecast", fc_path)

        clusters_path = self.out / "clusters.csv"
        with clusters_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "cluster"])
            for sid, p in zip(self.dataset.ids, parts):
                w.writerow([sid, int(p)])
        self._register("clusters", clusters_path)

        if self.frac >= 1:
            logger.warning("train_frac is 1; no holdout, skipping the rolling-origin RMSE table")
            return
        table = rmse_table(values, n_train, ch_parts, self.L, cfg)
        rmse_path = self.out / "rmse.csv"
        with rmse_path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["h", "MSSA", "SOEM-MSSA", "random-MSSA"])
            for h in cfg.horizons:
                w.writerow([h] + [_fmt(table[name][h]) for name in ("MSSA", "SOEM-MSSA", "random-MSSA")])
        self._register("rmse", rmse_path)


def random_partitions(n, K, count, seed):
    """``count`` seeded uniform labelings of ``n`` items into at most ``K`` groups."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
    return [rng.integers(0, K, n) for _ in range(count)]


def rmse_table(values, n_train, parts, L, cfg):
    """Rolling-origin RMSE of pooled, SOEM-partitioned and random-partition MSSA."""
    kw = dict(r=cfg.r, energy=cfg.energy)
    table = {
        "MSSA": partition_rmse(values, n_train, np.zeros(len(values), dtype=int), L, cfg.horizons, **kw),
        "SOEM-MSSA": partition_rmse(values, n_train, parts, L, cfg.horizons, **kw),
    }
    K = len(np.unique(parts))
    rand = [
        partition_rmse(values, n_train, p, L, cfg.horizons, **kw)
        for p in random_partitions(len(values), K, cfg.random_partitions, cfg.seed)
    ]
    table["random-MSSA"] = {h: float(np.mean([r[h] for r in rand])) for h in cfg.horizons}
    return table


def run_pipeline(dataset, cfg, commands=STAGES, out_dir="."):
    """Run a contiguous chain of stages and return the finalized manifest.

    Stages after ``train`` that run without it load ``map.json`` from
    ``out_dir``. When forecasting, everything upstream (embedding, training,
    LRF fitting) sees only the training prefix of each series.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipe = Pipeline(dataset, cfg, out, commands)
    manifest = pipe.manifest
    manifest.write(out)
    try:
        for stage in pipe.commands:
            t0 = time.perf_counter()
            logger.info("stage %s", stage)
            getattr(pipe, stage)()
            manifest.timings[stage] = round(time.perf_counter() - t0, 6)
    except SOEMError as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.write(out)
        raise
    manifest.status = "ok"
    manifest.write(out)
    return manifest
