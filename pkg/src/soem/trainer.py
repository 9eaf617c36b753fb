"""Self-organising eigenspace map.

Every node of a bounded 2-D grid holds an orthonormal L x L basis. Inputs
are embedded covariance matrices. A node's response to an input ``C`` is
the off-diagonal mass left after the congruence ``U.T @ C @ U``; the node
with the smallest response wins. Training alternates a competitive pass
with a batch update in which every node is rotated, by weighted joint
diagonalisation, towards the inputs won near it.
"""

from __future__ import annotations

import base64
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .embedding import EmbeddedCovariance
from .errors import ValidationError
from .linalg import gram_schmidt, joint_diagonalize, off_batch

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MIN_NODE_WEIGHT = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    rows: int = 30
    cols: int = 30
    L: int = 10
    iterations: int = 10
    sigma0: Optional[float] = None
    nu0: float = 0.9
    jd_tol: float = 1e-8
    jd_max_sweeps: int = 100
    seed: int = 0
    unit_norm: bool = True
    stop_below_unit_radius: bool = False

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if not 0.0 <= self.nu0 <= 1.0:
            raise ValidationError(f"nu0 must lie in [0, 1], got {self.nu0}")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ValidationError("sigma0 must be positive")
        if self.L < 2:
            raise ValidationError("L must be >= 2")

    @property
    def initial_sigma(self):
        return self.sigma0 if self.sigma0 is not None else self.rows / 4

    def sigma(self, i):
        """Kernel radius at iteration ``i`` (0-based): shrinks as 4 / (4 + i)."""
        return self.initial_sigma * 4.0 / (4.0 + i)

    def nu(self, i):
        """Input gain at iteration ``i``: decays linearly from ``nu0``."""
        return self.nu0 * (1.0 - i / self.iterations)


@dataclass
class EigenMap:
    rows: int
    cols: int
    L: int
    bases: np.ndarray  # (rows, cols, L, L), basis vectors in columns
    iteration: int = 0
    seed: int = 0
    converged: Optional[np.ndarray] = None

    def __post_init__(self):
        self.bases = np.asarray(self.bases, dtype=float)
        if self.bases.shape != (self.rows, self.cols, self.L, self.L):
            raise ValidationError(
                f"bases have shape {self.bases.shape}, expected {(self.rows, self.cols, self.L, self.L)}"
            )
        if self.converged is None:
            self.converged = np.ones((self.rows, self.cols), dtype=bool)

    @property
    def n_nodes(self):
        return self.rows * self.cols

    def flat_bases(self):
        return self.bases.reshape(self.n_nodes, self.L, self.L)

    def coords(self):
        """Integer (i, j) coordinates of the nodes in row-major order."""
        ii, jj = np.divmod(np.arange(self.n_nodes), self.cols)
        return np.stack([ii, jj], axis=1)

    def copy(self):
        return replace(self, bases=self.bases.copy(), converged=self.converged.copy())


@dataclass
class Assignment:
    """Per-input winner and runner-up nodes (grid coordinates) with their deviations."""

    winner: np.ndarray  # (M, 2) int
    deviation: np.ndarray  # (M,)
    runner_up: np.ndarray  # (M, 2) int
    runner_up_deviation: np.ndarray  # (M,)

    def __len__(self):
        return self.deviation.size

    def winner_index(self, cols):
        return self.winner[:, 0] * cols + self.winner[:, 1]


def as_matrix_stack(inputs):
    """Stack covariances (or raw arrays) into an (M, L, L) float array."""
    mats = [c.matrix if isinstance(c, EmbeddedCovariance) else np.asarray(c, dtype=float) for c in inputs]
    if not mats:
        raise ValidationError("no inputs")
    stack = np.asarray(mats, dtype=float)
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise ValidationError(f"inputs must be square matrices of one size, got shape {stack.shape}")
    return stack


def init_map(cfg):
    """Random orthonormal bases: seeded normal vectors put through Gram-Schmidt."""
    rng = np.random.default_rng(_seed_streams(cfg.seed)[0])
    L = cfg.L
    bases = np.empty((cfg.rows, cfg.cols, L, L))
    for i in range(cfg.rows):
        for j in range(cfg.cols):
            bases[i, j] = gram_schmidt(rng.standard_normal((L, L)), rng=rng)
    return EigenMap(cfg.rows, cfg.cols, L, bases, 0, cfg.seed)


def _seed_streams(seed):
    # independent streams: map initialisation, competition
    return np.random.SeedSequence(seed).spawn(2)


def node_deviation(U, C):
    """``off(U.T @ C @ U)``; for an orthonormal U the normal-equation factor is I."""
    U = np.asarray(U, dtype=float)
    C = C.matrix if isinstance(C, EmbeddedCovariance) else np.asarray(C, dtype=float)
    if U.shape != C.shape:
        raise ValidationError(f"basis is {U.shape}, input is {C.shape}")
    return float(off_batch(U.T @ C @ U))


def deviation_matrix(emap, inputs):
    """Deviation of every input at every node, shape (M, n_nodes)."""
    stack = as_matrix_stack(inputs)
    if stack.shape[1] != emap.L:
        raise ValidationError(f"inputs are {stack.shape[1]}x{stack.shape[1]}, map has L={emap.L}")
    U = emap.flat_bases()
    Ut = np.swapaxes(U, 1, 2)
    out = np.empty((stack.shape[0], emap.n_nodes))
    for m, C in enumerate(stack):
        out[m] = off_batch(Ut @ C @ U)
    return np.maximum(out, 0.0)


def compete(emap, inputs, first_iteration=False, rng=None):
    """Competitive pass.

    On the first training iteration winners are drawn uniformly at random;
    otherwise the winner minimises the node deviation, with exact ties broken
    uniformly by ``rng``. The runner-up is the best node other than the
    winner (the winner itself on a 1x1 grid).
    """
    if rng is None:
        rng = np.random.default_rng(emap.seed)
    dev = deviation_matrix(emap, inputs)
    M, n = dev.shape
    win = np.empty(M, dtype=int)
    run = np.empty(M, dtype=int)
    for m in range(M):
        row = dev[m]
        if first_iteration:
            win[m] = rng.integers(n)
        else:
            ties = np.flatnonzero(row == row.min())
            win[m] = ties[0] if ties.size == 1 else rng.choice(ties)
        if n == 1:
            run[m] = win[m]
        else:
            others = row.copy()
            others[win[m]] = np.inf
            run[m] = int(np.argmin(others))
    coords = emap.coords()
    idx = np.arange(M)
    return Assignment(coords[win], dev[idx, win], coords[run], dev[idx, run])


def assign(emap, inputs, seed=None):
    """Inference pass on a trained map: the competitive rule without random winners."""
    rng = np.random.default_rng(emap.seed if seed is None else seed)
    return compete(emap, inputs, first_iteration=False, rng=rng)


def kernel(dist, sigma):
    """Gaussian neighbourhood weight ``exp(-dist**2 / (2 sigma**2))``."""
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    dist = np.asarray(dist, dtype=float)
    out = np.exp(-(dist**2) / (2.0 * sigma**2))
    return float(out) if out.ndim == 0 else out


def incumbent_spectrum(L):
    lam = np.arange(L, 0, -1, dtype=float)
    return lam / np.linalg.norm(lam)


def update_node(U, stack, weights, nu, tol=1e-8, max_sweeps=100):
    """Rotate one node basis towards its weighted inputs.

    The node's own basis enters the joint diagonalisation as the incumbent
    matrix ``U diag(L, ..., 1) U.T`` (unit norm) with weight
    ``(1 - nu) * sum(weights)``; the inputs get ``nu * weights``. The
    diagonalisation is warm-started from ``U``.
    """
    total = float(np.sum(weights))
    lam = incumbent_spectrum(U.shape[0])
    incumbent = (U * lam) @ U.T
    mats = np.concatenate([incumbent[None], stack])
    w = np.concatenate([[(1.0 - nu) * total], nu * np.asarray(weights, dtype=float)])
    return joint_diagonalize(mats, w, init=U, tol=tol, max_sweeps=max_sweeps)


def num_threads():
    """Worker threads for node updates, from ``SOEM_NUM_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SOEM_NUM_THREADS", "1")))
    except ValueError:
        return 1


def update_bases(emap, inputs, assignment, sigma, nu, tol=1e-8, max_sweeps=100, threads=None):
    """Batch update: every node sees all inputs, weighted by grid distance to their winners.

    Nodes are independent, so they may be updated on several threads; each
    writes only its own basis and the result does not depend on scheduling.
    """
    stack = as_matrix_stack(inputs)
    if len(assignment) != stack.shape[0]:
        raise ValidationError(f"assignment covers {len(assignment)} inputs, got {stack.shape[0]}")
    coords = emap.coords().astype(float)
    winners = assignment.winner.astype(float)
    new = emap.copy()
    flat = new.bases.reshape(emap.n_nodes, emap.L, emap.L)
    conv = new.converged.reshape(-1)

    def work(n):
        dist = np.hypot(*(winners - coords[n]).T)
        w = kernel(dist, sigma)
        if w.sum() < MIN_NODE_WEIGHT:
            return
        res = update_node(flat[n], stack, w, nu, tol=tol, max_sweeps=max_sweeps)
        flat[n] = res.basis
        conv[n] = res.converged

    threads = num_threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, range(emap.n_nodes)))
    else:
        for n in range(emap.n_nodes):
            work(n)
    if not conv.all():
        logger.warning("%d node(s) hit the sweep limit", int((~conv).sum()))
    return new


@dataclass
class TrainResult:
    map: EigenMap
    history: List[Assignment] = field(default_factory=list)
    sigmas: List[float] = field(default_factory=list)
    nus: List[float] = field(default_factory=list)


def train(inputs, cfg, emap=None):
    """Run ``cfg.iterations`` rounds of compete -> update_bases.

    Deterministic for a fixed ``cfg.seed``. Returns the final map together
    with the assignment, kernel radius and gain used at every iteration.
    """
    stack = as_matrix_stack(inputs)
    if stack.shape[1] != cfg.L:
        raise ValidationError(f"inputs are {stack.shape[1]}x{stack.shape[1]}, config has L={cfg.L}")
    emap = init_map(cfg) if emap is None else emap.copy()
    rng = np.random.default_rng(_seed_streams(cfg.seed)[1])
    result = TrainResult(emap)
    for i in range(cfg.iterations):
        sigma, nu = cfg.sigma(i), cfg.nu(i)
        if cfg.stop_below_unit_radius and sigma < 1.0:
            logger.info("kernel radius %.3f below one; stopping at iteration %d", sigma, i)
            break
        a = compete(emap, stack, first_iteration=(i == 0), rng=rng)
        emap = update_bases(emap, stack, a, sigma, nu, tol=cfg.jd_tol, max_sweeps=cfg.jd_max_sweeps)
        emap.iteration = i + 1
        result.history.append(a)
        result.sigmas.append(sigma)
        result.nus.append(nu)
        logger.debug("iteration %d: sigma=%.3f nu=%.3f mean deviation=%.4g", i, sigma, nu, a.deviation.mean())
    result.map = emap
    return result


def save_map(emap, path):
    """Write a map as JSON; each basis is base64 of little-endian float64 in column-major order."""
    blocks = [
        base64.b64encode(np.asarray(U, dtype="<f8").tobytes(order="F")).decode("ascii")
        for U in emap.flat_bases()
    ]
    doc = {
        "format_version": FORMAT_VERSION,
        "rows": emap.rows,
        "cols": emap.cols,
        "L": emap.L,
        "seed": emap.seed,
        "iteration": emap.iteration,
        "bases": blocks,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_map(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a valid map file ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: map file must hold a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported map format_version {version!r}")
    try:
        rows, cols, L = int(doc["rows"]), int(doc["cols"]), int(doc["L"])
        blocks = doc["bases"]
        seed, iteration = int(doc["seed"]), int(doc["iteration"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed map header ({exc})") from None
    if rows < 1 or cols < 1 or L < 1 or len(blocks) != rows * cols:
        raise ValidationError(f"{path}: {len(blocks)} bases for a {rows}x{cols} grid")
    bases = np.empty((rows * cols, L, L))
    for n, b in enumerate(blocks):
        try:
            raw = base64.b64decode(b, validate=True)
        except (ValueError, TypeError):
            raise ValidationError(f"{path}: basis {n} is not valid base64") from None
        if len(raw) != 8 * L * L:
            raise ValidationError(f"{path}: basis {n} has {len(raw)} bytes, expected {8 * L * L}")
        bases[n] = np.frombuffer(raw, dtype="<f8").reshape((L, L), order="F")
    return EigenMap(rows, cols, L, bases.reshape(rows, cols, L, L), iteration, seed)
