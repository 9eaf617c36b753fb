import json

import numpy as np
import pytest

from soem.errors import ValidationError
from soem.evaluation import davies_bouldin, db_random_baseline
from soem.linalg import is_orthonormal, off, sym_eigen
from soem.trainer import (
    Assignment,
    EigenMap,
    TrainConfig,
    assign,
    compete,
    deviation_matrix,
    incumbent_spectrum,
    init_map,
    kernel,
    load_map,
    node_deviation,
    save_map,
    train,
    update_bases,
)

from conftest import random_orthogonal, random_spd


def small_inputs(rng, L=4, M=6):
    mats = [random_spd(L, rng) for _ in range(M)]
    return [m / np.linalg.norm(m) for m in mats]


# init_map

def test_init_map_deterministic_and_orthonormal():
    cfg = TrainConfig(rows=3, cols=4, L=5, seed=11)
    a, b = init_map(cfg), init_map(cfg)
    assert np.array_equal(a.bases, b.bases)
    assert a.bases.shape == (3, 4, 5, 5)
    for U in a.flat_bases():
        assert np.allclose(U.T @ U, np.eye(5), atol=1e-10)
        assert abs(abs(np.linalg.det(U)) - 1) < 1e-8
    assert not np.array_equal(a.bases, init_map(TrainConfig(rows=3, cols=4, L=5, seed=12)).bases)


def test_init_map_single_node():
    assert init_map(TrainConfig(rows=1, cols=1, L=3)).flat_bases().shape == (1, 3, 3)


@pytest.mark.parametrize(
    "kwargs", [dict(rows=0), dict(iterations=0), dict(nu0=1.5), dict(sigma0=0.0), dict(L=1)]
)
def test_train_config_validation(kwargs):
    with pytest.raises(ValidationError):
        TrainConfig(**kwargs)


# node_deviation

def test_node_deviation_zero_at_eigenvectors(rng):
    C = random_spd(6, rng)
    assert node_deviation(sym_eigen(C)[1], C) < 1e-10


def test_node_deviation_identity_input(rng):
    assert node_deviation(random_orthogonal(5, rng), np.eye(5)) < 1e-28


def test_node_deviation_brute_force(rng):
    U, C = random_orthogonal(5, rng), random_spd(5, rng)
    B = U.T @ C @ U
    brute = sum(B[i, j] ** 2 for i in range(5) for j in range(5) if i != j)
    assert node_deviation(U, C) == pytest.approx(brute, rel=1e-12)


def test_node_deviation_dim_mismatch():
    with pytest.raises(ValidationError):
        node_deviation(np.eye(3), np.eye(4))


# compete

def test_compete_single_node(rng):
    emap = init_map(TrainConfig(rows=1, cols=1, L=4))
    a = compete(emap, small_inputs(rng))
    assert np.all(a.winner == 0) and np.all(a.runner_up == 0)


def test_compete_node_with_exact_eigenvectors_wins(rng):
    emap = init_map(TrainConfig(rows=3, cols=3, L=4, seed=2))
    C = small_inputs(rng, M=1)[0]
    emap.bases[2, 1] = sym_eigen(C)[1]
    a = compete(emap, [C])
    assert tuple(a.winner[0]) == (2, 1)
    assert a.deviation[0] < 1e-12


def test_compete_matches_exhaustive_argmin(rng):
    emap = init_map(TrainConfig(rows=2, cols=2, L=4, seed=5))
    inputs = small_inputs(rng, M=10)
    a = compete(emap, inputs)
    for m, C in enumerate(inputs):
        devs = [off(U.T @ C @ U) for U in emap.flat_bases()]
        order = np.argsort(devs)
        assert a.winner[m] @ [2, 1] == order[0]
        assert a.runner_up[m] @ [2, 1] == order[1]
        assert a.deviation[m] <= a.runner_up_deviation[m]
        assert a.deviation[m] == pytest.approx(devs[order[0]], rel=1e-10)


def test_compete_first_iteration_is_random_and_seeded(rng):
    emap = init_map(TrainConfig(rows=5, cols=5, L=4))
    inputs = small_inputs(rng, M=40)
    a = compete(emap, inputs, first_iteration=True, rng=np.random.default_rng(1))
    b = compete(emap, inputs, first_iteration=True, rng=np.random.default_rng(1))
    assert np.array_equal(a.winner, b.winner)
    assert len({tuple(w) for w in a.winner}) > 10


def test_compete_breaks_exact_ties_with_rng():
    U = np.eye(3)
    emap = EigenMap(1, 4, 3, np.broadcast_to(U, (1, 4, 3, 3)).copy())
    C = np.diag([3.0, 2.0, 1.0])
    picks = {tuple(compete(emap, [C], rng=np.random.default_rng(s)).winner[0]) for s in range(30)}
    assert len(picks) > 1


# kernel

def test_kernel_values():
    assert kernel(0.0, 2.0) == 1.0
    assert kernel(2.0, 2.0) == pytest.approx(np.exp(-0.5))
    assert kernel(6.0, 2.0) < 0.02
    d = np.linspace(0, 10, 50)
    assert np.all(np.diff(kernel(d, 1.5)) < 0)
    with pytest.raises(ValidationError):
        kernel(1.0, 0.0)


# update_bases

def test_update_nu_zero_keeps_bases(rng):
    emap = init_map(TrainConfig(rows=2, cols=2, L=4, seed=3))
    inputs = small_inputs(rng)
    a = assign(emap, inputs)
    new = update_bases(emap, inputs, a, sigma=1.0, nu=0.0)
    assert np.allclose(new.bases, emap.bases, atol=1e-8)


def test_update_incumbent_input_keeps_basis():
    emap = init_map(TrainConfig(rows=1, cols=1, L=5, seed=4))
    U = emap.flat_bases()[0]
    A = (U * incumbent_spectrum(5)) @ U.T
    new = update_bases(emap, [A], assign(emap, [A]), sigma=1.0, nu=0.7)
    assert np.allclose(new.flat_bases()[0], U, atol=1e-8)


def test_update_full_gain_converges_to_input_eigenvectors(rng):
    emap = init_map(TrainConfig(rows=1, cols=1, L=6, seed=6))
    C = small_inputs(rng, L=6, M=1)[0]
    new = update_bases(emap, [C], assign(emap, [C]), sigma=1.0, nu=1.0)
    assert node_deviation(new.flat_bases()[0], C) < 1e-8


def test_update_preserves_orthonormality(rng):
    emap = init_map(TrainConfig(rows=3, cols=3, L=5, seed=8))
    inputs = small_inputs(rng, L=5, M=12)
    new = update_bases(emap, inputs, compete(emap, inputs, True, rng), sigma=1.5, nu=0.8)
    for U in new.flat_bases():
        assert np.allclose(U.T @ U, np.eye(5), atol=1e-8)


def test_update_is_input_order_invariant(rng):
    emap = init_map(TrainConfig(rows=2, cols=3, L=4, seed=9))
    inputs = small_inputs(rng, M=8)
    a = assign(emap, inputs)
    perm = np.random.default_rng(0).permutation(8)
    pa = Assignment(a.winner[perm], a.deviation[perm], a.runner_up[perm], a.runner_up_deviation[perm])
    x = update_bases(emap, inputs, a, sigma=1.0, nu=0.9)
    y = update_bases(emap, [inputs[k] for k in perm], pa, sigma=1.0, nu=0.9)
    assert np.allclose(x.bases, y.bases, atol=1e-8)


def test_update_threads_match_serial(rng):
    emap = init_map(TrainConfig(rows=3, cols=3, L=5, seed=10))
    inputs = small_inputs(rng, L=5, M=10)
    a = assign(emap, inputs)
    serial = update_bases(emap, inputs, a, 1.2, 0.8, threads=1)
    threaded = update_bases(emap, inputs, a, 1.2, 0.8, threads=4)
    assert np.array_equal(serial.bases, threaded.bases)


def test_update_skips_nodes_without_weight(rng):
    emap = init_map(TrainConfig(rows=1, cols=60, L=3, seed=1))
    C = small_inputs(rng, L=3, M=1)[0]
    a = Assignment(np.array([[0, 0]]), np.zeros(1), np.array([[0, 1]]), np.zeros(1))
    new = update_bases(emap, [C], a, sigma=0.5, nu=0.9)
    assert np.array_equal(new.bases[0, 59], emap.bases[0, 59])
    assert not np.array_equal(new.bases[0, 0], emap.bases[0, 0])


def test_update_rejects_mismatched_assignment(rng):
    emap = init_map(TrainConfig(rows=2, cols=2, L=4))
    inputs = small_inputs(rng)
    with pytest.raises(ValidationError):
        update_bases(emap, inputs[:3], assign(emap, inputs), 1.0, 0.5)


# schedules

def test_schedules():
    cfg = TrainConfig(rows=30, cols=30, iterations=10)
    sig = [cfg.sigma(i) for i in range(10)]
    assert sig[0] == 7.5
    assert np.all(np.diff(sig) < 0)
    # last radius is a couple of cells
    assert 1.0 < sig[-1] < 3.0
    assert cfg.nu(0) == 0.9
    assert cfg.nu(9) == pytest.approx(0.09)


# train

def test_train_single_iteration(rng):
    cfg = TrainConfig(rows=2, cols=2, L=4, iterations=1, seed=0)
    res = train(small_inputs(rng), cfg)
    assert len(res.history) == 1 and res.map.iteration == 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_train_identical_inputs_attract_a_node(rng, seed):
    C = small_inputs(rng, L=5, M=1)[0]
    res = train([C] * 5, TrainConfig(rows=3, cols=3, L=5, iterations=10, seed=seed))
    assert deviation_matrix(res.map, [C]).min() < 1e-6


def test_train_is_deterministic(rng):
    inputs = small_inputs(rng, M=10)
    cfg = TrainConfig(rows=3, cols=3, L=4, iterations=3, seed=7)
    a, b = train(inputs, cfg), train(inputs, cfg)
    assert np.array_equal(a.map.bases, b.map.bases)


def test_train_stop_below_unit_radius(rng):
    cfg = TrainConfig(rows=4, cols=4, L=4, iterations=10, stop_below_unit_radius=True)
    res = train(small_inputs(rng), cfg)
    assert all(s >= 1.0 for s in res.sigmas)
    assert len(res.history) < 10


def test_train_rejects_wrong_dimension(rng):
    with pytest.raises(ValidationError):
        train(small_inputs(rng, L=4), TrainConfig(rows=2, cols=2, L=5))


def test_trained_benchmark_clusters(trained_benchmark, benchmark_covs, benchmark_labels):
    cfg, res = trained_benchmark
    a = assign(res.map, benchmark_covs)
    groups = {tuple(w) for w in a.winner}
    assert len(groups) >= 3
    ratio = davies_bouldin(a.winner, benchmark_labels) / db_random_baseline(benchmark_labels, 10, 10, 100, 0)
    assert ratio < 0.5
    for U in res.map.flat_bases():
        assert is_orthonormal(U, atol=1e-8)


def test_trained_benchmark_deviation_settles(trained_benchmark):
    _, res = trained_benchmark
    means = [h.deviation.mean() for h in res.history]
    tail = means[len(means) // 2 :]
    assert all(b <= 1.05 * a for a, b in zip(tail, tail[1:]))


def test_assign_matches_compete_and_is_order_free(trained_benchmark, benchmark_covs):
    _, res = trained_benchmark
    a = assign(res.map, benchmark_covs)
    b = compete(res.map, benchmark_covs, rng=np.random.default_rng(res.map.seed))
    assert np.array_equal(a.winner, b.winner)
    perm = np.random.default_rng(3).permutation(len(benchmark_covs))
    c = assign(res.map, [benchmark_covs[k] for k in perm])
    assert np.array_equal(c.winner, a.winner[perm])


def test_assign_unseen_incumbent_wins(trained_benchmark):
    _, res = trained_benchmark
    U = res.map.bases[4, 7]
    A = (U * incumbent_spectrum(20)) @ U.T
    assert tuple(assign(res.map, [A]).winner[0]) == (4, 7)


# persistence

def test_map_round_trip(tmp_path, trained_benchmark, benchmark_covs):
    _, res = trained_benchmark
    path = tmp_path / "map.json"
    save_map(res.map, path)
    back = load_map(path)
    assert np.array_equal(back.bases, res.map.bases)
    assert (back.rows, back.cols, back.L, back.iteration, back.seed) == (10, 10, 20, 10, 0)
    a, b = assign(res.map, benchmark_covs), assign(back, benchmark_covs)
    assert np.array_equal(a.winner, b.winner) and np.array_equal(a.deviation, b.deviation)


def test_load_map_rejects_corruption(tmp_path):
    emap = init_map(TrainConfig(rows=2, cols=2, L=3))
    path = tmp_path / "m.json"
    save_map(emap, path)
    text = path.read_text()

    (tmp_path / "trunc.json").write_text(text[: len(text) // 2])
    with pytest.raises(ValidationError):
        load_map(tmp_path / "trunc.json")

    doc = json.loads(text)
    for mutate in (
        lambda d: d.update(format_version=2),
        lambda d: d.update(rows=3),
        lambda d: d["bases"].__setitem__(0, d["bases"][0][:-8]),
        lambda d: d["bases"].__setitem__(0, "!!!"),
        lambda d: d.pop("L"),
    ):
        bad = json.loads(json.dumps(doc))
        mutate(bad)
        (tmp_path / "bad.json").write_text(json.dumps(bad))
        with pytest.raises(ValidationError):
            load_map(tmp_path / "bad.json")
