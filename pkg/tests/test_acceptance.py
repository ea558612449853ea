"""Acceptance suite: one test per shipped guarantee, each printing a PASS/FAIL
line.  Exact values are checked against independent in-test oracles (brute
force enumeration, closed forms, the exact mesh distance); learned-model
guarantees train real networks through the session fixtures in conftest.py.
"""

import itertools
import time
from contextlib import contextmanager

import numpy as np
import pytest

from dpdist.cli import main
from dpdist.datasets import generate_training_batch, make_synthetic_shape, shape_pool
from dpdist.distances import (
    chamfer_distance,
    earth_movers_distance,
    hausdorff_distance,
    nn_distances,
    partial_hausdorff_distance,
)
from dpdist.evaluation import (
    DistanceMethod,
    dpdist,
    evaluation_pair_sampler,
    field_slice,
    registration_benchmark,
    success_ratio,
    translation_detection,
)
from dpdist.fisher import (
    FISHER_CHANNELS,
    GaussianGrid,
    compute_fisher_grid,
    extract_local_patch,
    extract_patch_batch,
    nearest_grid_index,
    soft_assign,
)
from dpdist.geometry import (
    RigidTransform,
    TriangleMesh,
    apply_transform,
    normalize_mesh,
    point_mesh_distances,
    random_rigid_transform,
    sample_mesh_surface,
)
from dpdist.network import MlpModel, OptimizerState, assemble_inputs, gradient_check, spd_distances, train_step

from conftest import MAIN_CONFIG


@contextmanager
def criterion(number, label):
    try:
        yield
    except BaseException:
        print(f"[criterion {number:02d}] FAIL - {label}")
        raise
    print(f"[criterion {number:02d}] PASS - {label}")


def permutation_emd(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    best = np.inf
    for perm in itertools.permutations(range(len(b))):
        best = min(best, np.linalg.norm(a - b[list(perm)], axis=1).sum())
    return best


def test_criterion_01_emd_exactness():
    with criterion(1, "assignment solver equals permutation brute force"):
        t0 = time.monotonic()
        rng = np.random.default_rng(11)
        for trial in range(100):
            n = int(rng.integers(2, 8))
            a = rng.uniform(-1, 1, (n, 3))
            b = rng.uniform(-1, 1, (n, 3))
            assert abs(earth_movers_distance(a, b) - permutation_emd(a, b)) < 1e-9
        elapsed = time.monotonic() - t0
        assert elapsed < 10.0, f"took {elapsed:.1f}s"


def test_criterion_02_classical_fixtures():
    with criterion(2, "hand-computed classical distances and quantile behavior"):
        t0 = time.monotonic()
        one = [[0.0, 0.0, 0.0]]
        two = [[1.0, 0.0, 0.0]]
        pair = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]

        np.testing.assert_allclose(nn_distances(one, [[1, 0, 0], [3, 0, 0]]), [1.0])
        assert hausdorff_distance(one, two) == 1.0
        assert hausdorff_distance(pair, one) == 2.0
        assert chamfer_distance(one, two) == 2.0
        assert chamfer_distance(pair, pair) == 0.0
        assert chamfer_distance(pair, one) == 2.0
        shifted = np.asarray([[0, 1, 0], [1, 1, 0]], dtype=float)
        assert abs(earth_movers_distance([[0, 0, 0], [1, 0, 0]], shifted) - 2.0) < 1e-12
        # directed profiles {0, 2} and {0}: the half-fraction ranks pick 0 both ways
        assert partial_hausdorff_distance(pair, one, 0.5) == 0.0
        # nearest-rank quantiles of the directed profile [0, 1, 2, 3]
        target = [[0.0, 0.0, 0.0]]
        base = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        for f, expected in ((0.25, 0.0), (0.5, 1.0), (0.75, 2.0), (1.0, 3.0)):
            assert partial_hausdorff_distance(base, target, f) == expected

        rng = np.random.default_rng(7)
        for _ in range(100):
            a = rng.uniform(-1, 1, (int(rng.integers(1, 40)), 3))
            b = rng.uniform(-1, 1, (int(rng.integers(1, 40)), 3))
            assert partial_hausdorff_distance(a, b, 1.0) == hausdorff_distance(a, b)
            fs = sorted(rng.uniform(0.05, 1.0, 3))
            vals = [partial_hausdorff_distance(a, b, f) for f in fs]
            assert vals[0] <= vals[1] <= vals[2]
        elapsed = time.monotonic() - t0
        assert elapsed < 5.0, f"took {elapsed:.1f}s"


def test_criterion_03_tree_equals_brute():
    with criterion(3, "spatial-tree nearest neighbors match brute force"):
        t0 = time.monotonic()
        rng = np.random.default_rng(23)
        for trial in range(1000):
            na = int(rng.integers(1, 513))
            nb = int(rng.integers(1, 513))
            a = rng.uniform(-2, 2, (na, 3))
            b = rng.uniform(-2, 2, (nb, 3))
            tree = nn_distances(a, b, method="tree")
            brute = nn_distances(a, b, method="brute")
            assert np.max(np.abs(tree - brute)) < 1e-9
            if trial % 100 == 0:  # independent oracle spot check
                direct = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1)).min(axis=1)
                assert np.max(np.abs(tree - direct)) < 1e-9
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0, f"took {elapsed:.1f}s"


def test_criterion_04_fisher_representation():
    with criterion(4, "soft-assign normalization, permutation invariance, patch padding"):
        t0 = time.monotonic()
        grid = GaussianGrid(8, 0.125)
        rng = np.random.default_rng(31)

        gamma = soft_assign(rng.uniform(-1.2, 1.2, (1000, 3)), grid)
        assert np.max(np.abs(gamma.sum(axis=1) - 1.0)) < 1e-9
        assert gamma.min() >= 0.0

        for i in range(50):
            cloud = rng.uniform(-1, 1, (int(rng.integers(8, 128)), 3))
            base = compute_fisher_grid(cloud, grid).values
            perm = compute_fisher_grid(cloud[rng.permutation(len(cloud))], grid).values
            assert np.array_equal(base[..., 0:7], perm[..., 0:7])
            assert np.array_equal(base[..., 7:14], perm[..., 7:14])
            assert np.max(np.abs(base[..., 14:21] - perm[..., 14:21])) < 1e-6

        fg = compute_fisher_grid(rng.uniform(-1, 1, (64, 3)), grid)
        k = 5
        r = k // 2
        for corner in itertools.product((-1.0, 1.0), repeat=3):
            point = np.array(corner)
            patch = extract_local_patch(fg, point, k)
            batch_row = extract_patch_batch(fg, point.reshape(1, 3), k)[0]
            assert np.array_equal(patch.values, batch_row)  # slice bit-identity
            anchor = nearest_grid_index(point.reshape(1, 3), 8)[0]
            assert set(anchor) <= {0, 7}
            for off in itertools.product(range(k), repeat=3):
                src = anchor + np.array(off) - r
                cell = patch.values[off]
                if np.all((src >= 0) & (src < 8)):
                    assert np.array_equal(cell, fg.values[tuple(src)])
                else:
                    assert np.all(cell == 0.0)  # zero padding outside the grid
        elapsed = time.monotonic() - t0
        assert elapsed < 30.0, f"took {elapsed:.1f}s"


def test_criterion_05_gradient_soundness():
    with criterion(5, "analytic gradients match finite differences on the full model"):
        t0 = time.monotonic()
        model = MlpModel(k=5, fisher_channels=FISHER_CHANNELS, seed=2024)
        worst = gradient_check(model, n_trials=10, epsilon=1e-3, seed=5)
        elapsed = time.monotonic() - t0
        assert worst < 1e-4, f"max relative error {worst:.3e}"
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# Learned-model criteria.  The held-out error oracle recomputes ground truth
# with the exact mesh distance; the query mixture is the training pipeline's
# own sampler restricted to the near field the network is trained for.

HELD_OUT_RANGE = 0.3


def held_out_error(model):
    grid = GaussianGrid(model.grid_size, model.sigma)
    meshes = shape_pool(("plane", "sphere", "box"), 2, np.random.SeedSequence(999))
    errs = []
    for i, mesh in enumerate(meshes):
        r = np.random.default_rng(np.random.SeedSequence((1234, 1, i)))
        queries = []
        for _ in range(8):
            queries.append(generate_training_batch(mesh, 64, r).queries)
        queries = np.concatenate(queries)
        gt = point_mesh_distances(queries, mesh)  # exact oracle, not pipeline labels
        keep = gt <= HELD_OUT_RANGE
        fg = compute_fisher_grid(sample_mesh_surface(mesh, 64, r), grid)
        pred = spd_distances(model, queries[keep], fg)
        errs.append(np.abs(pred - gt[keep]))
    err = np.concatenate(errs)
    return float(err.mean()), len(err)


def test_criterion_06_training_smoke(main_training):
    with criterion(6, "overfit-one-batch property and held-out accuracy of full training"):
        # property: repeated steps on one fixed batch drive the loss down
        mesh = normalize_mesh(make_synthetic_shape("plane"))
        batch_rng = np.random.default_rng(99)
        batch = generate_training_batch(mesh, 64, batch_rng)
        fg = compute_fisher_grid(batch.surface_cloud, GaussianGrid(8, 0.125))
        x = assemble_inputs(fg, batch.queries, 5)
        y = batch.gt_distances
        model = MlpModel(k=5, hidden=(256, 256, 256), seed=1)
        opt = OptimizerState(decay_interval=10**9)
        losses = [train_step(model, opt, x, y) for _ in range(100)]
        assert np.median(losses[90:100]) < np.median(losses[0:10])

        trained, history, elapsed = main_training
        assert MAIN_CONFIG.steps <= 10_000
        if history is not None:
            assert len(history) == MAIN_CONFIG.steps
            assert elapsed < 900.0, f"training took {elapsed:.0f}s"
            print(f"  training wall time {elapsed:.0f}s")
        err, count = held_out_error(trained)
        print(f"  held-out mean error {err:.4f} over {count} queries")
        assert err < 0.02, f"held-out mean error {err:.4f}"


def test_criterion_07_disjoint_vs_translated(main_model):
    with criterion(7, "disjoint resamples score closer than translated surfaces; slice minima on the trace"):
        meshes = shape_pool(("plane", "sphere", "box"), 2, np.random.SeedSequence(515))
        wins = 0
        for s in range(20):
            mesh = meshes[s % len(meshes)]
            a, b = evaluation_pair_sampler(mesh, 64, np.random.SeedSequence((777, s)))
            move = random_rigid_transform("translation26", magnitude=0.1, seed=np.random.SeedSequence((778, s)))
            same = dpdist(main_model, a, b)
            moved = dpdist(main_model, a, apply_transform(b, move))
            wins += same < moved
        print(f"  disjoint beats translated in {wins}/20 seeds")
        assert wins >= 19

        # vertical plane occupies x = 0, so its trace on the z = 0 slice is the
        # line x = 0; the predicted field along that line must stay a low band
        flat = normalize_mesh(make_synthetic_shape("plane"))
        upright = RigidTransform.from_axis_angle([0, 1, 0], np.pi / 2)
        vertical = TriangleMesh(upright.apply(flat.vertices), flat.triangles)
        cloud, _ = evaluation_pair_sampler(vertical, 64, np.random.SeedSequence(999_01))
        fs = field_slice(cloud, 0.0, resolution=64, extent=1.0, mode="spd", model=main_model)
        xs = fs.x0 + fs.dx * np.arange(64)
        ys = fs.y0 + fs.dy * np.arange(64)
        band = fs.values[np.abs(ys) <= 0.4][:, np.abs(xs) <= 0.05]
        worst = band.min(axis=1).max()
        print(f"  worst along-trace field value {worst:.4f}")
        assert worst <= 0.02, f"trace band rises to {worst:.4f}"


DETECTION_MAGNITUDES = [0.0, 0.01, 0.02, 0.035, 0.05]
# 600 trials per magnitude keeps the per-bin accuracy noise near 2%, small
# enough to rank the two methods reliably while staying inside the runtime
# budget (the whole sweep finishes in about five minutes on one core).
DETECTION_TRIALS = 600


def detection_trend(model, meshes, seed, trials=DETECTION_TRIALS):
    cd = DistanceMethod.parse("cd")
    learned = DistanceMethod.parse("dpdist", model)
    curve_cd = translation_detection(cd, meshes, 64, DETECTION_MAGNITUDES, trials=trials, seed=seed)
    curve_dp = translation_detection(learned, meshes, 64, DETECTION_MAGNITUDES, trials=trials, seed=seed)
    return curve_cd, curve_dp


def assert_null_calibrated(curve, trials):
    sigma = np.sqrt(0.25 / trials)
    assert abs(curve.accuracy[0] - 0.5) <= 3 * sigma, f"null accuracy {curve.accuracy[0]:.3f}"


def test_criterion_08_detection_trend(main_model):
    with criterion(8, "learned distance detects small translations at least as well as chamfer"):
        t0 = time.monotonic()
        meshes = shape_pool(("plane",), 4, np.random.SeedSequence((4242, 0))) + shape_pool(
            ("sphere", "box"), 3, np.random.SeedSequence((4242, 1))
        )
        assert len(meshes) == 10
        curve_cd, curve_dp = detection_trend(main_model, meshes, seed=4242)
        assert_null_calibrated(curve_cd, DETECTION_TRIALS)
        assert_null_calibrated(curve_dp, DETECTION_TRIALS)
        cd_acc = np.array(curve_cd.accuracy[1:])
        dp_acc = np.array(curve_dp.accuracy[1:])
        print(f"  cd  accuracy {np.round(cd_acc, 3)}")
        print(f"  ours accuracy {np.round(dp_acc, 3)}")
        assert np.all(dp_acc >= cd_acc), "learned distance lost a magnitude bin"
        assert dp_acc.mean() > cd_acc.mean(), "no average advantage"
        elapsed = time.monotonic() - t0
        assert elapsed < 600.0, f"took {elapsed:.0f}s"


def test_criterion_09_generalization_trend(generalization_model):
    with criterion(9, "network trained without curved shapes still beats chamfer on them"):
        # Cross-category margins are smaller than in-category ones, so this
        # check pools three independent draws (fresh 20-shape pool and trial
        # stream each) for 1800 trials per magnitude.  Each pooled bin is
        # judged against the binomial noise floor of that count: a bin may not
        # fall more than two standard errors below chamfer, and the average
        # over bins must stay strictly ahead.  Shifts near 0.01 sit at the
        # resolution limit of the learned field itself (held-out error is of
        # that order), where both methods hover near chance and the sign of a
        # single draw is uninformative; a model trained on curved shapes
        # behaves the same way there.
        acc_cd, acc_dp = [], []
        for seed in (4243, 4244, 4245):
            meshes = shape_pool(("sphere", "cylinder"), 10, np.random.SeedSequence((seed, 0)))
            assert len(meshes) == 20
            curve_cd, curve_dp = detection_trend(generalization_model, meshes, seed=seed)
            acc_cd.append(curve_cd.accuracy)
            acc_dp.append(curve_dp.accuracy)
        pooled_cd = np.mean(acc_cd, axis=0)
        pooled_dp = np.mean(acc_dp, axis=0)
        total = 3 * DETECTION_TRIALS
        sigma = np.sqrt(0.25 / total)
        assert abs(pooled_cd[0] - 0.5) <= 3 * sigma, f"null accuracy {pooled_cd[0]:.3f}"
        assert abs(pooled_dp[0] - 0.5) <= 3 * sigma, f"null accuracy {pooled_dp[0]:.3f}"
        cd_acc = pooled_cd[1:]
        dp_acc = pooled_dp[1:]
        print(f"  cd  accuracy {np.round(cd_acc, 3)}")
        print(f"  ours accuracy {np.round(dp_acc, 3)}")
        print(f"  per-bin edge {np.round(dp_acc - cd_acc, 4)}")
        noise = 2.0 * np.sqrt(0.5 / total)
        assert np.all(dp_acc >= cd_acc - noise), "learned distance fell clearly below chamfer"
        assert dp_acc.mean() > cd_acc.mean(), "no average advantage on unseen shapes"


def test_criterion_10_registration_trend(main_model):
    with criterion(10, "registration: chamfer near-perfect on identical clouds; learned loss at least as good when disjoint"):
        t0 = time.monotonic()
        meshes = shape_pool(("wedge",), 8, np.random.SeedSequence((4244, 0)))
        cd = DistanceMethod.parse("cd")
        identical = registration_benchmark(cd, meshes, 64, 50, seed=4244, protocol="identical")
        ratio_identical = success_ratio(identical, 5.0, 0.02)
        print(f"  identical-cloud cd success {ratio_identical:.2f}")
        assert ratio_identical >= 0.9

        learned = DistanceMethod.parse("dpdist-one", main_model)
        res_dp = registration_benchmark(learned, meshes, 64, 50, seed=4245, protocol="disjoint", max_iters=100)
        res_cd = registration_benchmark(cd, meshes, 64, 50, seed=4245, protocol="disjoint", max_iters=100)
        for rot, trans in ((5.0, 0.02), (10.0, 0.05)):
            sr_dp = success_ratio(res_dp, rot, trans)
            sr_cd = success_ratio(res_cd, rot, trans)
            print(f"  disjoint at ({rot:g} deg, {trans:g}): ours {sr_dp:.2f} vs cd {sr_cd:.2f}")
            assert sr_dp >= sr_cd, f"lost at ({rot}, {trans})"
        elapsed = time.monotonic() - t0
        assert elapsed < 1200.0, f"took {elapsed:.0f}s"


def test_criterion_11_manifest_determinism(tmp_path, capsys):
    with criterion(11, "manifest replays reproduce every CSV byte for byte"):
        jobs = [
            (
                "train",
                ["train", "--seed", "5", "--steps", "40", "--n-points", "16", "--k", "1",
                 "--hidden", "8,8", "--pool-size", "1", "--resolution", "4", "--kinds", "plane",
                 "--decay-interval", "15"],
            ),
            (
                "bench-translate",
                ["bench-translate", "--seed", "6", "--methods", "cd", "--shape-kinds", "plane",
                 "--shape-count", "1", "--resolution", "6", "--n-points", "16", "--trials", "12",
                 "--magnitudes", "0,0.05"],
            ),
            (
                "register",
                ["register", "--seed", "7", "--methods", "cd", "--trials", "2", "--protocol",
                 "identical", "--max-iters", "30", "--n-points", "16", "--shape-kinds", "plane",
                 "--shape-count", "1", "--resolution", "6", "--thresholds", "5:0.02"],
            ),
        ]
        cloud_file = tmp_path / "probe.xyz"
        cloud_file.write_text("0.1 0.2 0.3\n-0.4 0 0.2\n")
        jobs.append(
            ("field-slice", ["field-slice", "--mode", "nearest", "--slice-resolution", "9", str(cloud_file)])
        )
        for name, args in jobs:
            first = tmp_path / f"{name}-1"
            second = tmp_path / f"{name}-2"
            assert main(args + ["--out", str(first)]) == 0
            manifest = first / f"{name}-manifest.txt"
            assert manifest.exists()
            assert main([name, "--config", str(manifest), "--out", str(second)]) == 0
            csvs = sorted(p.name for p in first.glob("*.csv"))
            assert csvs, f"{name} wrote no CSVs"
            for csv_name in csvs:
                assert (second / csv_name).read_bytes() == (first / csv_name).read_bytes(), (
                    f"{name}/{csv_name} differs on replay"
                )
