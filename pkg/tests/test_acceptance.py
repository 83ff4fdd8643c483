"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s -v`` (lines are printed even without -s).
"""
import math
import time

import numpy as np
import pytest

from lightloc import experiments, report, rsd
from lightloc.cli import main
from lightloc.fusion import KalmanState, Observation, kf_update
from lightloc.geometry import apply, pose_error, random_pose
from lightloc.gradcheck import classifier_kink_margin, kink_margin, numeric_gradients, relative_error
from lightloc.mlp import mlp_backward, mlp_forward
from lightloc.rsd import RsdConfig
from lightloc.scg import classifier_loss_and_grads, init_classifier, smoothed_ce
from lightloc.solver import RansacParams, ransac_pose, rigid_fit
from lightloc.trainer import TrainConfig, init_head, l1_scene_loss
from oracles import loss_stream, outlier_problem, replay_oracle

SEEDS = range(5)
# -(0.95 ln 0.9 + 0.05 ln 0.1), evaluated by hand once and frozen
SMOOTHED_CE_HAND = 0.21522174452463724


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail

    return emit


def test_criterion_1_rsd_oracle(verdict):
    cfg = RsdConfig(25, 0.25, 0.25, 0.85, 3)
    t0 = time.perf_counter()
    sizes, matches = set(), 0
    for seed in range(3):
        stream = loss_stream(seed, 1000, 25)
        state = rsd.new_state(cfg, range(1000))
        got = []
        for e in range(25):
            rsd.epoch_transition(state, e)
            got.append(list(state.active_set))
            for i in state.active_set:
                rsd.record_median_loss(state, i, stream[e, i])
        matches += got == replay_oracle(cfg, stream)
        sizes.add(tuple(len(s) for s in got))
    elapsed = (time.perf_counter() - t0) / 3
    stages = rsd.stage_epochs(cfg)
    survivors = sorted({len(s) for s in got} - {1000}, reverse=True)
    ok = stages == (7, 13, 21) and survivors == [750, 562] and matches == 3 and elapsed < 1.0
    verdict(1, ok, f"stages={stages} survivors={survivors} oracle matches={matches}/3 runtime={elapsed:.2f}s")


def test_criterion_2_loss_formulas(verdict):
    ce = smoothed_ce(np.array([0.9, 0.1]), 0, 0.1)
    l1 = (l1_scene_loss([[1.0, 1.0, 1.0]], [[0.0, 0.0, 0.0]])[0], l1_scene_loss([[1.0, 0, 0], [0, 2.0, 0]],
                                                                                  np.zeros((2, 3)))[0])
    # equal up to rounding of the final sum: a few ulps of ln k
    uniform = [abs(smoothed_ce(np.full(k, 1.0 / k), 0, 0.1) - math.log(k)) <= 4 * np.spacing(math.log(k))
               for k in (2, 4, 10, 47)]
    ok = abs(ce - SMOOTHED_CE_HAND) <= 1e-6 and l1 == (3.0, 1.5) and all(uniform)
    verdict(2, ok, f"smoothed_ce={ce:.9f} (hand {SMOOTHED_CE_HAND:.9f}) l1={l1} uniform=ln k: {all(uniform)}")


def test_criterion_3_gradients(verdict):
    t0 = time.perf_counter()
    worst = {"regressor": 0.0, "classifier": 0.0}
    for seed in range(10):
        rng = np.random.default_rng(seed)
        head = init_head(5, 2, TrainConfig(hidden=6, depth=3, scg=False, seed=seed), center=rng.normal(size=3),
                         scale=2.0)
        x = rng.normal(size=(8, 7))
        while kink_margin(head.mlp, x) < 1e-2:
            x = rng.normal(size=(8, 7))
        y = rng.normal(size=(8, 3))

        def reg_loss():
            return l1_scene_loss(head.center + head.scale * mlp_forward(head.mlp, x), y)[0]

        pred = head.center + head.scale * mlp_forward(head.mlp, x)
        grads, _ = mlp_backward(head.mlp, x, head.scale * np.sign(pred - y) / len(x))
        worst["regressor"] = max(worst["regressor"], relative_error(grads, numeric_gradients(reg_loss, head.mlp.params())))

        clf = init_classifier(4, 3, 3, hidden=6, seed=seed)
        X = rng.normal(size=(5, 4))
        while classifier_kink_margin(clf, X) < 1e-2:
            X = rng.normal(size=(5, 4))
        labels = np.stack([rng.integers(0, 3, 5), rng.integers(0, 3, 5)], axis=1)
        _, cg = classifier_loss_and_grads(clf, X, labels, 0.1)
        num = numeric_gradients(lambda: classifier_loss_and_grads(clf, X, labels, 0.1)[0], clf.params())
        worst["classifier"] = max(worst["classifier"], relative_error(cg, num))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    verdict(3, ok, f"max rel err regressor={worst['regressor']:.2e} classifier={worst['classifier']:.2e} "
                   f"runtime={elapsed:.1f}s")


def test_criterion_4_pose_solver(verdict):
    t0 = time.perf_counter()
    exact = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        gt = random_pose(rng, 50.0)
        src = rng.uniform(-10, 10, (20, 3))
        p = rigid_fit(src, apply(gt, src))
        exact = max(exact, float(np.abs(p.matrix() - gt.matrix()).max()))
    ok_trials = 0
    for seed in range(100):
        gt, src, dst = outlier_problem(seed)
        res = ransac_pose(src, dst, RansacParams(seed=seed))
        e = pose_error(res.pose, gt)
        ok_trials += e.position_error < 0.01 and e.orientation_error < 0.1
    elapsed = time.perf_counter() - t0
    ok = exact < 1e-9 and ok_trials >= 99 and elapsed < 30
    verdict(4, ok, f"noiseless max err={exact:.1e} ransac 30% outliers ok={ok_trials}/100 runtime={elapsed:.1f}s")


def test_criterion_5_classifier_accuracy(verdict):
    t0 = time.perf_counter()
    row = experiments.classifier_accuracy(seed=0, epochs=50)
    elapsed = time.perf_counter() - t0
    ok = row["leaf_accuracy"] >= 0.99 and elapsed < 120
    verdict(5, ok, f"leaf accuracy={row['leaf_accuracy']:.3f} runtime={elapsed:.1f}s")


def test_criterion_6_guidance_ablation(verdict):
    t0 = time.perf_counter()
    rows = experiments.scg_ablation(SEEDS)
    elapsed = time.perf_counter() - t0
    wins_loss = sum(r["loss_with"] <= r["loss_without"] for r in rows)
    wins_median = sum(r["median_with"] <= r["median_without"] for r in rows)
    wins_both = sum(r["loss_with"] <= r["loss_without"] and r["median_with"] <= r["median_without"] for r in rows)
    detail = " ".join(f"[s{r['seed']} loss {r['loss_with']:.2f}/{r['loss_without']:.2f} "
                      f"median {r['median_with']:.3f}/{r['median_without']:.3f}]" for r in rows)
    ok = wins_both >= 4 and elapsed < 15 * 60
    verdict(6, ok, f"with/without: loss wins={wins_loss}/5 median wins={wins_median}/5 both={wins_both}/5 "
                   f"runtime={elapsed:.0f}s {detail}")


def test_criterion_7_rsd_ablation(verdict):
    t0 = time.perf_counter()
    rows = experiments.rsd_ablation(SEEDS)
    elapsed = time.perf_counter() - t0
    exact = all(r["evaluations_rsd"] == r["expected_evaluations"] == r["evaluations_random"] for r in rows)
    full = float(np.mean([r["median_none"] for r in rows]))
    pruned = float(np.mean([r["median_rsd"] for r in rows]))
    rel = abs(pruned - full) / full
    random_worse = sum(r["median_random"] > r["median_rsd"] for r in rows)
    ok = exact and rel <= 0.10 and random_worse >= 4 and elapsed < 20 * 60
    detail = " ".join(f"[s{r['seed']} {r['median_none']:.3f}/{r['median_rsd']:.3f}/{r['median_random']:.3f}]"
                      for r in rows)
    verdict(7, ok, f"evaluations exact={exact} ({rows[0]['expected_evaluations']}) mean median full={full:.4f} "
                   f"rsd={pruned:.4f} rel={rel:.1%} random worse={random_worse}/5 runtime={elapsed:.0f}s "
                   f"full/rsd/random: {detail}")


def test_criterion_8_fusion(verdict):
    t0 = time.perf_counter()
    rows = experiments.fusion_experiment(SEEDS)
    elapsed = time.perf_counter() - t0
    z = np.array([3.0, -1.0, 0.5])
    exact = bool((kf_update(KalmanState(np.full(3, 9.0), np.eye(3)), Observation(z, 1.0)).mean == z).all())
    drift = min(r["terminal_drift"] for r in rows)
    improvement = min(r["improvement"] for r in rows)
    rho = max(r["spearman"] for r in rows)
    ok = drift >= 50 and improvement >= 80 and rho < 0 and exact and elapsed < 120
    verdict(8, ok, f"min terminal drift={drift:.1f} m min improvement={improvement:.1f}% "
                   f"max spearman={rho:.3f} c=1 exact={exact} runtime={elapsed:.0f}s")


def test_criterion_9_end_to_end(verdict, tmp_path):
    t0 = time.perf_counter()
    summaries, medians = [], []
    for name in ("a", "b"):
        out = tmp_path / name
        codes = [main([cmd, "--out", str(out), "--seed", "0"]) for cmd in
                 ("generate", "cluster", "train-classifier", "train-scr", "localize", "fuse", "report")]
        assert codes == [0] * 7, codes
        summaries.append((out / "report" / "summary.csv").read_bytes())
        rows = report.read_csv_rows(out / "localize" / "summary.csv")
        medians.append(float(next(r["value"] for r in rows if r["metric"] == "median_position_error_m")))
    elapsed = (time.perf_counter() - t0) / 2
    identical = summaries[0] == summaries[1]
    ok = identical and medians[0] < 0.5 and elapsed < 30 * 60
    verdict(9, ok, f"report bit-identical={identical} median position error={medians[0]:.3f} "
                   f"runtime per pipeline={elapsed:.0f}s")
