import numpy as np
import pytest
from scipy.optimize import linprog
from scipy.stats import wasserstein_distance

from core.errors import CorruptFile, EmptyTrajectory
from core.evaluation import (
    EXPERT,
    RANDOM,
    RolloutResult,
    WeightedForceDistribution,
    bootstrap_ci,
    emit_figures,
    rollout_seeds,
    run_rollouts,
    success_rate,
    summarize,
    wasserstein1,
    weighted_distribution,
    weighted_ecdf,
)
from core.outcomes import FailureReason
from core.world import TaskId, default_task
from tools.plots import read_results_table

VARIANTS = ("farm", "force_aware", "tactile_aware", "vision_only")


def dist(samples, weights=None):
    samples = np.asarray(samples, dtype=np.float64)
    if weights is None:
        weights = np.full(len(samples), 1.0 / len(samples))
    return WeightedForceDistribution(samples, np.asarray(weights, dtype=np.float64))


def random_dist(rng, max_atoms=8):
    n = int(rng.integers(1, max_atoms + 1))
    w = rng.uniform(0.1, 1.0, n)
    return dist(rng.normal(-2.0, 1.5, n), w / w.sum())


def transport_lp(u, v):
    """Brute-force W1: minimum-cost coupling with the given marginals."""
    n, m = len(u.samples), len(v.samples)
    cost = np.abs(u.samples[:, None] - v.samples[None, :]).reshape(-1)
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([u.weights, v.weights])
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


def make_result(task, variant, seed, success, forces):
    reason = FailureReason.NONE if success else FailureReason.SLIP
    forces = np.asarray(forces, dtype=np.float32)
    trace = np.zeros((len(forces), 7), np.float32)
    return RolloutResult(TaskId(task), variant, seed, success, reason, forces, trace, n_queries=3, duration=1.0)


def test_equal_mass_weights():
    d = weighted_distribution([np.full(10, -1.0), np.full(30, -2.0)], contact_threshold=None)
    np.testing.assert_allclose(d.weights[:10], 0.05)
    np.testing.assert_allclose(d.weights[10:], 1.0 / 60.0)
    assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_contact_threshold_drops_free_space_samples():
    d = weighted_distribution([np.array([0.0, -0.1, -1.0, -2.0]), np.array([-3.0])])
    np.testing.assert_array_equal(d.samples, [-1.0, -2.0, -3.0])
    np.testing.assert_allclose(d.weights, [0.25, 0.25, 0.5])


def test_trajectories_without_contact():
    with pytest.raises(EmptyTrajectory):
        weighted_distribution([np.zeros(5), np.array([-1.0])])
    d = weighted_distribution([np.zeros(5), np.array([-1.0])], skip_empty=True)
    np.testing.assert_array_equal(d.weights, [1.0])
    with pytest.raises(EmptyTrajectory):
        weighted_distribution([np.zeros(5)], skip_empty=True)


def test_invalid_weights():
    with pytest.raises(ValueError):
        dist([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        dist([1.0, 2.0], [1.0, 0.0])
    with pytest.raises(EmptyTrajectory):
        dist([], [])


def test_point_masses():
    assert wasserstein1(dist([0.0]), dist([2.0])) == pytest.approx(2.0)
    assert wasserstein1(dist([-1.0, -1.0]), dist([-1.0])) == 0.0


def test_matches_the_transport_lp():
    rng = np.random.default_rng(0)
    for _ in range(500):
        u, v = random_dist(rng), random_dist(rng)
        assert wasserstein1(u, v) == pytest.approx(transport_lp(u, v), abs=1e-7)


def test_matches_scipy():
    rng = np.random.default_rng(1)
    for _ in range(200):
        u, v = random_dist(rng, 30), random_dist(rng, 30)
        expected = wasserstein_distance(u.samples, v.samples, u.weights, v.weights)
        assert wasserstein1(u, v) == pytest.approx(expected, abs=1e-9)


def test_metric_properties():
    rng = np.random.default_rng(2)
    for _ in range(500):
        a, b, c = random_dist(rng), random_dist(rng), random_dist(rng)
        assert wasserstein1(a, c) <= wasserstein1(a, b) + wasserstein1(b, c) + 1e-9
        assert wasserstein1(a, b) == pytest.approx(wasserstein1(b, a), abs=1e-12)
        scale, shift = rng.uniform(-3.0, 3.0), rng.normal()
        a2 = dist(scale * a.samples + shift, a.weights)
        b2 = dist(scale * b.samples + shift, b.weights)
        assert wasserstein1(a2, b2) == pytest.approx(abs(scale) * wasserstein1(a, b), abs=1e-9)


def test_weighted_ecdf_is_a_monotone_step_function():
    x, F = weighted_ecdf(dist([-3.0, -1.0, -2.0], [0.2, 0.3, 0.5]))
    np.testing.assert_array_equal(x, [-3.0, -3.0, -2.0, -1.0])
    np.testing.assert_allclose(F, [0.0, 0.2, 0.7, 1.0])
    assert np.all(np.diff(F) >= 0)


def test_rollout_result_invariant():
    with pytest.raises(ValueError):
        RolloutResult(TaskId.TIGHTEN, "farm", 0, True, FailureReason.TIMEOUT, np.zeros(1), np.zeros((1, 7)))
    with pytest.raises(ValueError):
        RolloutResult(TaskId.TIGHTEN, "farm", 0, False, FailureReason.NONE, np.zeros(1), np.zeros((1, 7)))
    r = make_result("tighten", "farm", 0, False, [-1.0])
    assert r.summary()["failure_reason"] == "slip"
    assert r.same_as(make_result("tighten", "farm", 0, False, [-1.0]))
    assert not r.same_as(make_result("tighten", "farm", 0, False, [-1.5]))


def test_success_statistics():
    results = [make_result("fragile_pick", "farm", i, i % 4 != 0, [-1.0]) for i in range(20)]
    assert success_rate(results) == pytest.approx(0.75)
    lo, hi = bootstrap_ci([r.success for r in results], seed=0)
    assert 0.0 <= lo <= 0.75 <= hi <= 1.0
    assert bootstrap_ci([True] * 10) == (1.0, 1.0)
    assert bootstrap_ci([], 10) == (0.0, 0.0)
    assert success_rate([]) == 0.0


def test_rollout_seeds():
    assert rollout_seeds(3, master_seed=2, offset=1000) == [201000, 201001, 201002]


def test_summary_row_counts_failure_reasons():
    results = [make_result("heavy_transport", "farm", i, i < 3, [-2.0, -2.5]) for i in range(5)]
    demos = weighted_distribution([np.array([-2.0, -2.5])])
    row = summarize(TaskId.HEAVY_TRANSPORT, "farm", results, demos)
    assert row["n"] == 5 and row["successes"] == 3
    assert row["slip"] == 2 and row["crush"] == 0
    assert row["w1_to_demos"] == pytest.approx(0.0, abs=1e-9)
    assert summarize(TaskId.HEAVY_TRANSPORT, "farm", results)["w1_to_demos"] is None


def test_emit_figures_for_every_task_and_variant(tmp_path):
    rng = np.random.default_rng(0)
    result_sets, demo_forces = {}, {}
    for task in TaskId:
        demo_forces[task.value] = [rng.normal(-2.0, 0.2, 50) for _ in range(3)]
        for k, variant in enumerate(VARIANTS):
            result_sets[(task.value, variant)] = [
                make_result(task, variant, s, s % (k + 2) == 0, rng.normal(-2.0 - k, 0.2, 40)) for s in range(6)
            ]
    out = emit_figures(result_sets, demo_forces, tmp_path)
    assert len(out["rows"]) == 12
    assert len(out["bars"]) == 12
    assert all(0.0 <= h <= 100.0 for h in out["bars"])
    assert (tmp_path / "success_rates.png").is_file()
    for task in TaskId:
        assert (tmp_path / f"force_ecdf_{task.value}.png").is_file()
        notes = out["annotations"][task.value]
        assert set(notes) == set(VARIANTS)
        # rollouts further from the demo forces sit further away
        assert notes["farm"] < notes["vision_only"]
    rows = read_results_table(tmp_path / "results.csv")
    assert len(rows) == 12
    assert {r["variant"] for r in rows} == set(VARIANTS)


def test_emit_figures_without_demos(tmp_path):
    results = {("tighten", "farm"): [make_result("tighten", "farm", 0, True, [-1.0, -2.0])]}
    out = emit_figures(results, {}, tmp_path)
    assert out["rows"][0]["w1_to_demos"] is None
    assert out["annotations"]["tighten"] == {}


def test_missing_checkpoint_fails_fast(tmp_path):
    with pytest.raises(CorruptFile):
        run_rollouts(tmp_path / "none.pt", default_task(TaskId.FRAGILE_PICK), n=1)


def test_reference_sources_run_in_seed_order():
    task = default_task(TaskId.FRAGILE_PICK)
    results = run_rollouts(RANDOM, task, seeds=[5, 6])
    assert [r.seed for r in results] == [5, 6]
    assert all(r.variant == RANDOM for r in results)
    again = run_rollouts(RANDOM, task, seeds=[5, 6])
    assert all(a.same_as(b) for a, b in zip(results, again))


@pytest.mark.slow
def test_expert_beats_random():
    task = default_task(TaskId.FRAGILE_PICK)
    expert = run_rollouts(EXPERT, task, n=5)
    random = run_rollouts(RANDOM, task, n=5)
    assert success_rate(expert) > success_rate(random)
