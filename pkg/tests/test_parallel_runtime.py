"""Averaging schedules, phase planning, and the parallel execution loop.

The heavy invariants here are determinism ones: results must be bit-identical
across thread counts and trace cadences, and degenerate schedule parameters
must collapse to their exact counterparts (Bernoulli(0) = one-shot,
Bernoulli(1) = mini-batch).
"""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avgsgd.objectives import ScalarNoisyQuadratic, random_homogeneous_quadratic
from avgsgd.parallel_runtime import (
    MINI_BATCH,
    Bernoulli,
    EveryK,
    OneShot,
    ParallelRunConfig,
    average_models,
    parse_schedule,
    plan_phases,
    run_equivalence_harness,
    run_parallel,
    schedule_label,
)
from avgsgd.sgd_core import Constant, InverseTime, coordinator_rng


def scalar_run_config(schedule, *, workers=4, steps=96, seed=0, trace=32, w0_dim=2):
    return ParallelRunConfig(
        n_workers=workers, total_steps=steps, schedule=schedule,
        steps=Constant(0.05), master_seed=seed, trace_every=trace,
        w0=np.ones(w0_dim),
    )


def scalar_objective(replicas=2):
    return ScalarNoisyQuadratic(c=1.0, beta2=0.5, sigma2=1.0, n_replicas=replicas)


# ---------------------------------------------------------------------------
# schedule types and parsing


def test_schedule_labels_round_trip():
    for text, sched in [("oneshot", OneShot()), ("every:16", EveryK(16)),
                        ("bernoulli:0.25", Bernoulli(0.25)), ("minibatch", EveryK(1))]:
        assert parse_schedule(text) == sched
    assert schedule_label(OneShot()) == "oneshot"
    assert schedule_label(EveryK(1)) == "minibatch"
    assert schedule_label(EveryK(16)) == "every16"
    assert schedule_label(Bernoulli(0.25)) == "bernoulli0.25"
    assert parse_schedule(" EVERY:4 ") == EveryK(4)


def test_schedule_validation():
    with pytest.raises(ValueError):
        EveryK(0)
    with pytest.raises(ValueError):
        Bernoulli(-0.1)
    with pytest.raises(ValueError):
        Bernoulli(1.5)
    for bad in ("", "every", "every:x", "often", "bernoulli:"):
        with pytest.raises(ValueError):
            parse_schedule(bad)
    assert MINI_BATCH == EveryK(1)


# ---------------------------------------------------------------------------
# phase planning


def test_plan_phases_oneshot_is_single_phase():
    assert plan_phases(OneShot(), 100, coordinator_rng(0)) == [100]


@given(st.integers(min_value=1, max_value=12), st.integers(min_value=1, max_value=20))
def test_plan_phases_every_k(k, n_phases):
    total = k * n_phases
    assert plan_phases(EveryK(k), total, coordinator_rng(0)) == [k] * n_phases
    # a remainder becomes one trailing short phase
    assert plan_phases(EveryK(k), total + max(1, k // 2),
                       coordinator_rng(0))[-1] == max(1, k // 2) if k > 1 else True


def test_plan_phases_every_k_tail_oracle():
    assert plan_phases(EveryK(32), 200, coordinator_rng(0)) == [32] * 6 + [8]


@given(st.integers(min_value=0, max_value=2 ** 32 - 1),
       st.floats(min_value=0.05, max_value=0.95))
@settings(max_examples=30)
def test_plan_phases_bernoulli_partitions_total(seed, zeta):
    phases = plan_phases(Bernoulli(zeta), 200, coordinator_rng(seed))
    assert sum(phases) == 200
    assert all(p >= 1 for p in phases)


def test_plan_phases_bernoulli_extremes():
    assert plan_phases(Bernoulli(0.0), 50, coordinator_rng(1)) == [50]
    assert plan_phases(Bernoulli(1.0), 50, coordinator_rng(1)) == [1] * 50


# ---------------------------------------------------------------------------
# model averaging


def test_average_models_is_the_mean_in_worker_order():
    models = [np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 0.0])]
    assert np.allclose(average_models(models), [3.0, 2.0])


def test_average_models_identity_on_identical_inputs():
    w = np.array([0.1, 0.2, 0.3])
    out = average_models([w.copy() for _ in range(3)])
    # exact, not just close: averaging coinciding workers changes nothing
    assert np.array_equal(out, w)
    assert not np.shares_memory(out, w)


def test_average_models_validation():
    with pytest.raises(ValueError):
        average_models([])
    with pytest.raises(ValueError):
        average_models([np.zeros(2), np.zeros(3)])


# ---------------------------------------------------------------------------
# run_parallel invariants


def test_degenerate_schedules_collapse_exactly():
    obj = scalar_objective()
    base = run_parallel(obj, scalar_run_config(OneShot()))
    bern0 = run_parallel(obj, scalar_run_config(Bernoulli(0.0)))
    assert np.array_equal(base.final_average, bern0.final_average)

    mb = run_parallel(obj, scalar_run_config(EveryK(1)))
    bern1 = run_parallel(obj, scalar_run_config(Bernoulli(1.0)))
    assert np.array_equal(mb.final_average, bern1.final_average)


def test_threaded_run_is_bit_identical_to_serial():
    obj = scalar_objective()
    cfg = scalar_run_config(EveryK(16), workers=6, steps=128)
    serial = run_parallel(obj, cfg)
    threaded = run_parallel(obj, cfg, threads=3)
    assert np.array_equal(serial.final_average, threaded.final_average)
    assert [r.objective for r in serial.records] == [r.objective for r in threaded.records]


@given(st.sampled_from([None, 7, 16, 33, 64, 100]))
@settings(max_examples=6, deadline=None)
def test_trace_cadence_never_changes_the_trajectory(trace):
    obj = scalar_objective()
    ref = run_parallel(obj, scalar_run_config(EveryK(24), steps=100, trace=None))
    got = run_parallel(obj, scalar_run_config(EveryK(24), steps=100, trace=trace))
    assert np.array_equal(ref.final_average, got.final_average)


def test_records_tick_iterations_are_schedule_independent():
    obj = scalar_objective()
    for sched in (OneShot(), EveryK(13), Bernoulli(0.2)):
        res = run_parallel(obj, scalar_run_config(sched, steps=96, trace=32))
        assert [r.iteration for r in res.records] == [0, 32, 64, 96]


def test_gradient_evals_count_worker_steps():
    obj = scalar_objective()
    res = run_parallel(obj, scalar_run_config(EveryK(10), workers=5, steps=47))
    assert res.gradient_evals == 5 * 47


def test_avg_events_per_schedule():
    obj = scalar_objective()
    assert run_parallel(obj, scalar_run_config(OneShot(), steps=96)).avg_events == 1
    assert run_parallel(obj, scalar_run_config(EveryK(32), steps=96)).avg_events == 3
    # 96 = 2*40 + 16: two full phases plus a terminal partial one
    assert run_parallel(obj, scalar_run_config(EveryK(40), steps=96)).avg_events == 3


@given(st.integers(min_value=1, max_value=8), st.integers(min_value=1, max_value=5))
@settings(max_examples=10, deadline=None)
def test_every_k_event_count_when_k_divides_total(k, phases):
    obj = scalar_objective(replicas=1)
    cfg = ParallelRunConfig(
        n_workers=2, total_steps=k * phases, schedule=EveryK(k),
        steps=Constant(0.05), master_seed=1, trace_every=None, w0=np.ones(1),
    )
    assert run_parallel(obj, cfg).avg_events == phases


def test_worker_min_max_bracket_the_average():
    obj = scalar_objective()
    res = run_parallel(obj, scalar_run_config(OneShot(), steps=64))
    last = res.records[-1]
    assert last.worker_min <= last.worker_max
    assert last.avg_events == 1
    assert last.elapsed_ms >= 0.0


def test_single_worker_every_k_equals_oneshot():
    # one component: the draw stream is irrelevant, only averaging semantics act
    quad = random_homogeneous_quadratic(3, 1, seed=2)
    cfgs = [
        ParallelRunConfig(n_workers=1, total_steps=96, schedule=s,
                          steps=Constant(0.05), master_seed=0, w0=np.zeros(3))
        for s in (OneShot(), EveryK(8))
    ]
    a, b = (run_parallel(quad, c).final_average for c in cfgs)
    assert np.array_equal(a, b)


def test_run_config_validation():
    with pytest.raises(ValueError):
        scalar_run_config(OneShot(), workers=0)
    with pytest.raises(ValueError):
        scalar_run_config(OneShot(), steps=0)
    with pytest.raises(ValueError):
        scalar_run_config(OneShot(), trace=0)
    with pytest.raises(ValueError):
        scalar_run_config(OneShot(), seed=-3)
    obj = scalar_objective()
    with pytest.raises(ValueError):
        run_parallel(obj, scalar_run_config(OneShot(), w0_dim=3))
    with pytest.raises(ValueError):
        run_parallel(obj, scalar_run_config(OneShot()), threads=0)


def test_index_tensor_replay_requires_finite_sum():
    obj = scalar_objective()
    with pytest.raises(ValueError):
        run_parallel(obj, scalar_run_config(OneShot()),
                     index_tensor=np.zeros((4, 96), dtype=int))


def test_index_tensor_shape_checked():
    quad = random_homogeneous_quadratic(3, 5, seed=0)
    cfg = ParallelRunConfig(n_workers=2, total_steps=10, schedule=OneShot(),
                            steps=Constant(0.05), master_seed=0, w0=np.zeros(3))
    with pytest.raises(ValueError):
        run_parallel(quad, cfg, index_tensor=np.zeros((2, 9), dtype=int))


# ---------------------------------------------------------------------------
# equivalence harness


def test_equivalence_deviation_is_float_noise_for_shared_curvature():
    quad = random_homogeneous_quadratic(6, 12, seed=3)
    dev = run_equivalence_harness(quad, n_workers=4, k=8, total_steps=64, seed=5)
    assert dev <= 1e-12


def test_equivalence_single_component_is_exactly_zero():
    # m = 1 leaves nothing stochastic: every schedule replays the same path
    quad = random_homogeneous_quadratic(4, 1, seed=6)
    assert run_equivalence_harness(quad, n_workers=3, k=4, total_steps=32, seed=7) == 0.0


def test_equivalence_rejects_nonlinear_gradients():
    with pytest.raises(ValueError):
        run_equivalence_harness(scalar_objective(), n_workers=2, k=4,
                                total_steps=16, seed=0)


def test_inverse_time_steps_continue_across_phases():
    """Per-phase step sizes must share one global clock, not restart at t=0."""
    quad = random_homogeneous_quadratic(3, 1, seed=2)
    run_cfgs = [
        ParallelRunConfig(n_workers=1, total_steps=30, schedule=s,
                          steps=InverseTime(1.0, 5.0), master_seed=11,
                          trace_every=None, w0=np.ones(3))
        for s in (OneShot(), EveryK(5))
    ]
    a, b = (run_parallel(quad, c).final_average for c in run_cfgs)
    # averaging one worker is a no-op, so the runs agree iff the clock is global
    assert np.array_equal(a, b)
