"""Step schedules, seeded stream plumbing, and single-phase execution."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avgsgd.objectives import ScalarNoisyQuadratic
from avgsgd.objectives import LeastSquares
from avgsgd.sgd_core import (
    Constant,
    DrawStream,
    InverseTime,
    ReplayStream,
    WorkerState,
    harness_rng,
    init_rng,
    phase_rng,
    coordinator_rng,
    run_worker_phase,
    sgd_step,
    step_size,
    step_sizes,
)
from scipy.sparse import csr_matrix


def small_least_squares(seed=1, m=7, n=4):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, n))
    a[rng.random((m, n)) < 0.4] = 0.0
    return LeastSquares(csr_matrix(a), rng.standard_normal(m))


def test_step_size_oracles():
    assert step_size(Constant(0.3), 100) == 0.3
    # alpha / (t + d): 2 / (2 + 8)
    assert step_size(InverseTime(2.0, 8.0), 2) == pytest.approx(0.2)
    assert step_size(InverseTime(2.0, 8.0), 0) == pytest.approx(0.25)


def test_step_sizes_vector_matches_scalar():
    sched = InverseTime(1.5, 3.0)
    vec = step_sizes(sched, 5, 7)
    assert np.allclose(vec, [step_size(sched, t) for t in range(5, 12)])
    assert len(step_sizes(sched, 0, 0)) == 0


def test_schedule_validation():
    with pytest.raises(ValueError):
        Constant(0.0)
    with pytest.raises(ValueError):
        InverseTime(-1.0, 2.0)
    with pytest.raises(ValueError):
        InverseTime(1.0, 0.0)
    with pytest.raises(ValueError):
        step_size(Constant(1.0), -1)


def test_streams_are_keyed_and_disjoint():
    a = phase_rng(42, 0, 0).random(4)
    assert np.array_equal(a, phase_rng(42, 0, 0).random(4))
    assert not np.array_equal(a, phase_rng(42, 1, 0).random(4))
    assert not np.array_equal(a, phase_rng(42, 0, 1).random(4))
    assert not np.array_equal(a, phase_rng(43, 0, 0).random(4))
    # role streams never collide with worker streams or each other
    others = [coordinator_rng(42).random(4), init_rng(42).random(4),
              harness_rng(42).random(4)]
    for i, x in enumerate(others):
        assert not np.array_equal(a, x)
        for y in others[i + 1:]:
            assert not np.array_equal(x, y)


def test_seed_validation():
    with pytest.raises(ValueError):
        phase_rng(-1, 0, 0)
    with pytest.raises(ValueError):
        phase_rng(1, -1, 0)


@given(st.lists(st.integers(min_value=1, max_value=7), min_size=1, max_size=6))
@settings(max_examples=30)
def test_draw_stream_is_chunking_invariant(chunks):
    """The draw sequence depends only on the total, never on take() sizes."""
    obj = ScalarNoisyQuadratic(c=1.0, beta2=1.0, sigma2=1.0, n_replicas=2)
    total = sum(chunks)
    whole = DrawStream(obj, phase_rng(3, 0, 0), total).take(total)
    stream = DrawStream(obj, phase_rng(3, 0, 0), total)
    pieces = np.concatenate([stream.take(k) for k in chunks], axis=0)
    assert np.array_equal(whole, pieces)


def test_draw_stream_exhaustion_raises():
    obj = ScalarNoisyQuadratic(c=1.0, beta2=0.0, sigma2=1.0)
    stream = DrawStream(obj, phase_rng(0, 0, 0), 3)
    stream.take(3)
    with pytest.raises(ValueError):
        stream.take(1)


def test_replay_stream_serves_and_length_checks():
    stream = ReplayStream(np.array([4, 1, 3]))
    assert list(stream.take(2)) == [4, 1]
    assert list(stream.take(1)) == [3]
    with pytest.raises(ValueError):
        stream.take(1)


def test_sgd_step_oracle():
    obj = small_least_squares()
    w = np.random.default_rng(0).standard_normal(obj.n)
    got = sgd_step(w, obj, 2, 0.1)
    assert np.allclose(got, w - 0.1 * obj.component_gradient(2, w))
    with pytest.raises(ValueError):
        sgd_step(w, obj, 2, 0.0)


def test_run_worker_phase_matches_manual_loop():
    obj = small_least_squares()
    sched = InverseTime(1.0, 10.0)
    state = WorkerState(0, np.zeros(obj.n), 4, phase_rng(9, 0, 0))
    indices = np.array([1, 3, 0, 2, 2])
    out = run_worker_phase(state, obj, sched, 5, indices=indices)

    w = np.zeros(obj.n)
    for offset, j0 in enumerate(indices):
        w = sgd_step(w, obj, int(j0) + 1, step_size(sched, 4 + offset))
    assert np.allclose(out.model, w, atol=1e-12)
    assert out.iteration == 9
    # input state untouched
    assert state.iteration == 4 and np.all(state.model == 0.0)


def test_run_worker_phase_draws_from_the_state_stream():
    obj = ScalarNoisyQuadratic(c=1.0, beta2=0.5, sigma2=1.0, n_replicas=2)
    w0 = np.ones(2)
    run = run_worker_phase(
        WorkerState(0, w0, 0, phase_rng(5, 0, 0)), obj, Constant(0.1), 6
    )
    draws = DrawStream(obj, phase_rng(5, 0, 0), 6).take(6)
    assert np.allclose(run.model, obj.apply_steps(w0, np.full(6, 0.1), draws))


def test_run_worker_phase_validation():
    obj = small_least_squares()
    state = WorkerState(0, np.zeros(obj.n), 0, phase_rng(0, 0, 0))
    with pytest.raises(ValueError):
        run_worker_phase(state, obj, Constant(0.1), 0)
    with pytest.raises(ValueError):
        run_worker_phase(state, obj, Constant(0.1), 3, indices=np.array([1, 2]))
    stream_obj = ScalarNoisyQuadratic(c=1.0, beta2=0.0, sigma2=1.0)
    stream_state = WorkerState(0, np.zeros(1), 0, phase_rng(0, 0, 0))
    with pytest.raises(ValueError):
        run_worker_phase(stream_state, stream_obj, Constant(0.1), 2,
                         indices=np.array([0, 0]))
