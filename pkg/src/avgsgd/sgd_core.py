"""Sequential SGD primitives: step schedules, worker state, phase execution.

Randomness is organized so that every (master seed, worker id, phase index)
triple deterministically names one draw stream. Replaying a phase with the
same triple reproduces it bit for bit, and worker streams are independent of
one another and of the coordinator's averaging coins.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np

Array = np.ndarray

# stream tags keep worker draws, coordinator coins, initial points and
# harness index tensors on provably distinct streams
_WORKER_TAG = 1
_COORD_TAG = 2
_INIT_TAG = 3
_HARNESS_TAG = 4


@dataclass(frozen=True)
class Constant:
    """Fixed step size alpha > 0."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class InverseTime:
    """Decaying step size alpha / (t + d) with alpha > 0, d > 0."""

    alpha: float
    d: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.d > 0:
            raise ValueError("d must be positive")


StepSchedule = Union[Constant, InverseTime]


def step_size(sched: StepSchedule, t: int) -> float:
    """Step size at global iteration t >= 0. t never resets across phases."""
    if t < 0:
        raise ValueError("iteration index must be nonnegative")
    if isinstance(sched, Constant):
        return sched.alpha
    return sched.alpha / (t + sched.d)


def step_sizes(sched: StepSchedule, t0: int, k: int) -> Array:
    """Vector of step sizes for global iterations t0 .. t0+k-1."""
    if t0 < 0 or k < 0:
        raise ValueError("iteration range must be nonnegative")
    if isinstance(sched, Constant):
        return np.full(k, sched.alpha)
    return sched.alpha / (np.arange(t0, t0 + k) + sched.d)


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0:
        raise ValueError("seeds must be nonnegative integers")
    return seed


def phase_rng(master_seed: int, worker_id: int, phase_index: int) -> np.random.Generator:
    """The worker's draw stream for one phase; a pure function of the triple."""
    if worker_id < 0 or phase_index < 0:
        raise ValueError("worker id and phase index must be nonnegative")
    return np.random.default_rng(
        [_check_seed(master_seed), _WORKER_TAG, int(worker_id), int(phase_index)]
    )


def coordinator_rng(master_seed: int) -> np.random.Generator:
    return np.random.default_rng([_check_seed(master_seed), _COORD_TAG])


def init_rng(master_seed: int) -> np.random.Generator:
    return np.random.default_rng([_check_seed(master_seed), _INIT_TAG])


def harness_rng(master_seed: int) -> np.random.Generator:
    return np.random.default_rng([_check_seed(master_seed), _HARNESS_TAG])


@dataclass
class WorkerState:
    """One worker's model, global iteration counter and phase draw stream."""

    worker_id: int
    model: Array
    iteration: int
    rng: np.random.Generator


class DrawStream:
    """Serves an objective's canonical draws for one (worker, phase).

    Draws are materialized in blocks whose size depends only on the objective
    and the phase length, never on how execution is chunked for trace probes.
    """

    def __init__(self, obj, rng: np.random.Generator, total: int):
        self._obj = obj
        self._rng = rng
        self._pending = total
        self._buf = None
        self._pos = 0

    def take(self, k: int):
        parts = []
        need = k
        while need > 0:
            if self._buf is None or self._pos >= len(self._buf):
                block = min(self._obj.steps_per_draw_block, self._pending)
                if block <= 0:
                    raise ValueError("draw stream exhausted")
                self._buf = self._obj.draw_block(self._rng, block)
                self._pending -= block
                self._pos = 0
            got = min(need, len(self._buf) - self._pos)
            parts.append(self._buf[self._pos:self._pos + got])
            self._pos += got
            need -= got
        if len(parts) == 1:
            return parts[0]
        return np.concatenate(parts, axis=0)


class ReplayStream:
    """Serves preset component indices (finite-sum replay for the harness)."""

    def __init__(self, indices: Array):
        self._idx = np.asarray(indices)
        self._pos = 0

    def take(self, k: int):
        if self._pos + k > len(self._idx):
            raise ValueError("replay stream exhausted")
        out = self._idx[self._pos:self._pos + k]
        self._pos += k
        return out


def sgd_step(w: Array, obj, j: int, alpha: float) -> Array:
    """One SGD update w - alpha * grad f_j(w). Pure; w is not modified."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return np.asarray(w, dtype=np.float64) - alpha * obj.component_gradient(j, w)


def run_worker_phase(state: WorkerState, obj, sched: StepSchedule, n_steps: int,
                     *, indices: Array | None = None) -> WorkerState:
    """Run n_steps sequential SGD updates from the worker's current state.

    Component indices (finite-sum) or noise records (streams) come from the
    state's phase stream, unless an explicit index vector is supplied. The
    iteration counter is global: step sizes continue across phases. Returns a
    fresh state; the input state and its model are left untouched.
    """
    if n_steps < 1:
        raise ValueError("a phase must contain at least one step")
    alphas = step_sizes(sched, state.iteration, n_steps)
    if indices is not None:
        if not obj.finite_sum:
            raise ValueError("index replay requires a finite-sum objective")
        if len(indices) != n_steps:
            raise ValueError("need exactly one preset index per step")
        stream = ReplayStream(indices)
    else:
        stream = DrawStream(obj, state.rng, n_steps)
    model = obj.apply_steps(state.model, alphas, stream.take(n_steps))
    return replace(state, model=model, iteration=state.iteration + n_steps)
