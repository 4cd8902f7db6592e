"""Phase-structured parallel SGD with periodic model averaging.

M workers start every phase from a common model, take the phase's SGD steps
independently, synchronize at a full barrier and replace their models with the
across-worker average. Schedules control phase lengths: a single terminal
average (OneShot), every K steps (EveryK), an independent coin per step
(Bernoulli), or every step (mini-batch, EveryK(1)). Every run ends with an
average, so the final trace record always describes an averaged model.

Execution is deterministic: worker draws are keyed by (master seed, worker id,
phase index), averaging reduces in ascending worker order, and the Bernoulli
coin sequence comes from a dedicated coordinator stream. Traces are therefore
bit-identical (wall-clock aside) whether workers run serially or on threads,
and whatever the trace cadence.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .sgd_core import (
    Constant,
    DrawStream,
    ReplayStream,
    StepSchedule,
    WorkerState,
    coordinator_rng,
    harness_rng,
    init_rng,
    phase_rng,
    step_sizes,
)

Array = np.ndarray


@dataclass(frozen=True)
class OneShot:
    """Average once, after the last step."""


@dataclass(frozen=True)
class EveryK:
    """Average after every k steps (k = 1 is mini-batch SGD)."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("averaging period k must be >= 1")


@dataclass(frozen=True)
class Bernoulli:
    """Average after each step independently with probability zeta."""

    zeta: float

    def __post_init__(self):
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")


AveragingSchedule = Union[OneShot, EveryK, Bernoulli]

MINI_BATCH = EveryK(1)


def schedule_label(sched: AveragingSchedule) -> str:
    if isinstance(sched, OneShot):
        return "oneshot"
    if isinstance(sched, EveryK):
        return "minibatch" if sched.k == 1 else f"every{sched.k}"
    return f"bernoulli{sched.zeta:g}"


def parse_schedule(text: str) -> AveragingSchedule:
    """Parse 'oneshot' | 'every:K' | 'bernoulli:Z' | 'minibatch'."""
    text = text.strip().lower()
    if text == "oneshot":
        return OneShot()
    if text == "minibatch":
        return EveryK(1)
    if text.startswith("every:"):
        return EveryK(int(text.split(":", 1)[1]))
    if text.startswith("bernoulli:"):
        return Bernoulli(float(text.split(":", 1)[1]))
    raise ValueError(f"unrecognized schedule '{text}'")


@dataclass(frozen=True)
class ParallelRunConfig:
    n_workers: int
    total_steps: int
    schedule: AveragingSchedule
    steps: StepSchedule
    master_seed: int
    trace_every: int | None = 64
    w0: Array | None = None

    def __post_init__(self):
        if self.n_workers < 1:
            raise ValueError("need at least one worker")
        if self.total_steps < 1:
            raise ValueError("need at least one step")
        if self.trace_every is not None and self.trace_every < 1:
            raise ValueError("trace cadence must be >= 1 or None")
        if int(self.master_seed) < 0:
            raise ValueError("master seed must be nonnegative")


@dataclass(frozen=True)
class RunRecord:
    """One trace row: state of the run at a global iteration."""

    iteration: int
    objective: float
    worker_min: float
    worker_max: float
    avg_events: int
    elapsed_ms: float


@dataclass
class RunResult:
    records: list[RunRecord]
    final_average: Array
    gradient_evals: int
    config: ParallelRunConfig
    phase_lengths: list[int] = field(default_factory=list)

    @property
    def avg_events(self) -> int:
        return self.records[-1].avg_events


def plan_phases(schedule: AveragingSchedule, total_steps: int,
                coord: np.random.Generator) -> list[int]:
    """Phase lengths for a run. Bernoulli draws one coordinator coin per step;
    a trailing partial phase is closed by the terminal average."""
    if isinstance(schedule, OneShot):
        return [total_steps]
    if isinstance(schedule, EveryK):
        k = schedule.k
        phases = [k] * (total_steps // k)
        if total_steps % k:
            phases.append(total_steps % k)
        return phases
    coins = coord.random(total_steps) < schedule.zeta
    phases = []
    run = 0
    for hit in coins:
        run += 1
        if hit:
            phases.append(run)
            run = 0
    if run:
        phases.append(run)
    return phases


def average_models(models: list[Array]) -> Array:
    """Mean of worker models, accumulated pairwise in ascending worker order.

    Bit-identical inputs short-circuit to an exact copy, so averaging
    coinciding workers is exactly the identity for every worker count.
    """
    if not models:
        raise ValueError("nothing to average")
    first = np.asarray(models[0], dtype=np.float64)
    for m in models[1:]:
        m = np.asarray(m)
        if m.shape != first.shape:
            raise ValueError(f"model shape {m.shape} != {first.shape}")
    if all(np.array_equal(first, m) for m in models[1:]):
        return first.copy()
    acc = first.copy()
    for m in models[1:]:
        acc += m
    acc /= len(models)
    return acc


def _initial_model(obj, cfg: ParallelRunConfig) -> Array:
    if cfg.w0 is not None:
        w0 = np.asarray(cfg.w0, dtype=np.float64)
        if w0.shape != (obj.n,):
            raise ValueError(f"w0 has shape {w0.shape}, expected ({obj.n},)")
        return w0.copy()
    return obj.initial_point(init_rng(cfg.master_seed))


def run_parallel(obj, cfg: ParallelRunConfig, *, index_tensor: Array | None = None,
                 threads: int = 1) -> RunResult:
    """Execute a full parallel run and return its trace and final average.

    index_tensor, shape (n_workers, total_steps), replays preset component
    indices instead of drawing them (finite-sum objectives only); this is how
    the equivalence harness feeds every schedule the same samples. threads > 1
    runs workers on a thread pool with identical results.
    """
    if index_tensor is not None:
        if not obj.finite_sum:
            raise ValueError("index replay requires a finite-sum objective")
        index_tensor = np.asarray(index_tensor)
        if index_tensor.shape != (cfg.n_workers, cfg.total_steps):
            raise ValueError(
                "index tensor must have shape (n_workers, total_steps)"
            )
    if threads < 1:
        raise ValueError("threads must be >= 1")

    w = _initial_model(obj, cfg)
    phases = plan_phases(cfg.schedule, cfg.total_steps, coordinator_rng(cfg.master_seed))
    cadence = cfg.trace_every
    total = cfg.total_steps
    start = time.perf_counter()

    def elapsed_ms() -> float:
        return (time.perf_counter() - start) * 1000.0

    def is_tick(it: int) -> bool:
        return it == total or (cadence is not None and it % cadence == 0)

    def record_at(it: int, avg: Array, worker_models: list[Array], events: int) -> RunRecord:
        vals = [obj.value(mw) for mw in worker_models]
        return RunRecord(it, obj.value(avg), min(vals), max(vals), events, elapsed_ms())

    records = [record_at(0, w, [w], 0)]
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    gradient_evals = 0
    events = 0
    global_t = 0
    try:
        for phase_idx, k in enumerate(phases):
            states = [
                WorkerState(i, w, global_t, phase_rng(cfg.master_seed, i, phase_idx))
                for i in range(cfg.n_workers)
            ]
            if index_tensor is None:
                streams = [DrawStream(obj, st.rng, k) for st in states]
            else:
                streams = [
                    ReplayStream(index_tensor[i, global_t:global_t + k])
                    for i in range(cfg.n_workers)
                ]
            done = 0
            while done < k:
                it = global_t + done
                if cadence is None:
                    chunk = k - done
                else:
                    chunk = min(k - done, cadence - it % cadence)
                alphas = step_sizes(cfg.steps, it, chunk)

                def advance(pair):
                    st, stream = pair
                    st.model = obj.apply_steps(st.model, alphas, stream.take(chunk))

                if pool is not None:
                    list(pool.map(advance, zip(states, streams)))
                else:
                    for pair in zip(states, streams):
                        advance(pair)
                gradient_evals += chunk * cfg.n_workers
                done += chunk
                it = global_t + done
                models = [st.model for st in states]
                if done == k:
                    w = average_models(models)
                    events += 1
                    if is_tick(it):
                        records.append(record_at(it, w, models, events))
                elif is_tick(it):
                    records.append(record_at(it, average_models(models), models, events))
            global_t += k
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return RunResult(records, w, gradient_evals, cfg, list(phases))


def run_equivalence_harness(obj, n_workers: int, k: int, total_steps: int,
                            seed: int, alpha: float | None = None) -> float:
    """Max pairwise relative deviation of final averages across OneShot,
    mini-batch and EveryK(k), all fed the same sample index tensor.

    Requires linear component gradients (homogeneous quadratics), for which
    the three schedules coincide in exact arithmetic; the returned deviation
    is pure floating-point noise.
    """
    if not getattr(obj, "linear_gradients", False):
        raise ValueError("equivalence requires linear component gradients")
    if alpha is None:
        alpha = 1.0 / (2.0 * obj.smoothness())
    sigma = harness_rng(seed).integers(0, obj.m, size=(n_workers, total_steps))
    finals = []
    for sched in (OneShot(), EveryK(1), EveryK(k)):
        cfg = ParallelRunConfig(
            n_workers=n_workers,
            total_steps=total_steps,
            schedule=sched,
            steps=Constant(alpha),
            master_seed=seed,
            trace_every=None,
            w0=np.zeros(obj.n),
        )
        finals.append(run_parallel(obj, cfg, index_tensor=sigma).final_average)
    worst = 0.0
    for a in range(len(finals)):
        for b in range(a + 1, len(finals)):
            diff = float(np.linalg.norm(finals[a] - finals[b]))
            if diff == 0.0:
                continue
            denom = max(
                float(np.linalg.norm(finals[a])),
                float(np.linalg.norm(finals[b])),
                1e-300,
            )
            worst = max(worst, diff / denom)
    return worst
