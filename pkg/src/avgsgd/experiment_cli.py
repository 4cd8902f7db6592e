"""Command-line front end for the averaging-schedule experiments.

Subcommands: convex-compare (grid-searched schedule comparison on a convex
objective), quartic (non-convex double well), pca (streaming Oja updates),
lemma-sweep (closed form vs fixed point vs Monte Carlo), profile-envelope
(variance envelope measurement), equivalence (exact schedule-equivalence
check on a homogeneous quadratic).

Every flag can also come from a flat `key = value` config file; explicit
command-line flags win. Every output file embeds the config and master seed.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, fields
from itertools import product

import numpy as np

from . import data_io
from .asymptotic_moments import (MomentParams, asymptotic_variance, fixed_point,
                                 monte_carlo_variance)
from .data_io import EnvelopeRow, build_objective, envelope_report_text, normalize_objective
from .objectives import OjaPcaStream, QuarticDoubleWell, random_homogeneous_quadratic
from .parallel_runtime import (EveryK, OneShot, ParallelRunConfig, parse_schedule,
                               run_equivalence_harness, run_parallel, schedule_label)
from .sgd_core import Constant, InverseTime
from .variance_model import find_optimum, fit_variance_envelope

OPTIMUM_TOL = 1e-6
EQUIVALENCE_TOL = 1e-9
_BLOCK_TAG = 6

LEMMA_HEADER = "alpha,c,beta2,sigma2,M,zeta,Q_closed,Q_fixedpoint,Q_montecarlo,mc_stderr"
COMPARE_HEADER = "iter,normalized_objective,alpha,d"
SPEEDUP_HEADER = "schedule,iterations_to_threshold,speedup_vs_baseline"
QUARTIC_HEADER = "schedule,mean_final_objective,stderr,replicas"
PCA_HEADER = "avg_events,schedule,mean_error,stderr"


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    data: str | None = None
    model: str = "ls"
    synthetic: str | None = None
    workers: int = 24
    steps: int = 4096
    schedules: tuple = ("oneshot", "every:128", "every:1024")
    grid_alpha: tuple = (0.001, 0.01, 0.1, 1.0, 10.0)
    grid_d: tuple = (1.0, 100.0, 10000.0)
    repeats: int = 3
    seed: int = 0
    out: str | None = None
    threads: int = 1
    trace_every: int = 64
    scale: bool = False
    threshold: float = 0.1
    alpha: float | None = None
    k: int = 16
    lines: int = 20
    points_per_line: int = 9
    horizon: int = 500
    trials: int = 20000
    zeta: tuple = (0.0, 0.1, 1.0)
    beta2: tuple = (0.0, 1.0)
    curvature: float = 1.0
    sigma2: float = 1.0

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.kind == "convex-compare" and not (self.grid_alpha and self.grid_d):
            raise ValueError("convex-compare needs a non-empty (alpha, d) grid")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


# highrho: near-interpolation labels plus heavy-tailed row scaling, so gradient
# dispersion (not curvature) caps the usable step size; rho lands around 1e3-3e3.
# lowrho: denser rows under large label noise; residual noise dominates
# everywhere (rho ~ 0.05) and averaging frequency stops mattering.
_SYNTHETIC = {
    "highrho": dict(n_rows=2048, n_features=64, density=0.1,
                    planted_scale=1.0, label_noise=0.01, tail=0.6),
    "lowrho": dict(n_rows=2048, n_features=64, density=0.25,
                   planted_scale=1.0, label_noise=4.0),
}


def _block_seeds(seed: int, n: int) -> list[int]:
    gen = np.random.default_rng([int(seed), _BLOCK_TAG])
    return [int(v) for v in gen.integers(0, 2 ** 62, size=n)]


def _load_dataset(cfg: ExperimentConfig):
    if cfg.data and cfg.synthetic:
        raise ValueError("give either --data or --synthetic, not both")
    if cfg.data:
        ds = data_io.read_libsvm(cfg.data)
        name = os.path.basename(cfg.data)
    elif cfg.synthetic:
        if cfg.synthetic not in _SYNTHETIC:
            raise ValueError(
                f"unknown synthetic instance {cfg.synthetic!r}; "
                f"choose from {sorted(_SYNTHETIC)}"
            )
        ds = data_io.synthetic_least_squares(seed=cfg.seed, **_SYNTHETIC[cfg.synthetic])
        name = cfg.synthetic
    else:
        raise ValueError("need --data PATH or --synthetic NAME")
    if cfg.scale:
        ds = data_io.scale_max_abs(ds)
    return ds, name


def _config_meta(cfg: ExperimentConfig, **extra) -> dict:
    meta = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        meta[f.name] = value
    meta.update(extra)
    return meta


def _save(cfg: ExperimentConfig, filename: str, text: str) -> None:
    if cfg.out:
        data_io.save_text(os.path.join(cfg.out, filename), text)


# ---------------------------------------------------------------------------
# convex-compare


@dataclass(frozen=True)
class CompareCurve:
    """Best-of-grid normalized objective curve for one schedule."""

    schedule: str
    iterations: tuple
    values: tuple
    cells: tuple
    crossing: float | None
    gradient_evals: int


def _threshold_crossing(iters, vals, threshold: float) -> float | None:
    """First (linearly interpolated) iteration where the curve dips to threshold."""
    for i, v in enumerate(vals):
        if math.isfinite(v) and v <= threshold:
            if i == 0:
                return float(iters[0])
            v0 = vals[i - 1]
            if not math.isfinite(v0):
                return float(iters[i])
            span = v0 - v
            frac = 0.0 if span <= 0 else (v0 - threshold) / span
            return float(iters[i - 1] + frac * (iters[i] - iters[i - 1]))
    return None


def run_convex_compare(cfg: ExperimentConfig) -> dict:
    """Grid-searched schedule comparison; returns {label: CompareCurve}.

    Each schedule runs every (alpha, d) grid cell for `repeats` reshuffles,
    curves are averaged across repeats per cell, and the reported curve is the
    pointwise minimum over cells. A single-worker entry is included for
    context. The threshold table is computed on the same best-of-grid curves
    that are written out.
    """
    ds, name = _load_dataset(cfg)
    base_obj = build_objective(ds, cfg.model)
    w_star = find_optimum(base_obj, tol=OPTIMUM_TOL)
    f_star = base_obj.value(w_star)
    w0 = np.zeros(base_obj.n)
    f0 = base_obj.value(w0)
    if not f0 > f_star:
        raise ValueError("zero initializer is already optimal; nothing to compare")

    objs = []
    for r in range(cfg.repeats):
        ds_r = ds if r == 0 else data_io.reshuffle(ds, cfg.seed + r)
        objs.append(build_objective(ds_r, cfg.model))

    entries = [(schedule_label(parse_schedule(s)), parse_schedule(s), cfg.workers)
               for s in cfg.schedules]
    entries.append(("single", OneShot(), 1))

    jobs = [
        (label, sched, m, a, d, r)
        for label, sched, m in entries
        for a, d in product(cfg.grid_alpha, cfg.grid_d)
        for r in range(cfg.repeats)
    ]

    def run_job(job):
        label, sched, m, a, d, r = job
        # d = inf degenerates to a constant step of a
        steps = Constant(a) if math.isinf(d) else InverseTime(a, d)
        run_cfg = ParallelRunConfig(
            n_workers=m, total_steps=cfg.steps, schedule=sched,
            steps=steps, master_seed=cfg.seed + r,
            trace_every=cfg.trace_every, w0=w0,
        )
        # divergent grid cells are expected; overflow to inf is their signal
        with np.errstate(all="ignore"):
            res = run_parallel(objs[r], run_cfg)
            vals = np.array([normalize_objective(rec.objective, f0, f_star)
                             for rec in res.records])
        iters = tuple(rec.iteration for rec in res.records)
        return job, iters, vals, res.gradient_evals

    if cfg.threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            outputs = list(pool.map(run_job, jobs))
    else:
        outputs = [run_job(j) for j in jobs]

    acc: dict = {}
    evals: dict = {}
    for (label, _sched, _m, a, d, _r), iters, vals, ge in outputs:
        key = (label, a, d)
        if key not in acc:
            acc[key] = [iters, np.zeros(len(iters)), 0]
        entry = acc[key]
        if entry[0] != iters:
            raise RuntimeError("trace ticks diverged across repeats")
        entry[1] = entry[1] + vals
        entry[2] += 1
        evals.setdefault(label, set()).add(ge)

    curves: dict = {}
    for label, _sched, _m in entries:
        cells = [(a, d) for a, d in product(cfg.grid_alpha, cfg.grid_d)]
        iters = acc[(label,) + cells[0]][0]
        mat = np.vstack([acc[(label, a, d)][1] / acc[(label, a, d)][2]
                         for a, d in cells])
        clean = np.where(np.isnan(mat), np.inf, mat)
        best = clean.argmin(axis=0)
        env = clean[best, np.arange(clean.shape[1])]
        chosen = tuple(cells[i] for i in best)
        crossing = _threshold_crossing(iters, env, cfg.threshold)
        if len(evals[label]) != 1:
            raise RuntimeError(f"gradient budgets diverged within schedule {label}")
        curves[label] = CompareCurve(
            schedule=label, iterations=iters,
            values=tuple(float(v) for v in env), cells=chosen,
            crossing=crossing, gradient_evals=evals[label].pop(),
        )

    if all(not math.isfinite(c.values[-1]) for c in curves.values()):
        raise RuntimeError("no grid cell converged for any schedule")

    base_label = "oneshot" if "oneshot" in curves else entries[0][0]
    base_crossing = curves[base_label].crossing
    meta = _config_meta(cfg, dataset=name, f0=f0, f_star=f_star)

    table_rows = []
    print(f"threshold {cfg.threshold} crossings (baseline: {base_label}):")
    for label, _sched, _m in entries:
        c = curves[label]
        cross = "never" if c.crossing is None else f"{c.crossing:.1f}"
        if c.crossing is None or base_crossing is None:
            speedup = ""
        else:
            speedup = f"{base_crossing / c.crossing:.3f}"
        table_rows.append((label, cross, speedup))
        print(f"  {label:>14}: {cross:>10} iters   speedup {speedup or 'n/a'}")

    for label, c in curves.items():
        rows = [(it, v, a, d)
                for it, v, (a, d) in zip(c.iterations, c.values, c.cells)]
        _save(cfg, f"compare_{label}.csv",
              data_io.write_table(COMPARE_HEADER, rows, config=meta))
    _save(cfg, "speedup.csv",
          data_io.write_table(SPEEDUP_HEADER, table_rows, config=meta))
    return curves


# ---------------------------------------------------------------------------
# quartic


def run_quartic(cfg: ExperimentConfig) -> dict:
    """Mean final double-well objective per schedule; {label: (mean, se, values)}."""
    alpha = 0.025 if cfg.alpha is None else cfg.alpha
    n_blocks = min(10, cfg.repeats)
    reps = -(-cfg.repeats // n_blocks)
    obj = QuarticDoubleWell(1.0, n_replicas=reps)
    seeds = _block_seeds(cfg.seed, n_blocks)

    results: dict = {}
    out_rows = []
    for sched_str in cfg.schedules:
        sched = parse_schedule(sched_str)
        label = schedule_label(sched)
        block_vals = []
        for b in range(n_blocks):
            run_cfg = ParallelRunConfig(
                n_workers=cfg.workers, total_steps=cfg.steps, schedule=sched,
                steps=Constant(alpha), master_seed=seeds[b],
                trace_every=None, w0=np.zeros(reps),
            )
            res = run_parallel(obj, run_cfg, threads=cfg.threads)
            block_vals.append(obj.replica_values(res.final_average))
        arr = np.concatenate(block_vals)[: cfg.repeats]
        block_means = np.array([v.mean() for v in block_vals])
        se = (float(block_means.std(ddof=1) / math.sqrt(n_blocks))
              if n_blocks > 1 else float("nan"))
        mean = float(arr.mean())
        results[label] = (mean, se, arr)
        out_rows.append((label, mean, se, len(arr)))
        print(f"  {label:>14}: mean final objective {mean:.4f} (se {se:.4f}, "
              f"{len(arr)} replicas)")

    meta = _config_meta(cfg, alpha=alpha)
    _save(cfg, "quartic.csv", data_io.write_table(QUARTIC_HEADER, out_rows, config=meta))
    return results


# ---------------------------------------------------------------------------
# pca


def run_pca(cfg: ExperimentConfig) -> dict:
    """Final principal-component error per schedule; {label: per-replica errors}.

    Default schedule ladder spans one-shot (leftmost) through every-step
    averaging (rightmost); all schedules share the master seed, so replica r
    starts from the same initial vector under every schedule.
    """
    alpha = 0.02 if cfg.alpha is None else cfg.alpha
    obj = OjaPcaStream(dim=20, n_replicas=cfg.repeats)
    if cfg.schedules:
        scheds = [parse_schedule(s) for s in cfg.schedules]
    else:
        scheds = [OneShot()] + [EveryK(max(1, cfg.steps // c)) for c in (10, 100, 1000)]
        scheds.append(EveryK(1))
    # rungs can collide when steps is small
    scheds = list({schedule_label(s): s for s in scheds}.values())

    errors: dict = {}
    out_rows = []
    for sched in scheds:
        run_cfg = ParallelRunConfig(
            n_workers=cfg.workers, total_steps=cfg.steps, schedule=sched,
            steps=Constant(alpha), master_seed=cfg.seed, trace_every=None,
        )
        res = run_parallel(obj, run_cfg, threads=cfg.threads)
        errs = obj.replica_errors(res.final_average)
        label = schedule_label(sched)
        errors[label] = errs
        se = float(errs.std(ddof=1) / math.sqrt(len(errs))) if len(errs) > 1 else float("nan")
        out_rows.append((res.avg_events, label, float(errs.mean()), se))
        print(f"  {label:>14}: {res.avg_events:>6} avg events, "
              f"mean error {errs.mean():.4f} (se {se:.4f})")

    meta = _config_meta(cfg, alpha=alpha)
    _save(cfg, "pca.csv", data_io.write_table(PCA_HEADER, out_rows, config=meta))
    return errors


# ---------------------------------------------------------------------------
# lemma-sweep


def run_lemma_sweep(cfg: ExperimentConfig) -> list:
    """Closed form vs fixed point vs Monte Carlo over the (alpha, beta2, zeta) grid."""
    rows = []
    idx = 0
    for a in cfg.grid_alpha:
        for b2 in cfg.beta2:
            for z in cfg.zeta:
                p = MomentParams(alpha=a, c=cfg.curvature, beta2=b2,
                                 sigma2=cfg.sigma2, M=cfg.workers, zeta=z)
                q_closed = asymptotic_variance(p)
                q_fp = fixed_point(p).Q
                q_mc, se = monte_carlo_variance(
                    p, cfg.horizon, cfg.trials, cfg.seed + idx,
                    threads=cfg.threads,
                )
                rows.append((a, cfg.curvature, b2, cfg.sigma2, cfg.workers, z,
                             q_closed, q_fp, q_mc, se))
                print(f"  alpha={a:g} beta2={b2:g} zeta={z:g}: closed {q_closed:.6f} "
                      f"fixed {q_fp:.6f} mc {q_mc:.6f} (se {se:.6f})")
                idx += 1
    _save(cfg, "lemma_sweep.csv",
          data_io.write_table(LEMMA_HEADER, rows, config=_config_meta(cfg)))
    return rows


# ---------------------------------------------------------------------------
# profile-envelope


def run_profile_envelope(cfg: ExperimentConfig):
    """Fit and report the variance envelope of the configured objective."""
    ds, name = _load_dataset(cfg)
    obj = build_objective(ds, cfg.model)
    w_star = find_optimum(obj, tol=OPTIMUM_TOL)
    w0 = np.zeros(obj.n)
    env = fit_variance_envelope(obj, w_star, w0, lines=cfg.lines,
                                points_per_line=cfg.points_per_line, rng=cfg.seed)
    row = EnvelopeRow(name, cfg.model, env.sigma2, env.beta2, env.dist0_sq, env.rho)
    sys.stdout.write(envelope_report_text(row, extra={"clamped": env.clamped}))
    _save(cfg, "envelope.csv",
          data_io.write_envelope_report([row], config=_config_meta(cfg, dataset=name)))
    return env


# ---------------------------------------------------------------------------
# equivalence


def run_equivalence(cfg: ExperimentConfig) -> float:
    """Exact-equivalence check of one-shot / every-K / mini-batch under shared draws."""
    obj = random_homogeneous_quadratic(8, 32, cfg.seed)
    dev = run_equivalence_harness(obj, cfg.workers, cfg.k, cfg.steps, cfg.seed)
    print(f"max relative deviation across schedules: {dev:.3e}")
    if dev > EQUIVALENCE_TOL:
        raise RuntimeError(
            f"schedule equivalence violated: {dev:.3e} > {EQUIVALENCE_TOL:.0e}"
        )
    return dev


# ---------------------------------------------------------------------------
# config plumbing

_RUNNERS = {
    "convex-compare": run_convex_compare,
    "quartic": run_quartic,
    "pca": run_pca,
    "lemma-sweep": run_lemma_sweep,
    "profile-envelope": run_profile_envelope,
    "equivalence": run_equivalence,
}

_KIND_DEFAULTS = {
    "convex-compare": {},
    "quartic": dict(workers=24, steps=10000, repeats=100, alpha=0.025,
                    schedules=("oneshot", "bernoulli:0.001", "bernoulli:0.1",
                               "every:1000", "every:10")),
    "pca": dict(workers=48, steps=10000, repeats=100, alpha=0.02, schedules=()),
    "lemma-sweep": dict(workers=4, grid_alpha=(0.1,)),
    "profile-envelope": {},
    "equivalence": dict(workers=4, steps=256),
}

_INT_KEYS = {"workers", "steps", "seed", "repeats", "threads", "trace_every",
             "k", "lines", "points_per_line", "horizon", "trials"}
_FLOAT_KEYS = {"threshold", "alpha", "curvature", "sigma2"}
_FLOAT_LIST_KEYS = {"grid_alpha", "grid_d", "zeta", "beta2"}
_STR_LIST_KEYS = {"schedules"}
_BOOL_KEYS = {"scale"}
_STR_KEYS = {"data", "model", "synthetic", "out"}
_ALL_KEYS = (_INT_KEYS | _FLOAT_KEYS | _FLOAT_LIST_KEYS | _STR_LIST_KEYS
             | _BOOL_KEYS | _STR_KEYS)


def _coerce(key: str, value):
    if isinstance(value, (list, tuple)):
        if key in _STR_LIST_KEYS:
            return tuple(str(v) for v in value)
        if key in _FLOAT_LIST_KEYS:
            return tuple(float(v) for v in value)
        raise ValueError(f"config key {key!r} does not take a list")
    if not isinstance(value, str):
        return value
    v = value.strip()
    if key in _INT_KEYS:
        return int(v)
    if key in _FLOAT_KEYS:
        return float(v)
    if key in _FLOAT_LIST_KEYS:
        return tuple(float(x) for x in v.split(",") if x.strip())
    if key in _STR_LIST_KEYS:
        return tuple(x.strip() for x in v.split(",") if x.strip())
    if key in _BOOL_KEYS:
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean for {key}: {value!r}")
    if key in _STR_KEYS:
        return v
    raise ValueError(f"unknown config key {key!r}")


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; '#' comments; keys match the CLI flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            hash_pos = line.find("#")
            if hash_pos >= 0:
                line = line[:hash_pos]
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().replace("-", "_")
            if key not in _ALL_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="avgsgd",
        description="Parallel SGD averaging-schedule experiments.",
    )
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in _RUNNERS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--data", help="libsvm dataset path")
        sp.add_argument("--model", choices=("ls", "lr"))
        sp.add_argument("--synthetic", help="named synthetic instance (highrho|lowrho)")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--schedule", action="append", dest="schedules",
                        metavar="SCHED", help="oneshot|minibatch|every:K|bernoulli:Z")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--repeats", type=int)
        sp.add_argument("--grid-alpha", dest="grid_alpha", help="comma list")
        sp.add_argument("--grid-d", dest="grid_d", help="comma list")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--trace-every", type=int, dest="trace_every")
        sp.add_argument("--threshold", type=float)
        sp.add_argument("--scale", action="store_true", default=None)
        sp.add_argument("--k", type=int)
        sp.add_argument("--lines", type=int)
        sp.add_argument("--points-per-line", type=int, dest="points_per_line")
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--zeta", help="comma list")
        sp.add_argument("--beta2", help="comma list")
        sp.add_argument("--curvature", type=float)
        sp.add_argument("--sigma2", type=float)
    return ap


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    merged = {f.name: f.default for f in fields(ExperimentConfig)
              if f.name != "kind"}
    merged.update(_KIND_DEFAULTS.get(args.kind, {}))
    if getattr(args, "config", None):
        merged.update(parse_config_file(args.config))
    for key in merged:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = _coerce(key, cli_value)
    return ExperimentConfig(kind=args.kind, **merged)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        _RUNNERS[cfg.kind](cfg)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
