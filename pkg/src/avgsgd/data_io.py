"""Dataset parsing (libsvm text format), synthetic instances, and output files.

Datasets are immutable row collections with 1-based strictly increasing
feature indices, the libsvm convention. Experiment outputs are plain CSV with
`# key = value` config lines up front so every file names the run that
produced it.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .objectives import LeastSquares, LogisticRegression
from .parallel_runtime import RunRecord

TRACE_HEADER = "iter,objective,worker_min,worker_max,avg_events,elapsed_ms"
ENVELOPE_HEADER = "dataset,model,sigma2,beta2,dist0_sq,rho"


class LibsvmParseError(ValueError):
    """Malformed libsvm input; `line` is the 1-based offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"{message} at line {line}")
        self.line = line


@dataclass(frozen=True)
class SparseDataset:
    """Rows of (label, ((index, value), ...)) with 1-based feature indices."""

    rows: tuple
    n_features: int

    def __post_init__(self):
        if self.n_features < 0:
            raise ValueError("n_features must be nonnegative")
        for label, feats in self.rows:
            prev = 0
            for idx, _ in feats:
                if idx < 1:
                    raise ValueError("feature indices are 1-based")
                if idx <= prev:
                    raise ValueError("feature indices must be strictly increasing")
                prev = idx
            if prev > self.n_features:
                raise ValueError("feature index exceeds n_features")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def labels(self) -> np.ndarray:
        return np.array([label for label, _ in self.rows], dtype=np.float64)

    def to_csr(self) -> csr_matrix:
        indptr = [0]
        cols: list[int] = []
        vals: list[float] = []
        for _, feats in self.rows:
            for idx, v in feats:
                cols.append(idx - 1)
                vals.append(v)
            indptr.append(len(cols))
        return csr_matrix(
            (np.array(vals, dtype=np.float64),
             np.array(cols, dtype=np.int64),
             np.array(indptr, dtype=np.int64)),
            shape=(self.n_rows, self.n_features),
        )

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_features))
        for i, (_, feats) in enumerate(self.rows):
            for idx, v in feats:
                out[i, idx - 1] = v
        return out


def parse_libsvm(source) -> SparseDataset:
    """Parse `<label> <idx>:<val> ...` lines into a SparseDataset.

    `source` is bytes, text, or a file-like object; `#` starts a comment,
    blank lines are skipped, LF and CRLF are equivalent. Malformed pairs,
    non-numeric fields, indices below 1 and non-increasing indices raise
    LibsvmParseError with the line number.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8")

    rows = []
    n_features = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        hash_pos = line.find("#")
        if hash_pos >= 0:
            line = line[:hash_pos]
        tokens = line.split()
        if not tokens:
            continue
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
        feats = []
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"malformed pair {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"malformed pair {tok!r}") from None
            if idx < 1:
                raise LibsvmParseError(lineno, f"feature index {idx} < 1")
            if idx <= prev:
                raise LibsvmParseError(lineno, "non-increasing index")
            feats.append((idx, val))
            prev = idx
        n_features = max(n_features, prev)
        rows.append((label, tuple(feats)))
    return SparseDataset(tuple(rows), n_features)


def read_libsvm(path) -> SparseDataset:
    with open(path, "rb") as fh:
        return parse_libsvm(fh)


def write_libsvm(ds: SparseDataset) -> str:
    """Serialize with repr-exact floats so parse(write(ds)) == ds."""
    out = io.StringIO()
    for label, feats in ds.rows:
        out.write(repr(label))
        for idx, val in feats:
            out.write(f" {idx}:{val!r}")
        out.write("\n")
    return out.getvalue()


def reshuffle(ds: SparseDataset, seed: int) -> SparseDataset:
    """Deterministic seeded row permutation; rows themselves are unchanged."""
    perm = np.random.default_rng(seed).permutation(ds.n_rows)
    return SparseDataset(tuple(ds.rows[i] for i in perm), ds.n_features)


def scale_max_abs(ds: SparseDataset) -> SparseDataset:
    """Divide each feature column by its max |value|; all-zero columns stay."""
    peak = np.zeros(ds.n_features)
    for _, feats in ds.rows:
        for idx, val in feats:
            peak[idx - 1] = max(peak[idx - 1], abs(val))
    scale = np.where(peak > 0, peak, 1.0)
    rows = tuple(
        (label, tuple((idx, val / scale[idx - 1]) for idx, val in feats))
        for label, feats in ds.rows
    )
    return SparseDataset(rows, ds.n_features)


def synthetic_least_squares(n_rows: int, n_features: int, *, density: float = 0.1,
                            planted_scale: float = 1.0, label_noise: float = 0.0,
                            tail: float = 0.0, seed: int = 0) -> SparseDataset:
    """Sparse regression rows a_j with labels planted_scale*(a_j'u) + noise.

    u is a fixed unit vector, so planted_scale sets the distance from the
    zero initializer to the signal. label_noise near zero gives a
    near-interpolation instance (gradient dispersion vanishes at the optimum);
    label_noise ~ 1 buries the signal under a noise floor. tail > 0 rescales
    whole rows (values and label together) by lognormal factors with unit
    second moment: the objective's Hessian is unchanged in expectation while
    the gradient dispersion grows like exp(4 tail^2), which is what makes
    per-sample noise, rather than curvature, the binding constraint on the
    step size.
    """
    if n_rows < 1 or n_features < 1:
        raise ValueError("need at least one row and one feature")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    if tail < 0:
        raise ValueError("tail must be nonnegative")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(n_features)
    u *= planted_scale / np.linalg.norm(u)
    rows = []
    for _ in range(n_rows):
        k = max(1, int(rng.binomial(n_features, density)))
        cols = np.sort(rng.choice(n_features, size=k, replace=False))
        vals = rng.standard_normal(k)
        label = float(vals @ u[cols]) + label_noise * float(rng.standard_normal())
        if tail > 0.0:
            s = float(np.exp(tail * rng.standard_normal() - tail * tail))
            vals = vals * s
            label *= s
        rows.append((label, tuple((int(c) + 1, float(v)) for c, v in zip(cols, vals))))
    return SparseDataset(tuple(rows), n_features)


def build_objective(ds: SparseDataset, model: str):
    """'ls' -> least squares on raw labels; 'lr' -> logistic with sign labels."""
    if ds.n_rows < 1 or ds.n_features < 1:
        raise ValueError("dataset is empty")
    if model == "ls":
        return LeastSquares(ds.to_csr(), ds.labels())
    if model == "lr":
        return LogisticRegression(ds.to_csr(), ds.labels())
    raise ValueError(f"unknown model {model!r} (expected 'ls' or 'lr')")


def normalize_objective(raw: float, f0: float, f_star: float) -> float:
    """Affine map sending f0 to 1 and f_star to 0."""
    if not f0 > f_star:
        raise ValueError("need f0 > f_star to normalize")
    return (raw - f_star) / (f0 - f_star)


def _config_lines(config) -> list[str]:
    if not config:
        return []
    return [f"# {key} = {config[key]}" for key in config]


def write_table(header: str, rows, *, config=None) -> str:
    """CSV text: `# key = value` config lines, a header, then the rows."""
    lines = _config_lines(config)
    lines.append(header)
    for row in rows:
        lines.append(",".join(str(cell) for cell in row))
    return "\n".join(lines) + "\n"


def read_table(text: str) -> tuple[str, list[list[str]], dict]:
    """Inverse of write_table: (header, raw string cells, config dict)."""
    config: dict[str, str] = {}
    header = None
    rows: list[list[str]] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            config[key.strip()] = value.strip()
        elif header is None:
            header = line
        else:
            rows.append(line.split(","))
    if header is None:
        raise ValueError("no header line found")
    return header, rows, config


def write_trace_csv(records, *, config=None) -> str:
    rows = [
        (r.iteration, repr(r.objective), repr(r.worker_min), repr(r.worker_max),
         r.avg_events, repr(r.elapsed_ms))
        for r in records
    ]
    return write_table(TRACE_HEADER, rows, config=config)


def read_trace_csv(text: str) -> tuple[list[RunRecord], dict]:
    header, rows, config = read_table(text)
    if header != TRACE_HEADER:
        raise ValueError(f"unexpected trace header {header!r}")
    records = [
        RunRecord(int(a), float(b), float(c), float(d), int(e), float(f))
        for a, b, c, d, e, f in rows
    ]
    return records, config


@dataclass(frozen=True)
class EnvelopeRow:
    dataset: str
    model: str
    sigma2: float
    beta2: float
    dist0_sq: float
    rho: float


def write_envelope_report(rows, *, config=None) -> str:
    cells = [
        (r.dataset, r.model, repr(r.sigma2), repr(r.beta2), repr(r.dist0_sq),
         repr(r.rho))
        for r in rows
    ]
    return write_table(ENVELOPE_HEADER, cells, config=config)


def read_envelope_report(text: str) -> tuple[list[EnvelopeRow], dict]:
    header, rows, config = read_table(text)
    if header != ENVELOPE_HEADER:
        raise ValueError(f"unexpected envelope header {header!r}")
    return [
        EnvelopeRow(a, b, float(c), float(d), float(e), float(f))
        for a, b, c, d, e, f in rows
    ], config


def envelope_report_text(row: EnvelopeRow, extra=None) -> str:
    """Flat key-value block for terminal output."""
    items = {
        "dataset": row.dataset,
        "model": row.model,
        "sigma2": row.sigma2,
        "beta2": row.beta2,
        "dist0_sq": row.dist0_sq,
        "rho": row.rho,
    }
    if extra:
        items.update(extra)
    return "\n".join(f"{k} = {v}" for k, v in items.items()) + "\n"


@dataclass(frozen=True)
class ExperimentRecord:
    """One trace point of one run in a schedule-comparison grid."""

    schedule: str
    seed: int
    iteration: int
    normalized_objective: float
    alpha: float
    d: float


def save_text(path, text: str) -> None:
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
