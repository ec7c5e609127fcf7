"""Discovery, blind-spot and error quantities, plus the Azuma-Hoeffding
discovery bound.

Indexing: a trace holds snapshots ``0..n``; ``delta_s[t-1]`` is
``|S_t| - |S_{t-1}|`` and the running mean at ``n`` averages the ``n``
differences available after ``n + 1`` snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import InvariantViolation, SchemaError

TRACE_COLUMNS = (
    "run", "iteration", "seen_count", "blind_spot", "delta_s", "delta_b",
    "avg_discovery", "avg_blind_decrease", "error_e", "bound_d05", "bound_d01",
)
DEFAULT_DELTAS = (0.05, 0.01)


@dataclass(frozen=True)
class BoundParams:
    delta: float
    rec_len: int
    n: int

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.rec_len < 1:
            raise ValueError("rec_len must be >= 1")


def azuma_bound(params: BoundParams) -> float:
    """``ln(1/delta) * rec_len**2 / (2 n)``."""
    return math.log(1.0 / params.delta) * params.rec_len ** 2 / (2.0 * params.n)


def bound_curve(delta: float, rec_len: int, iterations) -> np.ndarray:
    return np.array([azuma_bound(BoundParams(delta, rec_len, int(n))) for n in iterations])


def blind_spot(seen: set[int], rel: set[int]) -> int:
    return len(set(rel) - set(seen))


def error_e(seen: set[int], rel: set[int], num_groups: int | None = None) -> int:
    """Seen groups that are not relevant."""
    if num_groups is not None and any(g >= num_groups or g < 0 for g in seen):
        raise ValueError("group id outside [0, num_groups)")
    return len(set(seen) - set(rel))


def running_mean(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.cumsum(x) / np.arange(1, x.size + 1) if x.size else x


def discovery_series(seen_counts):
    """First differences of ``|S_t|`` and their running means."""
    s = np.asarray(seen_counts, dtype=np.float64)
    d = np.diff(s)
    if (d < 0).any():
        t = int(np.argmax(d < 0)) + 1
        raise InvariantViolation(f"seen count decreases at iteration {t}: filtration broken")
    return d, running_mean(d)


def blind_series(blind_counts):
    """``|(|B_{t-1}| - |B_t|)|`` and running means."""
    b = np.asarray(blind_counts, dtype=np.float64)
    d = np.abs(b[:-1] - b[1:])
    return d, running_mean(d)


def blind_spot_gap(delta_b, delta_s, errors):
    """Slack of ``mean|dB| <= mean dS + (e(0) - e(n)) / n`` at every ``n``.

    ``errors`` holds ``e(0..n)``. Returns ``None`` when ``e`` is not
    non-increasing (the premise fails), otherwise ``n * (rhs - lhs)`` for
    each ``n``. Both sides are multiplied through by ``n`` so that integer
    counts compare exactly; every entry must be ``>= 0``.
    """
    e = np.asarray(errors)
    if (np.diff(e) > 0).any():
        return None
    lhs = np.cumsum(delta_b)
    rhs = np.cumsum(delta_s) + (e[0] - e[1:])
    return rhs - lhs


def format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace_csv(rows, stream, truncated: str | None = None) -> int:
    """Write trace rows under :data:`TRACE_COLUMNS`; returns the row count.

    A ``truncated`` reason is appended as a trailing ``# truncated:`` line.
    """
    stream.write(",".join(TRACE_COLUMNS) + "\n")
    count = 0
    for row in rows:
        stream.write(",".join(format_value(v) for v in row) + "\n")
        count += 1
    if truncated:
        stream.write(f"# truncated: {truncated}\n")
    return count


def read_trace_csv(stream, name: str = "<trace>") -> dict[str, np.ndarray]:
    """Parse a trace CSV into column arrays; ``#`` lines are skipped."""
    lines = [ln.strip() for ln in stream if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise SchemaError(f"{name}: empty trace")
    header = lines[0].split(",")
    for pos, (got, want) in enumerate(zip(header, TRACE_COLUMNS)):
        if got != want:
            raise SchemaError(f"{name}: column {pos + 1} is {got!r}, expected {want!r}")
    if len(header) != len(TRACE_COLUMNS):
        extra = header[len(TRACE_COLUMNS):] or [f"<missing {TRACE_COLUMNS[len(header)]}>"]
        raise SchemaError(f"{name}: unexpected column {extra[0]!r}")
    try:
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]], dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"{name}: non-numeric value ({exc})") from None
    if data.size == 0:
        data = data.reshape(0, len(TRACE_COLUMNS))
    if data.shape[1] != len(TRACE_COLUMNS):
        raise SchemaError(f"{name}: ragged rows")
    return {c: data[:, k] for k, c in enumerate(TRACE_COLUMNS)}


AGGREGATED_METRICS = ("seen_count", "blind_spot", "delta_s", "delta_b",
                      "avg_discovery", "avg_blind_decrease", "error_e")


def infer_rec_len(trace: dict[str, np.ndarray]) -> int:
    """Recover ``|Rec|`` from the delta = 0.05 bound column."""
    n = trace["iteration"]
    est = np.sqrt(trace["bound_d05"] * 2 * n / math.log(20.0))
    return int(round(float(np.median(est))))


@dataclass
class Aggregate:
    iterations: np.ndarray
    n_samples: np.ndarray
    mean: dict
    half_width: dict
    bounds: dict
    violation: dict          # delta -> fraction over the final quarter
    rec_len: int


def aggregate_traces(traces: list[dict[str, np.ndarray]], deltas=DEFAULT_DELTAS,
                     confidence: float = 0.95) -> Aggregate:
    """Cross-run mean and t-based confidence half-width per iteration.

    Each ``(trace, run)`` pair is one sample; with a single sample the
    half-width is 0.
    """
    if not traces:
        raise ValueError("need at least one trace")
    rec_lens = {infer_rec_len(t) for t in traces if t["iteration"].size}
    if len(rec_lens) != 1:
        raise ValueError(f"traces disagree on the recommendation length: {sorted(rec_lens)}")
    rec_len = rec_lens.pop()
    its = np.unique(np.concatenate([t["iteration"] for t in traces])).astype(int)
    mean = {m: np.empty(its.size) for m in AGGREGATED_METRICS}
    hw = {m: np.empty(its.size) for m in AGGREGATED_METRICS}
    counts = np.empty(its.size, dtype=int)
    for k, it in enumerate(its):
        for m in AGGREGATED_METRICS:
            vals = np.concatenate([t[m][t["iteration"] == it] for t in traces])
            mean[m][k] = vals.mean()
            if vals.size > 1:
                sd = vals.std(ddof=1)
                hw[m][k] = sps.t.ppf(0.5 + confidence / 2, vals.size - 1) * sd / math.sqrt(vals.size)
            else:
                hw[m][k] = 0.0
            counts[k] = vals.size
    bounds = {d: bound_curve(d, rec_len, its) for d in deltas}
    last = its.max()
    tail = max(1, last // 4)
    violation = {}
    for d in deltas:
        hits = total = 0
        for t in traces:
            sel = t["iteration"] > last - tail
            b = bound_curve(d, rec_len, t["iteration"][sel].astype(int))
            hits += int((t["avg_discovery"][sel] > b).sum())
            total += int(sel.sum())
        violation[d] = hits / total if total else 0.0
    return Aggregate(its, counts, mean, hw, bounds, violation, rec_len)


def write_aggregate_csv(agg: Aggregate, stream) -> None:
    cols = ["iteration", "n_runs"]
    for m in AGGREGATED_METRICS:
        cols += [f"{m}_mean", f"{m}_ci95"]
    cols += [f"bound_d{d:g}" for d in agg.bounds]
    stream.write(",".join(cols) + "\n")
    for k, it in enumerate(agg.iterations):
        vals = [int(it), int(agg.n_samples[k])]
        for m in AGGREGATED_METRICS:
            vals += [agg.mean[m][k], agg.half_width[m][k]]
        vals += [agg.bounds[d][k] for d in agg.bounds]
        stream.write(",".join(format_value(v) for v in vals) + "\n")


def summary_text(agg: Aggregate) -> str:
    last = len(agg.iterations) - 1
    lines = [
        f"iterations: {int(agg.iterations[0])}..{int(agg.iterations[-1])}",
        f"runs per iteration: {int(agg.n_samples[last])}",
        f"recommendation length: {agg.rec_len}",
        f"final mean |S_t|: {agg.mean['seen_count'][last]:.4f} +/- {agg.half_width['seen_count'][last]:.4f}",
        f"final mean |B_t|: {agg.mean['blind_spot'][last]:.4f} +/- {agg.half_width['blind_spot'][last]:.4f}",
        f"final mean avg discovery: {agg.mean['avg_discovery'][last]:.6f}"
        f" +/- {agg.half_width['avg_discovery'][last]:.6f}",
    ]
    for d, b in agg.bounds.items():
        lines.append(f"bound (delta={d:g}) at final iteration: {b[last]:.6f}; "
                     f"violation fraction over final quarter: {agg.violation[d]:.4f}")
    return "\n".join(lines) + "\n"
