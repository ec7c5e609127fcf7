import io
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recloop.errors import InvariantViolation, SchemaError
from recloop.metrics import (TRACE_COLUMNS, BoundParams, aggregate_traces, azuma_bound, blind_series,
                             blind_spot, blind_spot_gap, discovery_series, error_e, read_trace_csv,
                             summary_text, write_aggregate_csv, write_trace_csv)

groups = st.sets(st.integers(0, 15), max_size=16)


def test_blind_spot_examples():
    assert blind_spot({1, 2}, {1, 2}) == 0
    assert blind_spot(set(), {1, 4, 5}) == 3
    assert blind_spot({0, 1}, {1, 2, 3}) == 2


def test_error_examples():
    assert error_e({1}, {1, 2}) == 0
    assert error_e({0, 3}, set()) == 2
    assert error_e({0, 1, 2}, {2}) == 2
    with pytest.raises(ValueError):
        error_e({5}, set(), num_groups=3)


@given(groups, groups)
def test_partition_identity(seen, rel):
    assert blind_spot(seen, rel) + len(seen & rel) == len(rel)


def test_discovery_examples():
    ds, avg = discovery_series([4, 4, 4])
    assert ds.tolist() == [0, 0] and avg.tolist() == [0, 0]
    ds, avg = discovery_series([3, 5, 5, 8])
    assert ds.tolist() == [2, 0, 3]
    np.testing.assert_allclose(avg, [2, 1, 5 / 3])
    ds, avg = discovery_series([7])
    assert ds.size == 0 and avg.size == 0
    with pytest.raises(InvariantViolation):
        discovery_series([3, 2])


def test_blind_examples():
    assert blind_series([5, 5, 5])[0].tolist() == [0, 0]
    assert blind_series([10, 7, 7, 6])[0].tolist() == [3, 0, 1]
    d, _ = blind_series([2, 0, 0, 0])
    assert d[1:].tolist() == [0, 0]


def test_azuma_examples():
    assert azuma_bound(BoundParams(1.0, 10, 7)) == 0.0
    ref = mpmath.log(mpmath.mpf(20)) * 100 / 200
    assert azuma_bound(BoundParams(0.05, 10, 100)) == pytest.approx(float(ref), abs=1e-12)
    assert azuma_bound(BoundParams(0.05, 10, 100)) == pytest.approx(1.49787, abs=1e-5)
    assert azuma_bound(BoundParams(0.01, 4, 40)) == azuma_bound(BoundParams(0.01, 4, 20)) / 2


@pytest.mark.parametrize("delta", [0.0, -0.1, 1.5])
def test_bound_rejects_delta(delta):
    with pytest.raises(ValueError):
        BoundParams(delta, 10, 1)


@settings(max_examples=200)
@given(st.floats(0.001, 0.99), st.integers(1, 50), st.integers(1, 1000))
def test_bound_monotonicity(delta, rec_len, n):
    b = azuma_bound(BoundParams(delta, rec_len, n))
    assert azuma_bound(BoundParams(delta, rec_len, n + 1)) < b
    assert azuma_bound(BoundParams(min(1.0, delta * 1.01), rec_len, n)) < b
    assert azuma_bound(BoundParams(delta, rec_len + 1, n)) > b


def test_blind_spot_gap_cases():
    # seen grows, error constant -> blind-spot drop equals relevant discoveries
    gap = blind_spot_gap(np.array([1, 0]), np.array([2, 0]), np.array([1, 1, 1]))
    assert gap.tolist() == [1, 1]
    assert blind_spot_gap(np.array([0]), np.array([1]), np.array([0, 1])) is None


@settings(max_examples=200)
@given(st.integers(1, 12), st.data())
def test_blind_spot_inequality_holds_for_any_growing_seen_set(G, data):
    rel = data.draw(st.sets(st.integers(0, G - 1)))
    seen = [data.draw(st.sets(st.integers(0, G - 1)))]
    for _ in range(data.draw(st.integers(1, 6))):
        seen.append(seen[-1] | data.draw(st.sets(st.integers(0, G - 1), max_size=3)))
    s = np.array([len(x) for x in seen])
    b = np.array([blind_spot(x, rel) for x in seen])
    e = np.array([error_e(x, rel) for x in seen])
    gap = blind_spot_gap(np.abs(b[:-1] - b[1:]), np.diff(s), e)
    if gap is not None:  # e only ever grows here, so non-increasing means constant
        assert (gap >= 0).all()


def _rows(run, n, offset=0.0):
    for t in range(1, n + 1):
        yield (run, t, 3.0 + offset, 2.0, 0.5, 0.25, 1.0 / t, 0.5 / t, 1.0,
               azuma_bound(BoundParams(0.05, 10, t)), azuma_bound(BoundParams(0.01, 10, t)))


def _trace(rows, truncated=None):
    buf = io.StringIO()
    write_trace_csv(rows, buf, truncated)
    buf.seek(0)
    return buf


def test_trace_csv_round_trip():
    buf = _trace(list(_rows(0, 4)), truncated="run 1 diverged")
    text = buf.getvalue()
    assert text.splitlines()[0] == ",".join(TRACE_COLUMNS)
    assert text.rstrip().endswith("# truncated: run 1 diverged")
    tr = read_trace_csv(io.StringIO(text))
    assert tr["iteration"].tolist() == [1, 2, 3, 4]
    np.testing.assert_allclose(tr["avg_discovery"], [1, 1 / 2, 1 / 3, 1 / 4])


def test_schema_error_names_column():
    bad = io.StringIO(",".join(TRACE_COLUMNS).replace("delta_b", "delta_x") + "\n")
    with pytest.raises(SchemaError, match="delta_x"):
        read_trace_csv(bad, "bad.csv")
    with pytest.raises(SchemaError, match="extra"):
        read_trace_csv(io.StringIO(",".join(TRACE_COLUMNS) + ",extra\n"))


def test_aggregate_single_trace_equals_input():
    tr = read_trace_csv(_trace(list(_rows(0, 8))))
    agg = aggregate_traces([tr])
    assert agg.rec_len == 10
    np.testing.assert_allclose(agg.mean["avg_discovery"], tr["avg_discovery"])
    assert (agg.half_width["seen_count"] == 0).all()


def test_aggregate_identical_traces_zero_width():
    tr = read_trace_csv(_trace(list(_rows(0, 8)) + list(_rows(1, 8))))
    agg = aggregate_traces([tr, tr])
    assert (agg.n_samples == 4).all()
    assert np.abs(agg.half_width["avg_discovery"]).max() == 0
    assert agg.violation[0.05] == 0.0
    out = io.StringIO()
    write_aggregate_csv(agg, out)
    assert len(out.getvalue().splitlines()) == 9
    assert "violation fraction" in summary_text(agg)


def test_aggregate_half_width_matches_t_interval():
    runs = [list(_rows(r, 4, offset=float(r))) for r in range(3)]
    tr = read_trace_csv(_trace([row for rs in runs for row in rs]))
    agg = aggregate_traces([tr])
    vals = np.array([3.0, 4.0, 5.0])
    from scipy import stats

    expected = stats.t.ppf(0.975, 2) * vals.std(ddof=1) / math.sqrt(3)
    assert agg.half_width["seen_count"][0] == pytest.approx(expected)
