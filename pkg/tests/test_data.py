import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from etnet.data import (
    AnomalySpec,
    DataFormatError,
    EventSpec,
    NoiseSpec,
    TimeSeries,
    anomaly_test_set,
    apply_noise,
    compose_events,
    contaminate,
    default_anomaly,
    gen_wave,
    htc_event,
    inject_anomaly,
    load_window_ids,
    load_windows,
    mtc_event,
    read_table,
    rebin,
    resample,
    stretch,
    wave_copies,
    window_series,
    write_truth,
    write_windows,
)


def test_square_wave_is_two_level():
    assert set(gen_wave("square", 100, 20).values) <= {-1.0, 1.0}


def test_sine_starts_at_zero():
    assert gen_wave("sine", 10, 5, phase=0.0).values[0] == 0.0


def test_triangle_peaks_with_sine():
    tri = gen_wave("triangle", 40, 40).values
    assert tri[10] == pytest.approx(1.0) and tri[30] == pytest.approx(-1.0) and tri[0] == pytest.approx(0.0)


def test_awgn_level():
    clean = gen_wave("sine", 1000, 40).values
    noisy = gen_wave("sine", 1000, 40, awgn_sigma=0.1, seed=3).values
    assert np.std(noisy - clean) == pytest.approx(0.1, rel=0.1)


def test_unknown_wave_kind():
    with pytest.raises(ValueError):
        gen_wave("sawtooth", 10, 5)


@given(st.integers(0, 10_000))
def test_generators_are_seed_deterministic(seed):
    a = wave_copies(2, 30, 10, 0.1, np.random.default_rng(seed))
    b = wave_copies(2, 30, 10, 0.1, np.random.default_rng(seed))
    np.testing.assert_array_equal(a.windows, b.windows)
    c = anomaly_test_set(3, 2, 30, 10, 0.1, np.random.default_rng(seed))
    d = anomaly_test_set(3, 2, 30, 10, 0.1, np.random.default_rng(seed))
    np.testing.assert_array_equal(c.windows, d.windows)


def test_wave_copies_layout_and_jitter():
    data = wave_copies(4, 20, 10, 0.0, np.random.default_rng(0), phase_jitter=0.0)
    assert data.windows.shape == (12, 20)
    assert list(data.labels) == [0] * 4 + [1] * 4 + [2] * 4
    np.testing.assert_array_equal(data.windows[0], gen_wave("sine", 20, 10).values)
    assert wave_copies(0, 20, 10, 0.1, np.random.default_rng(0)).windows.shape == (0, 20)


def test_single_event_is_its_indicator():
    e = np.array([0.0, 1.0, 0.0, 1.0])
    np.testing.assert_array_equal(compose_events([EventSpec(e, np.ones(4))]).values, e)


def test_disjoint_events_union():
    a = EventSpec([1, 0, 0, 0], np.full(4, 2.0))
    b = EventSpec([0, 0, 1, 1], np.full(4, 5.0))
    np.testing.assert_array_equal(compose_events([a, b]).values, [2.0, 0.0, 5.0, 5.0])


def test_event_length_mismatch():
    with pytest.raises(ValueError):
        EventSpec([1, 0], [1.0])
    with pytest.raises(ValueError):
        compose_events([EventSpec([1, 0], [1, 1]), EventSpec([1, 0, 0], [1, 1, 1])])


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4))
def test_compose_is_linear(seed, ka, kb):
    rng = np.random.default_rng(seed)
    make = lambda: EventSpec(rng.integers(0, 2, size=12), rng.uniform(0, 5, size=12))
    a, b = [make() for _ in range(ka)], [make() for _ in range(kb)]
    np.testing.assert_allclose(compose_events(a + b).values, compose_events(a).values + compose_events(b).values)


def test_mtc_and_htc_shapes():
    mtc = mtc_event(10, 3, size=2.0, offset=1)
    assert list(np.flatnonzero(mtc.indicator)) == [1, 4, 7] and mtc.kind == "MTC"
    htc = htc_event(10, 2, 3)
    assert list(np.flatnonzero(htc.indicator)) == [2, 3, 4] and htc.kind == "HTC"
    x = compose_events([mtc, htc]).values
    assert x[4] == 22.0 and x[0] == 0.0


def test_type3_full_length_is_all_zero():
    x = gen_wave("sine", 50, 10)
    assert np.all(inject_anomaly(x, AnomalySpec(3, 0.0, 0, 50)).values == 0.0)


def test_type4_changes_one_sample_by_magnitude():
    x = gen_wave("sine", 50, 10)
    y = inject_anomaly(x, AnomalySpec(4, 2.5, 7))
    diff = y.values - x.values
    assert np.count_nonzero(diff) == 1 and diff[7] == 2.5


def test_out_of_range_span():
    x = gen_wave("sine", 20, 10)
    with pytest.raises(ValueError):
        inject_anomaly(x, AnomalySpec(2, 1.0, 15, 10))
    with pytest.raises(ValueError):
        inject_anomaly(x, AnomalySpec(5, 1.0, 0, 1))


@given(st.integers(1, 4), st.integers(0, 10_000))
def test_injection_is_local(kind, seed):
    rng = np.random.default_rng(seed)
    x = gen_wave("triangle", 60, 12, awgn_sigma=0.1, seed=rng)
    spec = default_anomaly(kind, 60, rng)
    y = inject_anomaly(x, spec, rng).values
    outside = np.ones(60, dtype=bool)
    outside[spec.location : spec.location + spec.span] = False
    np.testing.assert_array_equal(y[outside], x.values[outside])
    if kind == 4:
        assert np.count_nonzero(y != x.values) == 1


def test_noise_examples():
    x = gen_wave("sine", 30, 10)
    np.testing.assert_array_equal(apply_noise(x, NoiseSpec(3, 0)).values, x.values)
    up = apply_noise(x, NoiseSpec(1, 2))
    assert len(up) == 59 and up.interval == 0.5
    np.testing.assert_allclose(up.values[::2], x.values)
    assert len(apply_noise(x, NoiseSpec(2, 3))) == 10
    np.testing.assert_array_equal(apply_noise(x, NoiseSpec(3, 4)).values, np.roll(x.values, 4))
    assert np.std(apply_noise(x, NoiseSpec(4, 0.5), seed=1).values - x.values) > 0.2


def test_noise_errors():
    x = gen_wave("sine", 30, 10)
    with pytest.raises(ValueError):
        apply_noise(x, NoiseSpec(2, 31))
    with pytest.raises(ValueError):
        apply_noise(x, NoiseSpec(1, 0.5))
    with pytest.raises(ValueError):
        apply_noise(x, NoiseSpec(7, 1))


def test_resample_identity_and_halving():
    x = TimeSeries(np.arange(11.0))
    np.testing.assert_array_equal(resample(x, 1.0).values, x.values)
    half = resample(x, 2.0)
    assert abs(len(half) - len(x) / 2) <= 1
    np.testing.assert_array_equal(half.values, [0, 2, 4, 6, 8, 10])


def test_rebin_means_and_partial_bins():
    x = TimeSeries([1.0, 3.0, 5.0, 7.0])
    np.testing.assert_array_equal(rebin(x, 2.0).values, [2.0, 6.0])
    # bins of 1.5 samples: [1, 0.5*3] and [0.5*3, 5] area-weighted
    np.testing.assert_allclose(rebin(x, 1.5).values, [(1 + 1.5) / 1.5, (1.5 + 5) / 1.5])
    np.testing.assert_array_equal(rebin(x, 1.0).values, x.values)
    with pytest.raises(ValueError):
        rebin(x, 0.5)
    with pytest.raises(ValueError):
        rebin(x, 5.0)


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40), st.floats(1.0, 4.0))
def test_rebin_preserves_mass(values, ratio):
    assume(len(values) >= ratio)
    x = TimeSeries(values)
    out = rebin(x, ratio)
    covered = len(out) * ratio
    i = int(np.floor(covered + 1e-9))
    want = sum(values[:i]) + (covered - i) * (values[i] if i < len(values) else 0.0)
    assert sum(out.values) * ratio == pytest.approx(want, abs=1e-6)


def test_stretch():
    np.testing.assert_array_equal(stretch([0.0, 2.0], 3), [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(stretch([4.0], 3), [4.0, 4.0, 4.0])
    v = np.array([1.0, 2.0])
    out = stretch(v, 2)
    out[0] = 9.0
    assert v[0] == 1.0


def test_contaminate_fraction():
    data = wave_copies(10, 30, 10, 0.1, np.random.default_rng(0))
    dirty = contaminate(data, 0.1, np.random.default_rng(1))
    assert dirty.labels.sum() == 3
    changed = np.any(dirty.windows != data.windows, axis=1)
    assert set(np.flatnonzero(changed)) <= set(np.flatnonzero(dirty.labels))


def _trace(path, minutes):
    lines = ["series_id,index,value"] + [f"a,{i},{i % 7}" for i in range(minutes)]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_trace_windowing(tmp_path):
    assert len(load_windows(_trace(tmp_path / "a.csv", 360), 120)) == 3
    assert load_windows(_trace(tmp_path / "b.csv", 100), 120) == []


def test_header_only_file(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("series_id,index,value\n")
    assert load_windows(p) == []
    p.write_text("")
    assert load_windows(p) == []


def test_trace_rows_sorted_by_index(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("series_id,index,value\na,1,5\na,0,3\n")
    np.testing.assert_array_equal(load_windows(p, 2)[0].values, [3.0, 5.0])


@pytest.mark.parametrize(
    "body, line",
    [
        ("series_id,index,value\na,0,1\na,1\n", 3),
        ("series_id,index,value\na,0,x\n", 2),
        ("# etnet-format: 1\nwindow_id,x0\nw,1\nw,abc\n", 4),
        ("# etnet-format: 1\nwindow_id,x0\nw,\n", 3),
        ("foo,bar\n1,2\n", 1),
        ("# etnet-format: 9\nwindow_id,x0\n", 1),
    ],
)
def test_malformed_rows_report_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataFormatError, match=f":{line}:"):
        load_windows(p)


@given(st.integers(1, 5), st.integers(1, 6))
def test_windowing_partitions(count, size):
    x = np.arange(count * size, dtype=float)
    parts = window_series(x, size)
    np.testing.assert_array_equal(np.concatenate([w.values for w in parts]), x)


def test_window_round_trip(tmp_path):
    p = tmp_path / "w.csv"
    windows = np.random.default_rng(0).normal(size=(3, 5))
    write_windows(p, windows, ["a", "b", "c"])
    assert p.read_text().startswith("# etnet-format: 1\n")
    np.testing.assert_array_equal(np.array([w.values for w in load_windows(p)]), windows)
    assert load_window_ids(p) == ["a", "b", "c"]
    t = tmp_path / "t.csv"
    write_truth(t, ["a", "b"], [0, 1], ["sine", "type2"])
    assert read_table(t) == [{"window_id": "a", "label": "0", "kind": "sine"}, {"window_id": "b", "label": "1", "kind": "type2"}]
