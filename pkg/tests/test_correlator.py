import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bunchlidar import correlator as co
from bunchlidar.photonsim import EventStream


def stream(times, duration_s=None, channel=0):
    times = np.asarray(sorted(times), dtype=np.int64)
    if duration_s is None:
        duration_s = (float(times[-1]) if times.size else 0.0) / 1e12 + 1e-9
    return EventStream(channel, times, duration_s)


def random_pair(rng, max_events=2000, span=100_000):
    n_a, n_b = (int(10 ** rng.uniform(0, math.log10(max_events))) for _ in range(2))
    a = rng.integers(0, span, n_a)
    b = rng.integers(0, span, n_b)
    # force ties and exact window-edge differences
    if n_a and n_b:
        b[: n_b // 10] = a[rng.integers(0, n_a, n_b // 10)]
    return np.sort(a), np.sort(b)


def random_config(rng):
    width = int(rng.integers(1, 64))
    n_bins = int(rng.integers(1, 64))
    tau_min = int(rng.integers(-2000, 2000))
    return co.CorrelationConfig(width, tau_min, tau_min + width * n_bins)


class TestConfigValidation:
    def test_window_must_be_multiple_of_width(self):
        with pytest.raises(co.CorrelationError):
            co.CorrelationConfig(40, 0, 100)

    def test_width_positive(self):
        with pytest.raises(co.CorrelationError):
            co.CorrelationConfig(0, 0, 100)

    def test_empty_window_rejected(self):
        with pytest.raises(co.CorrelationError):
            co.CorrelationConfig(10, 50, 50)

    def test_bin_cap(self):
        with pytest.raises(co.CorrelationError):
            co.CorrelationConfig(1, 0, 2**24 + 1)


class TestCrossCorrelate:
    def test_hand_enumerated(self):
        a = stream([0, 10_000])
        b = stream([2_000])
        config = co.CorrelationConfig(1_000, -5_000, 5_000)
        hist = co.cross_correlate(a, b, config)
        expected = np.zeros(10, dtype=np.int64)
        expected[7] = 1  # 2 ns - 0 lands in [2,3) ns
        assert np.array_equal(hist.counts, expected)

    def test_unsorted_rejected(self):
        bad = EventStream.__new__(EventStream)
        object.__setattr__(bad, "channel", 0)
        object.__setattr__(bad, "times", np.array([5, 1], dtype=np.int64))
        object.__setattr__(bad, "duration_s", 1e-9)
        object.__setattr__(bad, "origin", "simulated")
        with pytest.raises(co.CorrelationError):
            co.cross_correlate(bad, stream([1]), co.CorrelationConfig(1, 0, 4))

    def test_poisson_coincidence_rate(self):
        rng = np.random.default_rng(8)
        duration = 1e-3
        r1, r2 = 2e6, 3e6
        a = stream(rng.integers(0, int(duration * 1e12), int(r1 * duration)), duration)
        b = stream(rng.integers(0, int(duration * 1e12), int(r2 * duration)), duration)
        config = co.CorrelationConfig(10_000, -100_000, 100_000)
        hist = co.cross_correlate(a, b, config)
        expected = r1 * r2 * 10e-9 * duration
        assert np.all(np.abs(hist.counts - expected) < 5 * math.sqrt(expected))

    @given(st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=60, deadline=None)
    def test_oracle_equality(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_pair(rng)
        config = random_config(rng)
        got = co.cross_correlate(stream(a), stream(b), config).counts
        want = co.cross_correlate_bruteforce(a, b, config)
        assert np.array_equal(got, want)

    @given(st.integers(min_value=0, max_value=2**31), st.integers(min_value=1, max_value=200_000))
    @settings(max_examples=40, deadline=None)
    def test_chunked_bit_identical(self, seed, chunk):
        rng = np.random.default_rng(seed)
        a, b = random_pair(rng)
        config = random_config(rng)
        whole = co.cross_correlate(stream(a), stream(b), config).counts
        chunked = co.cross_correlate(stream(a), stream(b), config, chunk_ticks=chunk).counts
        assert np.array_equal(whole, chunked)

    @given(st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=40, deadline=None)
    def test_time_reversal(self, seed):
        # discrete form of the reversal symmetry: half-open bins map exactly
        # onto the one-tick-shifted reversed window
        rng = np.random.default_rng(seed)
        a, b = random_pair(rng, max_events=400)
        width = int(rng.integers(1, 40))
        half_bins = int(rng.integers(1, 30))
        window = width * half_bins
        forward = co.cross_correlate(
            stream(a), stream(b), co.CorrelationConfig(width, -window, window)
        ).counts
        backward = co.cross_correlate(
            stream(b), stream(a), co.CorrelationConfig(width, -window + 1, window + 1)
        ).counts
        assert np.array_equal(forward, backward[::-1])


class TestAutocorrelate:
    def test_excludes_self_pairs_keeps_simultaneous(self):
        a = stream([100, 100, 200])
        config = co.CorrelationConfig(50, 0, 200)
        hist = co.autocorrelate(a, config)
        # pairs (j>i): (100,100) at 0, (100,200) twice at 100
        assert hist.counts.tolist() == [1, 0, 2, 0]

    @given(st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=40, deadline=None)
    def test_oracle_equality(self, seed):
        rng = np.random.default_rng(seed)
        a, _ = random_pair(rng, max_events=600)
        width = int(rng.integers(1, 40))
        n_bins = int(rng.integers(1, 40))
        config = co.CorrelationConfig(width, 0, width * n_bins)
        got = co.autocorrelate(stream(a), config).counts
        want = co.cross_correlate_bruteforce(a, a, config, exclude_same_index=True)
        assert np.array_equal(got, want)


class TestMerge:
    def _hist(self, counts, n_a=10, n_b=20, duration=10**9):
        config = co.CorrelationConfig(10, 0, 10 * len(counts))
        return co.CorrelationHistogram(
            config, np.asarray(counts, dtype=np.int64), n_a, n_b, duration
        )

    def test_zero_is_identity(self):
        h = self._hist([1, 2, 3])
        z = self._hist([0, 0, 0], n_a=0, n_b=0, duration=0)
        merged = co.merge_histograms(h, z)
        assert np.array_equal(merged.counts, h.counts)
        assert merged.n_a == h.n_a and merged.duration_ticks == h.duration_ticks

    def test_commutative(self):
        h1, h2 = self._hist([1, 2, 3]), self._hist([4, 0, 1], n_a=3, n_b=7)
        m12, m21 = co.merge_histograms(h1, h2), co.merge_histograms(h2, h1)
        assert np.array_equal(m12.counts, m21.counts)
        assert (m12.n_a, m12.n_b, m12.duration_ticks) == (m21.n_a, m21.n_b, m21.duration_ticks)

    def test_config_mismatch_rejected(self):
        h1 = self._hist([1, 2, 3])
        h2 = co.CorrelationHistogram(
            co.CorrelationConfig(10, 10, 40), np.zeros(3, dtype=np.int64), 1, 1, 10
        )
        with pytest.raises(co.CorrelationError):
            co.merge_histograms(h1, h2)

    def test_segmented_equals_whole_via_chunking(self):
        rng = np.random.default_rng(123)
        n = 100_000
        span = 10**8
        a = stream(rng.integers(0, span, n), 1e-4)
        b = stream(rng.integers(0, span, n), 1e-4)
        config = co.CorrelationConfig(40, -4_000, 4_000)
        whole = co.cross_correlate(a, b, config).counts
        for chunk in (1_000, 77_777, 10**7):
            assert np.array_equal(
                co.cross_correlate(a, b, config, chunk_ticks=chunk).counts, whole
            )


class TestNormalize:
    def test_independent_poisson_is_flat_unity(self):
        rng = np.random.default_rng(21)
        duration = 1e-2
        n = int(1e6 * duration * 1e3)  # 1e6/s for 10 ms -> 1e4 events... keep rates high
        a = stream(rng.integers(0, int(duration * 1e12), 200_000), duration)
        b = stream(rng.integers(0, int(duration * 1e12), 200_000), duration)
        hist = co.cross_correlate(a, b, co.CorrelationConfig(100_000, -2_000_000, 2_000_000))
        curve = co.normalize_g2(hist)
        assert curve.g2.mean() == pytest.approx(1.0, abs=0.02)

    def test_zero_count_bins_get_unit_sigma(self):
        config = co.CorrelationConfig(10, 0, 30)
        hist = co.CorrelationHistogram(config, np.array([0, 4, 0]), 100, 100, 10**6)
        curve = co.normalize_g2(hist)
        scale = 10**6 / (100 * 100 * 10)
        assert curve.sigma[0] == pytest.approx(scale)
        assert curve.sigma[1] == pytest.approx(2 * scale)

    def test_empty_totals_rejected(self):
        config = co.CorrelationConfig(10, 0, 30)
        hist = co.CorrelationHistogram(config, np.zeros(3, dtype=np.int64), 0, 5, 10**6)
        with pytest.raises(co.CorrelationError):
            co.normalize_g2(hist)


class TestCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        a = stream(rng.integers(0, 10**9, 5_000), 1e-3)
        b = stream(rng.integers(0, 10**9, 5_000), 1e-3)
        hist = co.cross_correlate(a, b, co.CorrelationConfig(1_000, -50_000, 50_000))
        path = tmp_path / "hist.csv"
        co.write_histogram_csv(hist, path)
        first = path.read_bytes()
        assert first.startswith(b"tau_ps,counts,g2,sigma\n")
        assert b"\r" not in first
        tau, counts, g2, sigma = co.read_histogram_csv(path)
        curve = co.normalize_g2(hist)
        assert np.array_equal(counts, hist.counts)
        assert np.array_equal(g2, curve.g2)
        assert np.array_equal(sigma, curve.sigma)
        assert np.array_equal(tau, curve.tau_ps)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("tau,count\n1,2\n")
        with pytest.raises(co.CorrelationError):
            co.read_histogram_csv(path)
