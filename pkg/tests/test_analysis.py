import numpy as np
import pytest

from atomcount.analysis import (BandError, BandSet, Histogram1D, PopulationCurves, find_bands,
                                histogram_2d, histogram_amplitudes, population_curves,
                                read_bands, read_histogram, read_populations, write_bands,
                                write_histogram, write_histogram_2d, write_populations)
from atomcount.detection import Trace
from atomcount.gillespie import InitialDistribution
from atomcount.physics import ManifoldModel, plateau_prediction

from conftest import make_batch


def flat(value, n=1000, t0=0.0, filtered=True):
    return Trace(1e-4, t0, np.full(n, value), {"filters": [1000.0, 100.0] if filtered else []})


def gaussian_hist(centers_weights, sigma=0.03, bins=100):
    edges = np.linspace(0, 1.2, bins + 1)
    x = 0.5 * (edges[1:] + edges[:-1])
    counts = sum(w * np.exp(-0.5 * ((x - c) / sigma) ** 2) for c, w in centers_weights)
    return Histogram1D(edges, np.round(1e5 * counts).astype(np.int64))


def test_constant_trace_histogram():
    h = histogram_amplitudes([flat(0.4)], (0.0, 0.1), bins=10, amp_range=(0.0, 1.0))
    assert h.counts.sum() == 1000
    assert h.counts[4] == 1000


def test_window_and_errors():
    tr = flat(0.4)
    h = histogram_amplitudes([tr], (0.05, 0.1), bins=10)
    assert h.counts.sum() == 500
    with pytest.raises(ValueError):
        histogram_amplitudes([tr], (0.2, 0.3))
    with pytest.raises(ValueError):
        histogram_amplitudes([], (0.0, 0.1))
    with pytest.raises(ValueError):
        histogram_amplitudes([tr], (0.0, 0.1), bins=5)


def test_out_of_range_samples_land_in_edge_bins():
    tr = Trace(1e-4, 0.0, np.array([-0.3, 1.5, 0.5]), {"filters": [100.0]})
    h = histogram_amplitudes([tr], (0.0, 1.0), bins=12)
    assert h.counts.sum() == 3 and h.counts[0] == 1 and h.counts[-1] == 1


def test_bimodal_equal_masses():
    h = histogram_amplitudes([flat(0.2), flat(0.8)], (0.0, 0.1), bins=10, amp_range=(0.0, 1.0))
    assert h.counts[2] == h.counts[8] == 1000


def test_digital_filter_applied_once():
    raw = Trace(1e-4, 0.0, np.r_[np.zeros(500), np.ones(500)])
    filtered = histogram_amplitudes([raw], (0.0, 0.1), bins=10, amp_range=(0.0, 1.0))
    unfiltered = histogram_amplitudes([raw], (0.0, 0.1), bins=10, amp_range=(0.0, 1.0),
                                      bandwidth=None)
    assert filtered.counts[0] > unfiltered.counts[0]
    pre = Trace(1e-4, 0.0, raw.samples, {"filters": [100.0]})
    assert np.array_equal(histogram_amplitudes([pre], (0.0, 0.1), 10, (0.0, 1.0)).counts,
                          unfiltered.counts)


def test_trimodal_fixture_labels():
    h = gaussian_hist([(1.0, 1.0), (0.667, 0.5), (0.4, 0.3)])
    bands = find_bands(h, n_resolved=2)
    pos = [p for p, _ in bands.peaks]
    assert [n for _, n in bands.peaks] == [0, 1, 2]
    assert np.allclose(pos, [1.0, 0.667, 0.4], atol=h.width)
    b = bands.boundaries
    assert 0.667 < b[0] < 1.0 and 0.4 < b[1] < 0.667 and 0 < b[2] < 0.4
    assert list(bands.band_of(np.array([1.0, 0.667, 0.4, 0.05]))) == [0, 1, 2, 3]


def test_single_peak():
    bands = find_bands(gaussian_hist([(0.9, 1.0)]), n_resolved=0)
    assert len(bands.boundaries) == 1 and 0 < bands.boundaries[0] < 0.9
    assert bands.n_bands == 2


def test_too_few_peaks():
    with pytest.raises(BandError):
        find_bands(gaussian_hist([(0.9, 1.0)]), n_resolved=2)


def test_manual_boundaries_pass_through():
    h = gaussian_hist([(1.0, 1.0), (0.667, 0.5), (0.4, 0.3)])
    bands = find_bands(h, boundaries=[0.85, 0.55, 0.25])
    assert bands.boundaries == [0.85, 0.55, 0.25] and bands.manual
    assert [n for _, n in bands.peaks] == [0, 1, 2]


def test_bandset_invariants():
    with pytest.raises(ValueError):
        BandSet([], [0.5, 0.7, 0.2], 2)
    with pytest.raises(ValueError):
        BandSet([(0.3, 0)], [0.5, 0.4, 0.2], 2)
    with pytest.raises(ValueError):
        BandSet([], [0.5, 0.2], 2)


def test_2d_marginal_equals_1d():
    _, traces = make_batch(5, InitialDistribution.poisson(3.0), (0.0, 0.3), seed=3)
    window = (0.0, 0.3)
    h1 = histogram_amplitudes(traces, window)
    h2 = histogram_2d(traces, window, 100, 0.01)
    assert np.array_equal(h2.time_marginal().counts, h1.counts)
    assert h2.counts.shape == (100, 30)


def test_2d_constant_trace_single_row():
    h2 = histogram_2d([flat(0.4)], (0.0, 0.1), 10, 0.01, amp_range=(0.0, 1.0))
    assert np.count_nonzero(h2.counts.sum(axis=1)) == 1


def test_population_curves_constant():
    bands = BandSet([], [0.85, 0.55, 0.25], 2)
    curves = population_curves([flat(1.0), flat(0.95)], bands, 0.0, 0.01)
    assert np.all(curves.phi[0] == 1.0) and np.all(curves.phi[1:] == 0.0)
    assert np.allclose(curves.time_grid, 0.005 + 0.01 * np.arange(10))
    with pytest.raises(ValueError):
        population_curves([flat(1.0)], bands, 0.5)


def test_noise_free_plateaus_found_within_a_bin():
    traces = []
    for n in range(4):
        _, tr = make_batch(4, InitialDistribution.fixed(n), (0.0, 5.0), gamma_loss=0.0,
                           seed=n, noise_rms=0.0)
        traces += tr
    h = histogram_amplitudes(traces, (0.02, 5.0))
    bands = find_bands(h, n_resolved=2)
    model = ManifoldModel(0.5)
    for pos, n in bands.peaks:
        assert abs(pos - plateau_prediction(model, n)) <= h.width


def test_decay_batch_bands_and_populations(decay_batch):
    trajs, traces = decay_batch
    window = (0.034, 0.634)
    h = histogram_amplitudes(traces, window)
    bands = find_bands(h)
    pos = [p for p, _ in bands.peaks]
    assert pos == sorted(pos, reverse=True)
    curves = population_curves(traces, bands, 0.034)
    s = curves.phi.sum(axis=0)
    assert np.all((s >= 0.98) & (s <= 1.02))
    assert np.all((curves.phi >= 0) & (curves.phi <= 1))
    truth = np.array([[t.n_at(tc) for tc in curves.time_grid] for t in trajs])
    for n in range(3):
        assert np.abs((truth == n).mean(axis=0) - curves.phi[n]).max() <= 0.10
    assert np.abs((truth >= 3).mean(axis=0) - curves.phi[3]).max() <= 0.10


def test_higher_plateaus_come_later(decay_batch):
    _, traces = decay_batch
    h2 = histogram_2d(traces, (0.034, 0.634), 100, 0.01)
    bands = find_bands(h2.time_marginal())
    amp_centers = 0.5 * (h2.amplitude_edges[1:] + h2.amplitude_edges[:-1])
    t_centers = 0.5 * (h2.time_edges[1:] + h2.time_edges[:-1])
    band = bands.band_of(amp_centers)
    mean_t = [(h2.counts[band == b].sum(axis=0) * t_centers).sum() / h2.counts[band == b].sum()
              for b in range(4)]
    assert mean_t[0] > mean_t[1] > mean_t[2] > mean_t[3]


def test_no_decay_control():
    init = InitialDistribution.poisson(5.2)
    trajs, traces = make_batch(300, init, (0.034, 0.1), gamma_loss=0.0, seed=11)
    # too little data per plateau for peak finding; midpoints between model plateaus
    bands = BandSet([], [0.83, 0.53, 0.27], 2)
    curves = population_curves(traces, bands, 0.034)
    p = np.asarray(init.probs)
    expected = np.r_[p[:3], p[3:].sum()]
    m = len(traces)
    assert np.all(np.abs(curves.phi[:, 0] - expected) < 3 * np.sqrt(expected * (1 - expected) / m) + 2 / m)


def test_csv_round_trips(tmp_path):
    h = gaussian_hist([(1.0, 1.0), (0.667, 0.5), (0.4, 0.3)])
    write_histogram(h, tmp_path / "h.csv")
    back = read_histogram(tmp_path / "h.csv")
    assert np.array_equal(back.counts, h.counts) and np.allclose(back.bin_edges, h.bin_edges)
    bands = find_bands(h)
    write_bands(bands, tmp_path / "b.txt")
    back_bands = read_bands(tmp_path / "b.txt")
    assert np.allclose(back_bands.boundaries, bands.boundaries)
    assert [n for _, n in back_bands.peaks] == [n for _, n in bands.peaks]
    curves = PopulationCurves(np.array([0.039, 0.049]), np.array([[0.1, 0.2], [0.2, 0.2],
                                                                   [0.3, 0.2], [0.4, 0.4]]),
                              0.034, [0.8, 0.5, 0.2])
    write_populations(curves, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[2] == "t,phi0,phi1,phi2,phi_ge3"
    back = read_populations(tmp_path / "p.csv")
    assert np.allclose(back.phi, curves.phi) and back.t0 == 0.034 and back.boundaries == [0.8, 0.5, 0.2]
    h2 = histogram_2d([flat(0.4)], (0.0, 0.1), 10, 0.05, amp_range=(0.0, 1.0))
    write_histogram_2d(h2, tmp_path / "h2.csv")
    rows = (tmp_path / "h2.csv").read_text().splitlines()
    assert len(rows) == 1 + 10 * 2


def test_malformed_population_file(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("t,phi0,phi1,phi2,phi_ge3\n0.1,0.2,x,0.3,0.5\n")
    with pytest.raises(ValueError, match=":2"):
        read_populations(p)
