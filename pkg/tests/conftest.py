import pytest

from atomcount.detection import DetectionConfig, detect_trajectory
from atomcount.gillespie import InitialDistribution, RateModel, batch_simulate, derive_seed
from atomcount.physics import CavityParams

I1 = CavityParams().i1_over_i0


def make_batch(n_traces, init, t_span, gamma_loss=8.5, seed=0, noise_rms=0.18):
    rates = RateModel(gamma_10=1e5, y=0.5, Gamma_loss=gamma_loss, i1_over_i0=I1)
    trajs = batch_simulate(rates, init, t_span, n_traces, seed)
    cfg = DetectionConfig(noise_rms=noise_rms)
    traces = [detect_trajectory(t, I1, cfg, derive_seed(seed, i, 1)) for i, t in enumerate(trajs)]
    return trajs, traces


@pytest.fixture(scope="session")
def decay_batch():
    """200 traces, Poisson(5.2) loading, Gamma = 8.5/s, 0.6 s long."""
    return make_batch(200, InitialDistribution.poisson(5.2), (0.034, 0.634), seed=7)


_acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_report():
    return _acceptance_lines


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
