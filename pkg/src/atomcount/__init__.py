"""Real-time atom counting in a high-finesse cavity: simulation and inference."""
from .analysis import (BandSet, Histogram1D, Histogram2D, PopulationCurves, find_bands,
                       histogram_2d, histogram_amplitudes, population_curves)
from .detection import (DetectionConfig, Trace, filter_trace, render_levels,
                        sample_and_detect)
from .fit import (DeathModel, FitResult, build_initial_distribution, death_propagate,
                  fit_gamma, solve_poisson_mu)
from .gillespie import (EventTrajectory, InitialDistribution, RateModel, batch_simulate,
                        occupancy_fractions, simulate_trajectory)
from .physics import (CavityParams, ManifoldModel, cooperativity, coupling_at,
                      critical_numbers, intensity_level, plateau_prediction,
                      steady_state_distribution)

__version__ = "0.1.0"
