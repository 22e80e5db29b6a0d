"""Travel-time, kernel and plasmonic-particle toolkit for photoacoustic inversion."""
from .backend import BACKEND
from .errors import (ConfigError, ConvergenceError, DetectionError, MaskedPointError,
                     NanopatError, NumericalError, PoleError)
from .media import (Box, Grid3, LorentzParams, Nanoparticle, Phantom, lorentz_permittivity,
                    reference_phantom)
from .eikonal import solve_travel_time, trace_geodesic
from .kernel import KernelCoefficients, build_kernel, green_eval
from .forward import ForwardConfig, MeasurementSet, p_star, synthesize_measurements
from .reconstruct import ReconstructionReport, run_pipeline

__version__ = "0.1.0"
