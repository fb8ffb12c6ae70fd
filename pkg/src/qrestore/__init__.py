"""Restoring bipartite pure states from one subsystem with a verifier oracle."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.0.0"

from .hilbert import (
    DensityMatrix,
    PureState,
    SchmidtDecomposition,
    bell_state,
    figure1_state,
    fidelity,
    partial_trace,
    random_pure_state,
    schmidt,
    tensor,
)
from .oracle import CostModel, VerifierOracle, f_map
from .restoration import (
    RestorationCapError,
    clone_subsystem,
    discard_subsystem,
    expected_iterations_analytic,
    expected_iterations_linear_system,
    restore,
    trajectory,
)
from .tomography import Method, estimate_all
from .povm import PovmSpec, build_dilation, estimate_povm, trine_povm
from .applications import forge, mint
