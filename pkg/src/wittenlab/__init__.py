"""Witten deformation toolkit: deformed Laplacians on flat tori, Morse complexes and
the comparison between their small eigenforms and unstable cells."""

from .errors import (BottomDegree, CellNotConverged, ClusterCardinalityChanged, ComputeError,
                     ConfigError, DegenerateCritical, DegreeMismatch, GapNotOpen, IoError,
                     NoCapture, NoConvergence, NonClosedForm, NonTransversal, ScanTooCoarse,
                     ShapeMismatch, SingularGram, SupportOverlap, TopDegree, WittenLabError)
from .forms import (DiscreteForm, Grid, WittenOperator, assemble_witten_laplacian,
                    codifferential, exterior_d, hodge_star, inner_product, interior_product,
                    lie_derivative, random_trig_form, wedge, witten_d)
from .manifold import (ClosedOneForm, CriticalPoint, SampleManifold, ScalarField,
                       count_by_index, euler_characteristic, find_critical_points, find_zeros,
                       make_field, parse_field)
from .morse import (MorseComplex, OrientationChoice, build_morse_complex,
                    check_morse_inequalities, cohomology, connecting_orbits, hopf_index_sum,
                    integer_rank, shoot)
from .oscillator import (OscillatorModel, OscillatorSpectrum, epsilon_shift, ground_state_form,
                         oscillator_spectrum)
from .spectra import (GapReport, SmallSubspace, SpectrumResult, chain_leakage, eigensolve,
                      gap_sweep, low_spectrum, small_count, small_subspace)
from .whs import (UnstableCell, build_cells, build_cutoff_quasimode, build_J_R,
                  int_chain_map_check, int_vector, integrate_over_unstable_cell,
                  scaling_matrix, whs_compare)

__version__ = "0.1.0"
