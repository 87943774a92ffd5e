"""Quantitative quasi-static elastography by intensity-based inversion.

Recovers piecewise-constant Lame parameters from an undeformed /
deformed image pair by minimizing a regularized intensity-matching
functional constrained by a plane linear-elasticity forward model.
"""

from .elasticity import (DisplacementField, ElasticModuli, ElasticityBVP,
                         MaterialField, SolverError, lame_from_moduli,
                         moduli_from_lame, solve_displacement)
from .harness import (ExperimentConfig, ExperimentReport, RunRecord,
                      config_from_toml, emit_report, run_noise_free_suite,
                      run_noise_sweep, synthesize)
from .iim import (IIMContext, objective, penalty, relative_error, residual)
from .imaging import (COMPOSITION, PUSH_FORWARD, Ellipse, NoiseSpec,
                      PhantomSpec, ScalarImage, add_relative_noise,
                      generate_phantom, read_pgm, warp_image, write_pgm)
from .mesh import Mesh, build_uniform_mesh
from .optimize import NMOptions, NMResult, nelder_mead

__version__ = "0.1.0"
