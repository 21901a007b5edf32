"""Hybrid high-order discretization of generalized Navier-Stokes flows with
power-law viscosity and power-like convection on 2D polytopal meshes."""
from .forms import FluidLaws
from .hho import BrokenPressure, HHOSpace, HybridVelocity, interpolate, norm_eps, project_pressure
from .laws import CarreauYasuda, LaplaceConvection, condition_report
from .mesh import Mesh, build_cartesian, build_triangular, read_mesh, validate, write_mesh
from .solver import PicardConfig, SolveReport, picard_solve
from .verify import ConvergenceConfig, ExactSolution, compute_errors, run_convergence, source_term

__all__ = [
    "BrokenPressure", "CarreauYasuda", "ConvergenceConfig", "ExactSolution", "FluidLaws", "HHOSpace",
    "HybridVelocity", "LaplaceConvection", "Mesh", "PicardConfig", "SolveReport", "build_cartesian",
    "build_triangular", "compute_errors", "condition_report", "interpolate", "norm_eps", "picard_solve",
    "project_pressure", "read_mesh", "run_convergence", "source_term", "validate", "write_mesh",
]
