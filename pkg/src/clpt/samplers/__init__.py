"""Samplers of (near-)optimal protocols and their diagnostics."""
from .descent import SampleEnsemble, q_bb, q_continuous, q_stderr, stochastic_descent
from .diagnostics import (covariance_spectrum, deformation_scan, mean_run_distance,
                          protocol_distance, run_distance, symmetry_defect)
from .landscapes import CumulantLandscape, ExactLandscape, ExpansionLandscape, make_landscape
from .langevin import BatchedChain, LMCConfig, LMCResult, lmc_run, lmc_step, relaxation_toy_model
