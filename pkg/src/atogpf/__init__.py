"""Particle filtering with ancestry-tree topology clustering.

A sequential Monte Carlo library whose diversity maintenance strategies plug
into one filter loop, a 2D robotics simulator with symmetric and asymmetric
worlds, and a PDR replay harness for indoor map matching.
"""

from .filter import (FilterCollapseError, Models, Particle, ParticleFilter,
                     ParticleSet, ResampleOutcome, StateSE2, StepRecord,
                     effective_sample_size, normalize_weights,
                     systematic_resample, wrap_angle)
from .rng import RngStream
from .strategies import (StrategyConfig, atog_cds_adjust, atog_fs_adjust,
                         cds_adjust, drsir_resample, fds_adjust, fitness_share,
                         make_strategy)
from .tree import (AncestryTree, ClusterAssignment, StaleHandleError,
                   TreeInvariantError, TreeMetrics, init_tree,
                   sample_tax_cluster)

__all__ = [
    "AncestryTree", "ClusterAssignment", "FilterCollapseError", "Models",
    "Particle", "ParticleFilter", "ParticleSet", "ResampleOutcome", "RngStream",
    "StaleHandleError", "StateSE2", "StepRecord", "StrategyConfig",
    "TreeInvariantError", "TreeMetrics", "atog_cds_adjust", "atog_fs_adjust",
    "cds_adjust", "drsir_resample", "effective_sample_size", "fds_adjust",
    "fitness_share", "init_tree", "make_strategy", "normalize_weights",
    "sample_tax_cluster", "systematic_resample", "wrap_angle",
]
