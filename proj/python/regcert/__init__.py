"""Test-time registration uncertainty: perturb the source, re-register,
compose back and measure the spread of the composed predictions.

Arrays use numpy order: volumes are (z, y, x), displacement fields are
(z, y, x, 3) with (dx, dy, dz) components in voxels.
"""

from ._regcert import (
    IoError,
    NumericError,
    SampleError,
    error_map,
    estimate,
    estimate_uncertainty,
    evaluate,
    lemma_check,
    make_phantom,
    pearson,
    read_volume,
    risk_coverage,
    set_max_threads,
    simulate_gt,
    simulate_pair,
    spearman,
    verify_lemma,
    warp,
    write_volume,
)

__all__ = [
    "IoError",
    "NumericError",
    "SampleError",
    "error_map",
    "estimate",
    "estimate_uncertainty",
    "evaluate",
    "lemma_check",
    "make_phantom",
    "pearson",
    "read_volume",
    "risk_coverage",
    "set_max_threads",
    "simulate_gt",
    "simulate_pair",
    "spearman",
    "verify_lemma",
    "warp",
    "write_volume",
]
