"""Exact checks of the derived-variable Wasserstein bounds on small finite spaces."""

from .certify import (
    BoundInputs,
    Check,
    bucket_ipm_sup,
    certification_coupling,
    certify_theorem1,
    check_bucket_ipm,
    check_length_lower_bound,
    check_length_tail,
    check_matched_step,
    check_mixture_decomposition,
    check_nullspace,
    run_sweep,
    theorem1_bound,
    within_bucket_w1,
)
from .ot import exact_w1_discrete_line, exact_w1_general, hungarian, w1_by_matching, w1_on_line
from .spaces import FiniteTrajectorySpace, random_space
