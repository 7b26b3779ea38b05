"""Length-aware trajectory GAN toolkit: data, sampling, metrics, theory checks, models and training."""

from .errors import (
    ArgumentError,
    CapacityError,
    ConfigError,
    IntegrityError,
    LastrajError,
    NumericalAbort,
    ParseError,
    ValidationError,
)
from .metrics import derived_report, js_divergence, ks_distance, tv_discrete, w1_empirical_1d
from .sampling import BatchSampler, LengthBuckets, SamplerConfig, build_buckets
from .trajectory import (
    DerivedKind,
    Step,
    Trajectory,
    TrajectoryDataset,
    evaluate_derived,
    load_dataset,
    traj_semimetric,
    write_dataset,
)

__version__ = "0.1.0"
