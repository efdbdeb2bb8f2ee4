"""Density-evolution simulation and predictive-switching control of bursty
gene regulatory networks, with an L1-contraction validation harness."""

__version__ = "0.1.0"

from .grid import (  # noqa: F401
    DensityGrid,
    DomainSpec,
    kl_divergence,
    l1_distance,
    marginal,
    normalize_by_max,
    total_mass,
)
from .network import (  # noqa: F401
    GeneParams,
    GrnParams,
    burst_density,
    inducer_scaling,
    modulated_repression,
    regulatory_probability,
)
from .solver import FixedInputPropagator, StepConfig, propagate, step  # noqa: F401
from .controller import (  # noqa: F401
    BimodalRegionsCost,
    ControlTrace,
    MarginalTargetsCost,
    PointTargetCost,
    PscSession,
    SwitchingPlan,
    build_config_matrix,
    compute_saturation,
    evaluate_cost,
    plan_from_params,
    run_fixed_input,
    run_psc,
)
from .accelerator import (  # noqa: F401
    FeatureExtractor,
    MlpAccelerator,
    accelerated_window,
    propose,
    run_accelerated_psc,
)
from .contraction import (  # noqa: F401
    SsaConfig,
    fit_decay_rate,
    replay_profile,
    ssa_simulate,
)
from .training import Dataset, collect_samples, generate_dataset, train  # noqa: F401
