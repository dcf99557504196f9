"""Data-free neural network compression toolkit.

Pipeline stages: adaptive density hashing of weight values, output-wise
neuron merging, and input-wise layer splitting, plus the supporting error
bounds and expected-pruning analysis.
"""

from .model import (
    BatchNormStats,
    LayerSpec,
    NetworkGraph,
    NonFiniteError,
    ShapeError,
    Tensor4,
    count_distinct,
    count_flops,
    count_params,
    distinct_values,
    forward,
)
from .bundle import BundleError, load_bundle, load_dataset, save_bundle, save_dataset
from .hashing import (
    DegenerateLayerError,
    DensityEstimate,
    HashConfig,
    HashResult,
    OutOfSupportError,
    compression_ratio,
    default_bandwidth,
    extract_extrema,
    hash_layer,
    hash_network,
    hash_single_layer,
    kde_density,
    nms_maxima,
    uniform_quantize_int8,
)
from .bounds import (
    BoundUnavailableError,
    BoundViolationError,
    LayerBound,
    NetworkBound,
    analyze_network,
    bandwidth_bound,
    estimate_logit_norm,
    hashing_criterion,
    layer_error_bound,
    measure_divergence,
    network_bound,
    per_weight_bound,
    segment_mass_bound,
    tightness,
)
from .merge import (
    MergePlan,
    alpha_schedule,
    calibrate_alpha,
    merge_layer,
    merge_network,
    neuron_distances,
)
from .split import (
    SplitLayer,
    SplitNetwork,
    bell_number,
    op_count,
    partition_bruteforce,
    split_forward,
    split_layer,
    split_network,
)
from .birthday import (
    BirthdayConfig,
    BirthdayEstimate,
    empirical_ratio_curves,
    exact_expected_distinct,
    expected_distinct_uniform,
    expected_merge_ratio,
    expected_split_ratio,
    mc_expected_distinct,
    prob_distinct,
    sweep_expectations,
)

__version__ = "0.1.0"
