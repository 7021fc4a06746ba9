"""Mixed-precision quantization search for small neural networks.

The package trains a network once while a REINFORCE controller assigns a
numeric format (integer or minifloat) to every compute layer, balancing task
quality against a bit-operations cost model.  Submodules:

- ``formats``: format descriptors and search spaces
- ``quantize``: the quantizer itself plus error metrics
- ``costmodel``: bit-operation costs, manifests, reward shaping
- ``controller``: softmax policies and the REINFORCE update
- ``network``: a small numpy CNN/MLP stack with quantized training
- ``data``: IDX files, synthetic blobs, batch planning
- ``search``: the one-shot search loop and serving helpers
- ``analysis``: switching/clipping studies and correlation tools
"""

from .arch import ArchChoice, arch_for
from .controller import (
    AdamParams,
    ControllerState,
    LayerPolicy,
    advantage_update,
    beta_schedule,
    make_controller,
    model_entropy,
    policy_entropy,
    policy_gradient,
    reinforce_step,
    sample_architecture,
    softmax,
)
from .costmodel import (
    GBOPS,
    LayerSpec,
    ModelManifest,
    RewardParams,
    layer_cost,
    load_manifest,
    manifest_from_dict,
    model_cost,
    reward,
    uniform_cost,
)
from .data import BatchPlan, Dataset, batches, load_idx, synth_blobs, validation_set, write_idx
from .errors import (
    AnalysisError,
    ConfigError,
    DataError,
    DomainError,
    FitError,
    FliqsError,
    FormatSpecError,
    ManifestError,
    NumericalError,
    SearchAbort,
    ThresholdError,
)
from .formats import (
    BF16,
    SEARCH_SPACES,
    NumericFormat,
    float_format,
    int_format,
    max_representable,
    parse_format,
    representable_values,
    resolve_format,
    resolve_search_space,
    total_bitwidth,
)
from .network import (
    Network,
    QuantPhase,
    ThresholdTable,
    accuracy,
    backward,
    build_model,
    cross_entropy,
    forward,
    load_weights,
    network_manifest,
    profile_thresholds,
    save_weights,
)
from .quantize import bf16_round, quant_error, quantize, switching_error
from .search import (
    ControllerConfig,
    SearchConfig,
    SearchResult,
    TrainerConfig,
    evaluate_accuracy,
    load_served,
    run_search,
    run_static,
    run_uniform,
    search_config_from_dict,
    search_config_to_dict,
    serve_config,
    served_accuracy_from_files,
    write_trace_csv,
)
from .analysis import (
    ExpFit,
    SynthSpec,
    clipping_sweep,
    entropy_switch_correlation,
    fit_exponential,
    shared_threshold,
    spearman,
    switching_sweep,
    synth_tensor,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
