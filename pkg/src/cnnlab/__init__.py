"""cnnlab: layer-level CNN execution with heterogeneous device cost models.

The package splits into the network IR (`model_ir`), numeric kernels
(`compute_kernels`, `weights_io`), calibrated device models
(`device_models`), chain scheduling (`scheduler`), the cost-modeling
runtime (`runtime`), and the `cnnlab` command line (`cli`).
"""

from .errors import (
    CnnlabError,
    ModelError,
    ProfileError,
    ScheduleError,
    ShapeError,
    WeightsError,
)
from .model_ir import (
    ActivationKind,
    ConvSpec,
    Direction,
    FcMode,
    FcSpec,
    KernelShape,
    NetworkModel,
    NormSpec,
    Padding,
    PoolKind,
    PoolSpec,
    TensorShape,
    count_layer_flops,
    infer_conv_output_shape,
    infer_pool_output_shape,
    load_model,
    parse_model,
    render_model,
    validate_network,
)
from .compute_kernels import (
    ConvWeights,
    FcWeights,
    Tensor,
    conv2d_forward,
    conv2d_forward_gemm,
    dropout_inference,
    fc_backward,
    fc_forward,
    lrn_forward,
    pool_forward,
    softmax,
)
from .device_models import (
    ClassCost,
    DensityMetrics,
    DeviceProfile,
    LayerClass,
    LayerCostEstimate,
    Measurement,
    calibrate_profile,
    density_metrics,
    estimate_layer_cost,
    estimate_layer_energy,
    estimate_layer_time,
    load_device_profile,
    load_profile_file,
    mops_per_joule,
)
from .scheduler import (
    Objective,
    ObjectiveKind,
    Schedule,
    ScheduleCost,
    device_map,
    dp_schedule,
    enumerate_all_schedules,
    evaluate_schedule,
    make_schedule,
    objective_value,
    pareto_frontier,
)
from .runtime import (
    BufferSpace,
    ExecutionPlan,
    ProfileReport,
    build_execution_plan,
    execute,
    transfer_buffer,
)
from .weights_io import generate_weights, load_weights, save_weights

__version__ = "0.1.0"
