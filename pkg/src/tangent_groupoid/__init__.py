"""Tangent groupoid quantization on coordinate charts."""

__version__ = "0.1.0"

from .charts import get_chart, euclidean, sphere_polar, conformal_1d
from .errors import (
    ComposabilityError,
    ConvergenceError,
    DomainError,
    GeodesicExcursionError,
    InjectivityError,
    PreconditionError,
    SamplingError,
    ShapeError,
    TangentGroupoidError,
    UndefinedRatioError,
    UnsupportedError,
)
from .geometry import (
    MetricChart,
    TangentPoint,
    christoffel,
    exp_map,
    geodesic_flow,
    jacobi_fields,
    jacobian_J,
    log_map,
)
from .groupoid import (
    Boundary,
    Interior,
    boundary_limit,
    compose,
    inverse,
    phi_chart,
    phi_inverse,
    range_,
    source,
    triangle_defect,
)
from .transforms import (
    FiberFunctionGrid,
    KernelGrid,
    SymbolGrid,
    UniformAxis,
    fiber_convolution,
    fiber_fourier,
    fiber_fourier_inverse,
    sample_symbol,
)
from .quantization import (
    ANTISTANDARD,
    MOYAL,
    STANDARD,
    OrderingFunction,
    QuantizationScheme,
    dequantize,
    flat_closed_form_kernel,
    ordering_of_scheme,
    quantize,
    reality_defect,
)
from .operators import KernelOperator, commutator, identity, op_norm, op_product, op_trace
from .harness import (
    ConvergenceReport,
    ExperimentConfig,
    axiom_defects,
    default_config,
    fit_rate,
    poisson_bracket,
    run_suite,
)
