"""Multiscale bootstrap p-values: approximately unbiased and selective tests for the problem of regions."""

from .bootstrap_engine import (
    CountTable,
    DatasetMatrix,
    ScaleGrid,
    default_scale_grid,
    nonparametric_counts,
    parametric_counts,
    set_threads,
)
from .core_stats import (
    QuadratureRule,
    make_quadrature,
    noncentral_chisq_cdf,
    std_normal_upper,
    std_normal_upper_inv,
)
from .hclust import (
    ClusterId,
    Dendrogram,
    DistanceMatrix,
    average_linkage,
    clusters_of,
    distance,
    mixture_sim,
    multiscale_cluster_counts,
    pvclust_run,
)
from .pvalues import PValueReport, p_bp, p_et_si, p_sdbp, p_values_A, p_values_B, psi
from .region_oracle import (
    OracleConfig,
    RegionSpec,
    average_absolute_bias,
    exact_bootstrap_prob,
    exact_pvalue_pipeline,
    selection_probability,
    selective_rejection_probability,
    sphere_curve,
)
from .scaling_models import (
    DegenerateFit,
    FitResult,
    ModelSpec,
    ScalingLawFitter,
    eval_model,
    fit_mle,
    model_derivatives,
    select_model,
    taylor_extrapolate,
)

__version__ = "0.1.0"
