"""Free-support Sinkhorn-divergence barycenters by Frank-Wolfe."""
from ._kernels import backend
from .analysis import KernelSpec, RateFit, Report, mmd
from .frank_wolfe import (
    BarycenterProblem,
    ContinuousMinimize,
    FWConfig,
    FWState,
    GridMinimize,
    HarmonicSchedule,
    barycenter,
    fw_step,
    minimize_phi,
    objective,
)
from .measure import (
    SQEUCLIDEAN,
    CostSpec,
    DiscreteMeasure,
    Domain,
    consolidate,
    cost_matrix,
    dirac,
    image_to_measure,
    mixture,
    new_measure,
    sample_empirical,
    total_variation,
)
from .sinkhorn import (
    PotentialFn,
    SinkhornConfig,
    SinkhornResult,
    grad_divergence,
    ot_eps,
    potential_extend,
    potential_gradient,
    sinkhorn_divergence,
    sinkhorn_knopp,
    sinkhorn_symmetric,
)
from .tasks import ClusterModel, PropagationGraph, compress, kmeans, propagate

__version__ = "0.1.0"
