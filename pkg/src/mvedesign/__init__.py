"""Synthetic polycrystal volume elements, texture descriptors, and
space-filling training-set designs for micromechanical surrogates."""

__version__ = "0.1.0"

from .design import (
    Design,
    DesignDiagnostics,
    MaximinSelector,
    MaxProSelector,
    RandomSelector,
    TwinSelector,
    design_diagnostics,
    energy_distance,
    make_selector,
)
from .elasticity import (
    StressField,
    cubic_stiffness,
    field_summary,
    rotate_stiffness,
    taylor_stress_field,
)
from .embedding import (
    TripletEmbedding,
    TripletSampler,
    embed,
    sample_triplet,
    triplet_gradient,
    triplet_loss,
)
from .evaluation import (
    KNNSurrogate,
    SplitPlan,
    evaluate_design,
    improvement_report,
    knn_predict,
    split_pool,
)
from .features import (
    ClassicDescriptor,
    FeatureMatrix,
    FeatureNormalizer,
    SubvolumeStatistics,
    classic_descriptor,
    distance_matrix,
    load_features,
    normalize_features,
    save_features,
    subvolume_statistics,
)
from .microstructure import (
    MVE,
    CorpusSpec,
    crop_subvolume,
    generate_corpus,
    generate_mve,
    load_mve,
    save_mve,
)
from .texture import (
    FiberTexture,
    PoleDensity,
    UniformTexture,
    euler_to_rotation,
    gsh_basis,
    gsh_coefficients,
    pole_density,
    rotation_to_euler,
    sample_orientation,
    sample_orientations,
)

__all__ = [name for name in dir() if not name.startswith("_")]
