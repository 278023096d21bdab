from .clusters import ConditionClusterModel, assign_cluster, assign_clusters, fit_condition_clusters
from .features import (
    ClusterNormalizer,
    FeatureSelection,
    UnseenClusterError,
    apply_normalize,
    fit_normalizers,
    select_features,
)
from .preprocessor import (
    ConditionAwarePreprocessor,
    PreprocessModel,
    ProcessedTrajectory,
    fit_preprocess_model,
)
from .wavelet import (
    WaveletConfig,
    estimate_noise_sigma,
    soft_threshold,
    universal_threshold,
    wavelet_denoise,
)
