"""seisstate: unsupervised environmental state characterization from BLRMS trends.

Windows multi-sensor band-limited RMS channels, clusters the windows with
seeded k-means++, names the clusters against operator thresholds, and
correlates the discovered states with glitch / lock-loss catalogs.
"""

__version__ = "0.1.0"

from . import errors
from .clustering import (
    ClusterModel,
    LloydResult,
    ValidationReport,
    calinski_harabasz,
    davies_bouldin,
    fit_kmeans,
    kmeanspp_seed,
    lloyd,
    predict,
    select_k,
    silhouette,
)
from .dsp import BandpassSpec, FilterCoefficients, bandpass_blrms, blrms_trend, design_bandpass, filtfilt, response_magnitude
from .evaluation import Event, RateReport, adjusted_rand_index, correlate, load_catalog
from .features import (
    FeatureLayout,
    FeatureSpec,
    Standardizer,
    WindowFeatures,
    WindowingConfig,
    extract_features,
    fit_standardizer,
    segment_windows,
    windowed_features,
)
from .labeling import StateLabel, StateTimeline, ThresholdRule, build_timeline, label_cluster, threshold_baseline
from .simulate import GroundTruth, ScenarioSpec, generate
from .timeseries import (
    ANTHROPOGENIC_BAND,
    Band,
    ChannelBatch,
    ChannelId,
    ChannelSeries,
    EARTHQUAKE_BAND,
    MICROSEISM_BAND,
    TimeSegmentSet,
    align_batch,
    load_trend_file,
    mask_to_segments,
)

__all__ = [name for name in dir() if not name.startswith("_")]
