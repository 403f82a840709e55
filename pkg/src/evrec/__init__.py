"""Event-camera object recognition from raw AER streams.

The pipeline: adaptively segment an event stream on activity peaks,
accumulate each segment into leaky multiscale Gabor response maps, pool
and latency-code the responses into addressed spike trains, and classify
them with an unsupervised spiking layer trained by triplet STDP.
"""

from .events import (Event, EventStream, FormatError, SynthSpec, read_events,
                     synthesize, write_events)
from .segmentation import MsdConfig, MsdState, Segment, msd_update, segment_stream
from .features import (C1Maps, CodingParams, DegenerateCodingError, FeatureMaps,
                       GaborBank, GaborConfig, SpikePattern, c1_pool, encode,
                       fit_coding, gabor_kernel, n_fusion_addresses)
from .snn import Network, PresentationResult, SnnConfig, normalize_weights
from .recognition import (Dataset, DatasetItem, EvalReport, Model, Prediction,
                          assign_labels, classify_counts, evaluate,
                          labels_from_counts, load_model, predict,
                          rates_from_counts, save_model, stratified_split,
                          train)
from .analysis import (CcSummary, Histogram, orientation_cc, response_histogram,
                       scale_cc, spike_entropy)
from .config import RunConfig, derive_seed
from .pipeline import (RecordingFeatures, build_dataset, extract_c1,
                       load_recordings, recording_features,
                       run_split_experiment, train_on)

__version__ = "0.1.0"
