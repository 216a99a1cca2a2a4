"""Grid-based sound event localization and detection toolkit."""

__version__ = "0.1.0"

from .errors import SeldGridError
from .features import AudioBuffer, StftConfig, feature_pipeline, intensity_doa
from .gradcheck import fd_grad, fd_grad_local, max_relative_error
from .grid_fit import FitConfig, ablate, fit_logits, make_fixture
from .label_codec import (
    ClassMap,
    EventRecord,
    LabelTensor,
    PredictionGrid,
    decode_predictions,
    encode_frames,
    make_event,
    read_metadata_csv,
    write_metadata_csv,
)
from .losses import grad_logits, grad_total, total_loss, transform_targets
from .metrics import MetricConfig, compute_metrics, match_events, seld_score
from .scene_sim import PRNG_NAME, CorruptionSpec, SceneSpec, corrupt, generate_scene, render_foa
from .sphere_grid import (
    CellIndex,
    Direction,
    GridSpec,
    angular_distance,
    angular_distance_deg,
    build_grid,
    cell_neighbors,
    cell_to_direction,
    direction_to_cell,
    roundtrip_bound,
)
