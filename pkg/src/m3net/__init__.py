"""Multi-view encoding, matching and fusion for few-shot fine-grained video recognition."""
from .config import TrainConfig, load_config, parse_config, serialize_config
from .encoding import (
    EncodedViews,
    EncoderSwitches,
    adaptive_pool_spatial,
    encode_episode,
    iece_forward,
    ifce_forward,
    ivce_forward,
    spatial_squeeze,
    stem_forward,
)
from .episode import (
    Dataset,
    Episode,
    EpisodeSpec,
    SyntheticBank,
    VideoClip,
    generate_synthetic_bank,
    render_synthetic_video,
    sample_episode,
)
from .formats import load_checkpoint, load_feature_archive, save_checkpoint, save_feature_archive
from .fusion import distances_to_probs, fuse, multiview_loss
from .matching import (
    BranchScores,
    category_matching,
    chamfer_directed,
    cm_reconstruct,
    cosine_distance_matrix,
    dtw_min_cost,
    instance_distance,
    instance_matching,
    task_matching,
)
from .model import ModelParams
from .training import (
    backward_episode,
    evaluate,
    forward_episode,
    grad_check,
    load_splits,
    lr_at,
    sgd_step,
    train,
)

__version__ = "0.1.0"
