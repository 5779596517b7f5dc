from .model import (
    KeypointSet,
    Transporter,
    detect_keypoints,
    gaussian_heatmap,
    grid_coords,
    image_to_tensor,
    spatial_softmax,
    transport,
)
from .train import (
    PerceptionTrainConfig,
    UnusableDatasetError,
    detect_episode_keypoints,
    keypoint_center_distance,
    load_frame_array,
    load_perception,
    save_perception,
    train_perception,
)

__all__ = [
    "KeypointSet",
    "PerceptionTrainConfig",
    "Transporter",
    "UnusableDatasetError",
    "detect_episode_keypoints",
    "detect_keypoints",
    "gaussian_heatmap",
    "grid_coords",
    "image_to_tensor",
    "keypoint_center_distance",
    "load_frame_array",
    "load_perception",
    "save_perception",
    "spatial_softmax",
    "train_perception",
]
