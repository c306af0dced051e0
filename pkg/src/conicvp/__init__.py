"""Vanishing point detection with conic convolutions."""

from .conic import (ConicConv, ConicFrame, FrameSet, build_conic_frame, conic_conv_backward,
                    conic_conv_fast, conic_conv_reference)
from .evaluation import AACurve, angle_accuracy, match_predictions, summarize
from .geometry import (CameraIntrinsics, angular_distance, canonicalize, direction_to_vp,
                       vp_to_direction)
from .inference import SearchConfig, coarse_to_fine, derive_threshold_schedule, detect
from .network import ModelConfig, VpsModel, training_step
from .sphere_sampling import (SphericalCap, covering_angle, fibonacci_cap_sample,
                              sample_training_candidates)
from .synth import SceneSpec, generate_dataset, generate_scene

__version__ = "0.1.0"
