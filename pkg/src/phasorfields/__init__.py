"""Time-of-flight radiance fields: phasor sensor model, voxel fields,
differentiable rendering, joint field/pose fitting, and an analytic
scene simulator for ground-truth experiments."""

from .cameras import Camera, Intrinsics, Pose, Ray, generate_ray, look_at
from .fields import (DynamicGridField, FieldSample, RadianceFieldSet,
                     StaticGridField, load_checkpoint, save_checkpoint)
from .metrics import depth_mse, psnr
from .pfm import read_pfm, write_pfm
from .renderer import RenderOutput, render_image, render_rays, stratified_samples
from .sim import Box, Motion, Plane, Scene, Sphere, capture_frame, trace_first_hit
from .dataset import Capture, Frame, ToFDataset, load_dataset, write_dataset
from .tof import (QUAD_PHASE_OFFSETS, SPEED_OF_LIGHT, CalibrationError,
                  TemporalResponse, ToFModel, amplitude, combine_quad,
                  estimate_zero_phase_offset, importance_weight, phase,
                  phasor_to_depth, quad_from_phasor, simulate_quad_exposures,
                  unwrap_depth)
from .training import (GradientCheck, PoseParams, RayBatch, TrainConfig,
                       TrainResult, align_pose_sets, batch_loss, gradient_report,
                       gradients, lambda_at, loss, pose_errors, train)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
