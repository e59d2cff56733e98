from . import exceptions
from .fusion import (
    FusionConfig,
    FusionPipeline,
    LossReport,
    Observations,
    RecurrentState,
    fuse_state,
    novel_state,
    reconstruct_state,
    replay_render,
)
from .geom import Camera, RigidTransform, Twist
from .metrics import MetricsRow, psnr
from .register import AlignmentResult, ICPConfig, RefineConfig
from .scene import GaussianPrimitive, GaussianScene, ObjectSubset
from .voxel import VoxelGrid
