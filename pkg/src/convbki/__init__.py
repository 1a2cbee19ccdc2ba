"""Semantic voxel mapping with convolutional Bayesian kernel inference."""

from .bki import (ConvBKI, InputVolume, QueryResult, SemanticPointCloud, brute_force_update,
                  query, update, voxelize)
from .dynamic import DynamicField, propagate_dynamic, trilinear_sample
from .grid import (DirichletStats, DirichletVoxelGrid, GridConfig, argmax_class, stats,
                   voxel_centroid, world_to_voxel)
from .kernels import (FilterBank, KernelMode, KernelModel, build_filter, compound_kernel,
                      sparse_kernel, sparse_kernel_dl)
from .local_map import LocalMap, Pose, relative_to_initial, shift_grid, voxel_shift
from .metrics import EvalReport, evaluate
from .pipeline import Mapper, RunOptions, run_frames, run_sequence
from .training import TrainConfig, TrainSample, backward, forward, nll_loss, train

__all__ = [
    "ConvBKI", "DirichletStats", "DirichletVoxelGrid", "DynamicField", "EvalReport",
    "FilterBank", "GridConfig", "InputVolume", "KernelMode", "KernelModel", "LocalMap",
    "Mapper", "Pose", "QueryResult", "RunOptions", "SemanticPointCloud", "TrainConfig",
    "TrainSample", "argmax_class", "backward", "brute_force_update", "build_filter",
    "compound_kernel", "evaluate", "forward", "nll_loss", "propagate_dynamic", "query",
    "relative_to_initial", "run_frames", "run_sequence", "shift_grid", "sparse_kernel",
    "sparse_kernel_dl", "stats", "train", "trilinear_sample", "update", "voxel_centroid",
    "voxel_shift", "voxelize", "world_to_voxel",
]

__version__ = "0.1.0"
