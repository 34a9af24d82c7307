"""Procedural tool scenes with task-oriented grasp annotations."""

from .dataset import Dataset, DatasetConfig, SceneEntry, generate_scene, make_dataset, sample_catalog
from .scene import Placement, SceneRecord, annotate_grasps, compose_scene, make_background
from .splits import SPLIT_TYPES, SceneUnits, SplitResult, build_splits
from .tools import (
    all_tasks,
    HEAD_SHAPES,
    ToolCategory,
    ToolInstance,
    default_categories,
    is_handle_color,
    part_masks,
    render_instance,
    sample_instance,
)
