# src/layout 组合式三维布局：基元、几何内核、文件读写与编辑
from .editing import DeltaPose, insert_instance, remove_instance, transform_instance
from .layout_io import instance_from_dict, layout_from_dict, layout_to_dict, load_layout, save_layout
from .primitives import (LayoutInstance, Pose, SceneLayout, SemanticClass, ShapeKind,
                         point_in_instance, points_in_instance, ray_instance_intervals,
                         ray_intervals_batch)
