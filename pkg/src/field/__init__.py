# src/field 可扩展哈希网格场景表示：哈希编码网格、背景/物体网格管理、天空模型与检查点
from .checkpoint import load_field, save_field
from .hash_grid import HashEncoding, HashGridConfig, NeuralGrid
from .scene_field import (Assignment, AssignmentKind, FieldConfig, GridAssignment, SceneField,
                          assign_point, encode, query, sky_color, spawn_stuff_grid)
from .sky import SkyModel, spherical_harmonics
