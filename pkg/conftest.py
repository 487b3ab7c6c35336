import sys
import os

# 获取项目根目录的绝对路径
project_root = os.path.dirname(os.path.abspath(__file__))
# 将项目根目录添加到sys.path的最前面
if project_root not in sys.path:
    sys.path.insert(0, project_root)

# conftest.py
from pathlib import Path

import numpy as np
import pytest
import torch

from src.common.logger import setup_logging
from src.field.hash_grid import HashGridConfig
from src.field.scene_field import FieldConfig, SceneField
from src.layout.layout_io import load_layout
from src.layout.primitives import (LayoutInstance, Pose, SceneLayout, SemanticClass, ShapeKind,
                                   points_in_instance)
from src.raster.camera import Camera, load_trajectory

SAMPLES_DIR = Path(project_root) / "samples"
CLASSES = (
    SemanticClass(0, "sky", (70, 130, 180)),
    SemanticClass(1, "road", (128, 64, 128)),
    SemanticClass(2, "building", (70, 70, 70)),
    SemanticClass(3, "car", (0, 0, 142)),
)
SKY_RGB = (0.55, 0.72, 0.92)


def make_instance(instance_id, class_id, center, size, yaw_deg=0.0, shape=ShapeKind.CUBOID, is_object=False):
    return LayoutInstance(instance_id, class_id, shape, Pose.from_yaw(yaw_deg, center, size), is_object)


class IndicatorField:
    """
    注入的指示密度场：布局实例内 σ = density，颜色取类别调色板；天空为常量色

    只实现渲染器需要的接口（query_samples / sky_color / dtype）
    """

    def __init__(self, layout: SceneLayout, density: float = 50.0, dtype=torch.float64):
        self.layout = layout
        self.density = density
        self.dtype = dtype

    def query_samples(self, layout, origins, directions, t_values, valid):
        rays, samples = t_values.shape
        ray_index = np.repeat(np.arange(rays), samples)
        points = origins[ray_index] + t_values.reshape(-1)[:, None] * directions[ray_index]
        sigma = np.zeros(points.shape[0])
        rgb = np.zeros((points.shape[0], 3))
        palette = layout.palette()
        for inst in reversed(layout.instances):
            inside = points_in_instance(points, inst) & valid.reshape(-1)
            sigma[inside] = self.density
            rgb[inside] = np.asarray(palette[inst.class_id]) / 255.0
        return (torch.from_numpy(sigma.reshape(rays, samples)).to(self.dtype),
                torch.from_numpy(rgb.reshape(rays, samples, 3)).to(self.dtype))

    def sky_color(self, directions):
        return torch.tensor(SKY_RGB, dtype=self.dtype).expand(directions.shape[0], 3)


@pytest.fixture(scope="session", autouse=True)
def quiet_logging():
    """测试期间只输出警告以上日志"""
    setup_logging("WARNING")


@pytest.fixture
def sample_layout():
    return load_layout(SAMPLES_DIR / "layout.json")


@pytest.fixture
def sample_cameras():
    return load_trajectory(SAMPLES_DIR / "trajectory.json")


@pytest.fixture
def street_layout():
    """道路平面 + 建筑（背景） + 汽车（物体）"""
    return SceneLayout(CLASSES, (
        make_instance(1, 1, (10.0, 0.0, 0.0), (60.0, 20.0, 0.2), shape=ShapeKind.PLANE),
        make_instance(2, 2, (15.0, 8.0, 4.0), (10.0, 6.0, 8.0)),
        make_instance(3, 3, (5.0, -2.0, 0.85), (4.0, 2.0, 1.5), is_object=True),
    ))


@pytest.fixture
def lone_object_layout():
    """空场景中的单个物体"""
    return SceneLayout(CLASSES, (make_instance(7, 3, (8.0, 0.0, 1.0), (2.0, 2.0, 2.0), is_object=True),))


@pytest.fixture
def layout_factory():
    def build(instances):
        return SceneLayout(CLASSES, tuple(instances))
    return build


@pytest.fixture
def instance_factory():
    return make_instance


@pytest.fixture
def front_camera():
    """站在原点附近、朝 +x 看的 16x16 相机"""
    return Camera.look_at((0.0, 0.0, 1.0), (10.0, 0.0, 1.0), 16, 16)


@pytest.fixture
def street_camera():
    return Camera.look_at((-10.0, 0.0, 1.6), (10.0, 0.0, 1.6), 32, 32)


@pytest.fixture
def tiny_field_config():
    return FieldConfig(
        hash_grid=HashGridConfig(levels=2, base_resolution=4, per_level_scale=2.0, table_size=256,
                                 features_per_level=2, decoder_widths=(8,)),
        sky_hidden=8,
    )


@pytest.fixture
def tiny_field(tiny_field_config, street_layout):
    return SceneField(tiny_field_config, street_layout)


@pytest.fixture
def indicator_field_factory():
    return IndicatorField
