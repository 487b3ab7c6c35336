# tests/unit/test_mesh.py
import allure
import numpy as np
import pytest

from src.common.errors import ConfigError
from src.mesh.extract import (DensityVolume, TriangleMesh, default_region, extract_mesh, field_density_fn,
                              mesh_from_volume, sample_density, save_obj)

RADIUS = 1.5
REGION = ((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0))


def _ball_density(points):
    """σ 随到原点距离线性下降，σ=5 的等值面是半径 1.5 的球面"""
    sigma = np.clip(10.0 * (2.0 - np.linalg.norm(points, axis=-1)), 0.0, None)
    return sigma, np.full((points.shape[0], 3), 0.5)


def _empty_density(points):
    return np.zeros(points.shape[0]), None


@allure.feature("密度采样")
class TestSampleDensity:

    @allure.story("格点数量")
    def test_grid_shape(self):
        volume = sample_density(_ball_density, ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)), 0.5)
        assert volume.values.shape == (3, 3, 3)
        assert np.array_equal(volume.origin, np.zeros(3))

    @allure.story("阈值越高体素越少")
    def test_count_monotone_in_threshold(self):
        volume = sample_density(_ball_density, REGION, 0.25)
        counts = [volume.count_above(threshold) for threshold in (0.0, 2.0, 5.0, 10.0, 20.0)]
        assert counts == sorted(counts, reverse=True)
        assert counts[-1] == 0

    @allure.story("参数校验")
    @pytest.mark.parametrize("region,voxel", [
        (REGION, 0.0),
        (REGION, -1.0),
        (((1.0, 0.0, 0.0), (0.0, 1.0, 1.0)), 0.5),
        (((0.0, 0.0, 0.0), (np.inf, 1.0, 1.0)), 0.5),
    ])
    def test_invalid_arguments(self, region, voxel):
        with pytest.raises(ConfigError):
            sample_density(_ball_density, region, voxel)


@allure.feature("等值面提取")
class TestMeshFromVolume:

    @allure.story("球面顶点位于半径附近")
    def test_sphere_vertices_near_radius(self):
        mesh = extract_mesh(None, None, REGION, voxel_size=0.25, threshold=5.0, density_fn=_ball_density)
        assert not mesh.is_empty
        radii = np.linalg.norm(mesh.vertices, axis=-1)
        assert np.abs(radii - RADIUS).max() <= 0.25
        assert mesh.triangles.max() < mesh.vertices.shape[0]
        assert np.allclose(mesh.colors, 0.5)

    @allure.story("零密度得到空网格")
    def test_empty_density(self):
        volume = sample_density(_empty_density, REGION, 0.5)
        assert mesh_from_volume(volume, 1.0).is_empty

    @allure.story("处处高于阈值")
    def test_saturated_volume_is_closed_box(self):
        volume = DensityVolume(np.full((4, 4, 4), 10.0), np.zeros(3), 1.0)
        mesh = mesh_from_volume(volume, 1.0)
        assert not mesh.is_empty
        assert mesh.vertices.min() >= -1.0 and mesh.vertices.max() <= 4.0


@allure.feature("网格导出")
class TestSaveObj:

    @allure.story("OBJ 包含顶点与面")
    def test_obj_contents(self, tmp_path):
        mesh = extract_mesh(None, None, REGION, voxel_size=0.5, threshold=5.0, density_fn=_ball_density)
        text = save_obj(mesh, tmp_path / "ball.obj").read_text(encoding="utf-8")
        lines = text.splitlines()
        assert sum(line.startswith("v ") for line in lines) == mesh.vertices.shape[0]
        assert sum(line.startswith("f ") for line in lines) == mesh.triangles.shape[0]

    @allure.story("空网格")
    def test_empty_mesh_file(self, tmp_path):
        path = save_obj(TriangleMesh.empty(), tmp_path / "empty.obj")
        assert path.read_text(encoding="utf-8") == "# empty mesh\n"


@allure.feature("场景网格")
class TestFieldMesh:

    @allure.story("默认提取区域")
    def test_default_region(self, street_layout):
        lo, hi = default_region(street_layout)
        assert lo.tolist() == pytest.approx([-20.0, -10.0, -0.1])
        assert hi.tolist() == pytest.approx([40.0, 10.0, 8.0])

    @allure.story("空布局")
    def test_default_region_empty_layout(self, layout_factory):
        with pytest.raises(ConfigError):
            default_region(layout_factory([]))

    @allure.story("布局外密度为0")
    def test_field_density_outside_layout(self, tiny_field, street_layout):
        tiny_field.spawn_tiles([(0, 0, 0)])
        density = field_density_fn(tiny_field, street_layout, chunk=2)
        sigma, rgb = density(np.array([[0.0, 0.0, 50.0], [-5.0, 0.0, 30.0], [100.0, 100.0, 100.0]]))
        assert np.array_equal(sigma, np.zeros(3))
        assert rgb.shape == (3, 3)
