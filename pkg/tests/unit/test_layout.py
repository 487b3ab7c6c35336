# tests/unit/test_layout.py
import json

import allure
import numpy as np
import pytest

from src.common.errors import (DuplicateInstanceError, InvalidDirectionError, LayoutParseError,
                               LayoutValidationError, UnknownInstanceError)
from src.layout.editing import DeltaPose, insert_instance, next_instance_id, remove_instance, transform_instance
from src.layout.layout_io import layout_from_dict, layout_to_dict, load_layout, save_layout
from src.layout.primitives import (Pose, SceneLayout, SemanticClass, ShapeKind, point_in_instance,
                                   points_in_instance, ray_instance_intervals, ray_intervals_batch)

from conftest import CLASSES, make_instance


@allure.feature("布局基元")
class TestPose:

    @allure.story("尺寸必须为正")
    @pytest.mark.parametrize("size", [(1.0, 0.0, 1.0), (1.0, -2.0, 1.0), (np.inf, 1.0, 1.0)])
    def test_non_positive_size_rejected(self, size):
        """非正或非有限尺寸在构造时被拒绝"""
        with pytest.raises(LayoutValidationError):
            Pose(np.eye(3), np.zeros(3), size)

    @allure.story("旋转矩阵校验")
    def test_reflection_rejected(self):
        """行列式为 -1 的镜像矩阵不是旋转"""
        with pytest.raises(LayoutValidationError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3), (1.0, 1.0, 1.0))

    @allure.story("旋转矩阵校验")
    def test_validated_projects_rounding_error(self):
        """容差内的舍入误差被投影回正交矩阵"""
        noisy = np.eye(3) + 1e-8 * np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]])
        pose = Pose.validated(noisy, np.zeros(3), (1.0, 1.0, 1.0))
        assert np.allclose(pose.rotation.T @ pose.rotation, np.eye(3), atol=1e-12)

    @allure.story("位姿只读")
    def test_arrays_are_read_only(self):
        pose = Pose.from_yaw(30.0, (1.0, 2.0, 3.0), (2.0, 2.0, 2.0))
        with pytest.raises(ValueError):
            pose.translation[0] = 5.0


@allure.feature("布局基元")
class TestContainment:

    @allure.story("立方体包含")
    def test_rotated_cuboid(self):
        """旋转90°后长边沿 y 轴"""
        inst = make_instance(1, 2, (0.0, 0.0, 0.0), (4.0, 1.0, 1.0), yaw_deg=90.0)
        assert point_in_instance((0.0, 1.9, 0.0), inst)
        assert not point_in_instance((1.9, 0.0, 0.0), inst)

    @allure.story("椭球包含")
    def test_ellipsoid_excludes_corners(self):
        inst = make_instance(1, 3, (0.0, 0.0, 0.0), (2.0, 2.0, 2.0), shape=ShapeKind.ELLIPSOID)
        points = np.array([[0.0, 0.0, 0.0], [0.99, 0.0, 0.0], [0.9, 0.9, 0.0]])
        assert points_in_instance(points, inst).tolist() == [True, True, False]

    @allure.story("边界点")
    def test_boundary_is_inside(self):
        inst = make_instance(1, 2, (0.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        assert point_in_instance((1.0, 0.0, 0.0), inst)


@allure.feature("布局基元")
class TestRayIntervals:

    @allure.story("立方体求交")
    def test_axis_aligned_box(self):
        inst = make_instance(1, 2, (10.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        assert ray_instance_intervals((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), inst) == [(9.0, 11.0)]

    @allure.story("椭球求交")
    def test_sphere(self):
        inst = make_instance(1, 3, (5.0, 0.0, 0.0), (2.0, 2.0, 2.0), shape=ShapeKind.ELLIPSOID)
        (t0, t1), = ray_instance_intervals((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), inst)
        assert t0 == pytest.approx(4.0)
        assert t1 == pytest.approx(6.0)

    @allure.story("未命中与相切")
    def test_miss_and_tangent(self):
        inst = make_instance(1, 2, (10.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        assert ray_instance_intervals((0.0, 5.0, 0.0), (1.0, 0.0, 0.0), inst) == []
        ball = make_instance(2, 3, (5.0, 0.0, 0.0), (2.0, 2.0, 2.0), shape=ShapeKind.ELLIPSOID)
        assert ray_instance_intervals((0.0, 1.0, 0.0), (1.0, 0.0, 0.0), ball) == []

    @allure.story("起点在实例内部")
    def test_origin_inside(self):
        """起点在内部时区间起点为负"""
        inst = make_instance(1, 2, (0.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        (t0, t1), = ray_instance_intervals((0.0, 0.0, 0.0), (0.0, 1.0, 0.0), inst)
        assert t0 == pytest.approx(-1.0)
        assert t1 == pytest.approx(1.0)

    @allure.story("方向校验")
    def test_non_unit_direction(self):
        inst = make_instance(1, 2, (10.0, 0.0, 0.0), (2.0, 2.0, 2.0))
        with pytest.raises(InvalidDirectionError):
            ray_instance_intervals((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), inst)

    @allure.story("批量与逐点一致")
    def test_interval_endpoints_lie_on_surface(self):
        """区间内部中点在实例内，区间外侧点在实例外"""
        rng = np.random.default_rng(3)
        inst = make_instance(1, 2, (4.0, 1.0, 0.5), (3.0, 2.0, 1.0), yaw_deg=25.0)
        directions = rng.normal(size=(200, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        origins = np.zeros((200, 3))
        t0, t1, hit = ray_intervals_batch(origins, directions, inst)
        assert hit.any()
        mid = origins[hit] + 0.5 * (t0[hit] + t1[hit])[:, None] * directions[hit]
        assert points_in_instance(mid, inst).all()
        beyond = origins[hit] + (t1[hit] + 1e-3)[:, None] * directions[hit]
        assert not points_in_instance(beyond, inst).any()


@allure.feature("场景布局")
class TestSceneLayout:

    @allure.story("重复实例id")
    def test_duplicate_instance_ids(self):
        inst = make_instance(1, 2, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        with pytest.raises(LayoutValidationError):
            SceneLayout(CLASSES, (inst, inst))

    @allure.story("未知类别")
    def test_unknown_class(self):
        with pytest.raises(LayoutValidationError):
            SceneLayout(CLASSES, (make_instance(1, 9, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),))

    @allure.story("类别0保留给天空")
    def test_reserved_sky_class(self):
        with pytest.raises(LayoutValidationError):
            SceneLayout((SemanticClass(0, "road"),))
        with pytest.raises(LayoutValidationError):
            SceneLayout(CLASSES, (make_instance(1, 0, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),))

    @allure.story("通道数")
    def test_class_count(self, street_layout):
        assert street_layout.class_count == 4
        assert [inst.id for inst in street_layout.object_instances()] == [3]

    @allure.story("查找未知实例")
    def test_unknown_instance_lookup(self, street_layout):
        with pytest.raises(UnknownInstanceError):
            street_layout.instance(42)


@allure.feature("布局文件")
class TestLayoutIO:

    @allure.story("样例布局")
    def test_load_sample(self, sample_layout):
        assert len(sample_layout.instances) == 3
        road = sample_layout.instance(1)
        assert road.shape is ShapeKind.PLANE
        assert road.pose.size[2] == pytest.approx(0.2)

    @allure.story("保存后重新加载")
    def test_save_and_reload(self, street_layout, tmp_path):
        path = save_layout(street_layout, tmp_path / "layout.json")
        reloaded = load_layout(path)
        assert reloaded.same_up_to_order(street_layout)

    @allure.story("文件错误")
    def test_missing_file(self, tmp_path):
        with pytest.raises(LayoutParseError):
            load_layout(tmp_path / "absent.json")

    @allure.story("文件错误")
    def test_bad_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(LayoutParseError):
            load_layout(path)

    @allure.story("字段缺失")
    def test_missing_field(self, street_layout):
        document = layout_to_dict(street_layout)
        del document["instances"][0]["size"]
        with pytest.raises(LayoutParseError):
            layout_from_dict(document)

    @allure.story("非正交旋转")
    def test_non_orthogonal_rotation(self, street_layout, tmp_path):
        document = layout_to_dict(street_layout)
        document["instances"][1]["rotation"] = [1, 0.1, 0, 0, 1, 0, 0, 0, 1]
        path = tmp_path / "skew.json"
        path.write_text(json.dumps(document), encoding="utf-8")
        with pytest.raises(LayoutValidationError):
            load_layout(path)

    @allure.story("bounds 校验")
    def test_inverted_bounds(self, street_layout):
        document = layout_to_dict(street_layout)
        document["bounds"] = {"min": [0, 0, 0], "max": [1, -1, 1]}
        with pytest.raises(LayoutValidationError):
            layout_from_dict(document)


@allure.feature("布局编辑")
class TestLayoutEditing:

    @allure.story("插入与删除")
    def test_insert_then_remove_restores_layout(self, street_layout):
        extra = make_instance(next_instance_id(street_layout), 3, (20.0, 0.0, 1.0), (2.0, 2.0, 2.0), is_object=True)
        grown = insert_instance(street_layout, extra)
        assert grown.has_instance(extra.id)
        assert not street_layout.has_instance(extra.id)
        assert remove_instance(grown, extra.id) == street_layout

    @allure.story("重复插入")
    def test_duplicate_insert(self, street_layout):
        with pytest.raises(DuplicateInstanceError):
            insert_instance(street_layout, street_layout.instance(3))

    @allure.story("删除未知实例")
    def test_remove_unknown(self, street_layout):
        with pytest.raises(UnknownInstanceError):
            remove_instance(street_layout, 99)

    @allure.story("位姿增量")
    def test_transform_rotates_about_center(self, street_layout):
        delta = DeltaPose(rotation=DeltaPose.yaw(90.0).rotation, translation=(1.0, 0.0, 0.0))
        moved = transform_instance(street_layout, 3, delta).instance(3)
        assert np.allclose(moved.pose.translation, (6.0, -2.0, 0.85))
        assert np.allclose(moved.pose.rotation[:, 0], (0.0, 1.0, 0.0), atol=1e-12)
        assert np.array_equal(moved.pose.size, street_layout.instance(3).pose.size)

    @allure.story("恒等增量")
    def test_identity_delta(self, street_layout):
        assert transform_instance(street_layout, 3, DeltaPose()) == street_layout
