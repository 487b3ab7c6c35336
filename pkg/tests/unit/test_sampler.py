# tests/unit/test_sampler.py
import allure
import numpy as np
import pytest

from src.common.errors import ConfigError, InvalidDirectionError
from src.layout.primitives import points_in_instance
from src.render.sampler import RenderConfig, sample_ray, sample_rays


@allure.feature("布局约束采样")
class TestLayoutConstrainedSampling:

    @allure.story("样本中点位于实例内")
    def test_midpoints_inside_instances(self, street_layout, street_camera):
        origins, directions = street_camera.generate_rays()
        config = RenderConfig(samples_per_ray=16, far=100.0)
        samples = sample_rays(street_layout, origins, directions, config, np.random.default_rng(0))
        points = samples.positions[samples.valid]
        inside = np.zeros(points.shape[0], dtype=bool)
        for inst in street_layout.instances:
            inside |= points_in_instance(points, inst, 1e-9)
        assert inside.all()

    @allure.story("样本所属实例")
    def test_owner_contains_midpoint(self, street_layout, street_camera):
        origins, directions = street_camera.generate_rays()
        samples = sample_rays(street_layout, origins, directions, RenderConfig(samples_per_ray=16, far=100.0),
                              np.random.default_rng(1))
        positions = samples.positions
        for index, inst in enumerate(street_layout.instances):
            mask = samples.owner == index
            if mask.any():
                assert points_in_instance(positions[mask], inst, 1e-6).all()
        assert (samples.owner[~samples.valid] == -1).all()

    @allure.story("物体优先")
    def test_object_owns_overlap(self, layout_factory, instance_factory):
        """背景块内嵌一个物体，重叠段归属物体"""
        layout = layout_factory([
            instance_factory(1, 2, (5.0, 0.0, 0.0), (4.0, 4.0, 4.0)),
            instance_factory(2, 3, (5.0, 0.0, 0.0), (2.0, 2.0, 2.0), is_object=True),
        ])
        samples = sample_ray(layout, (0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 64, 0.0, 50.0)
        mid = samples.midpoints[0]
        assert samples.intervals(0) == [pytest.approx((3.0, 7.0))]
        assert (samples.owner[0][(mid > 4.0) & (mid < 6.0)] == 1).all()
        assert (samples.owner[0][(mid < 4.0) | (mid > 6.0)] == 0).all()

    @allure.story("段长不越过区间")
    def test_segments_stay_in_intervals(self, street_layout):
        samples = sample_ray(street_layout, (-10.0, -2.0, 1.0), (1.0, 0.0, 0.0), 32, 0.0, 100.0,
                             np.random.default_rng(2))
        t = samples.t[0]
        end = t + samples.delta[0]
        intervals = samples.intervals(0)
        assert intervals == [pytest.approx(iv) for iv in [(13.0, 17.0)]]
        assert (t >= 13.0 - 1e-9).all() and (end <= 17.0 + 1e-9).all()
        assert (np.diff(t) >= 0).all()
        assert samples.delta[0].sum() == pytest.approx(17.0 - t[0])

    @allure.story("区间合并")
    def test_overlapping_intervals_merge(self, layout_factory, instance_factory):
        layout = layout_factory([
            instance_factory(1, 2, (5.0, 0.0, 0.0), (4.0, 2.0, 2.0)),
            instance_factory(2, 2, (8.0, 0.0, 0.0), (4.0, 2.0, 2.0)),
            instance_factory(3, 2, (20.0, 0.0, 0.0), (2.0, 2.0, 2.0)),
        ])
        samples = sample_ray(layout, (0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 8, 0.0, 100.0)
        merged = samples.intervals(0)
        assert len(merged) == 2
        assert merged[0] == pytest.approx((3.0, 10.0))
        assert merged[1] == pytest.approx((19.0, 21.0))

    @allure.story("未命中的光线")
    def test_ray_missing_everything(self, street_layout):
        samples = sample_ray(street_layout, (0.0, 0.0, 50.0), (0.0, 0.0, 1.0), 16, 0.0, 100.0)
        assert not samples.valid.any()
        assert (samples.delta == 0).all()
        assert samples.intervals(0) == []

    @allure.story("near/far 裁剪")
    def test_far_clips_intervals(self, street_layout):
        samples = sample_ray(street_layout, (-10.0, -2.0, 1.0), (1.0, 0.0, 0.0), 16, 0.0, 15.0)
        assert samples.intervals(0) == [pytest.approx((13.0, 15.0))]

    @allure.story("方向校验")
    def test_non_unit_direction(self, street_layout):
        with pytest.raises(InvalidDirectionError):
            sample_ray(street_layout, (0.0, 0.0, 1.0), (2.0, 0.0, 0.0), 8, 0.0, 10.0)

    @allure.story("确定性")
    def test_same_seed_same_samples(self, street_layout, street_camera):
        origins, directions = street_camera.generate_rays()
        config = RenderConfig(samples_per_ray=8, far=100.0)
        a = sample_rays(street_layout, origins, directions, config, np.random.default_rng(4))
        b = sample_rays(street_layout, origins, directions, config, np.random.default_rng(4))
        assert np.array_equal(a.t, b.t) and np.array_equal(a.owner, b.owner)


@allure.feature("无约束采样")
class TestUnconstrainedSampling:

    @allure.story("覆盖 [near, far]")
    def test_covers_near_far(self, street_layout):
        samples = sample_ray(street_layout, (0.0, 0.0, 50.0), (0.0, 0.0, 1.0), 10, 1.0, 11.0,
                             layout_constraint=False)
        assert samples.valid.all()
        assert samples.t[0, 0] >= 1.0
        assert samples.t[0, -1] + samples.delta[0, -1] == pytest.approx(11.0)
        assert (samples.owner == -1).all()

    @allure.story("配置校验")
    @pytest.mark.parametrize("kwargs", [{"samples_per_ray": 0}, {"near": 5.0, "far": 1.0},
                                        {"far": float("inf")}, {"chunk_size": 0}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            RenderConfig(**kwargs)
