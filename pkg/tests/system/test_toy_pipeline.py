# tests/system/test_toy_pipeline.py
"""
桌面规模端到端验收：toy 配置下预训练、优化、细化，检查画师距离、消融顺序与大角度视角

分钟级运行，默认不执行：python run_tests.py -m long_running
"""
import copy
from pathlib import Path

import allure
import numpy as np
import pytest
import torch

from src.common.helpers import seed_everything
from src.field.scene_field import SceneField
from src.guidance.denoiser import STYLE_NAMES
from src.guidance.refinement import resample_refine
from src.guidance.schedule import NoiseSchedule
from src.layout.layout_io import load_layout
from src.losses.objectives import FeatureEncoder, feature_consistency_loss
from src.raster.camera import load_trajectory
from src.raster.rasterizer import encode_condition, rasterize
from src.render.renderer import render_image
from src.train.config import load_run_config
from src.train.editing import ChangeStyle, edit_scene
from src.train.optimize import (GuidanceStack, optimize_scene, refine_scene, refine_start,
                                semantic_agreement)
from src.train.painter import PainterOracle
from src.train.pretrain import pretrain_toy_denoiser
from src.train.trajectory import TrajectorySampler

pytestmark = pytest.mark.long_running

ROOT = Path(__file__).resolve().parents[2]
SEEDS = (0, 1, 2)
DISTANCE_TARGET = 0.15
VIEW_SHIFT_TARGET = 0.9


@pytest.fixture(scope="module")
def toy():
    config = load_run_config("toy", ROOT / "config")
    layout = load_layout(ROOT / "samples" / "layout.json")
    cameras = load_trajectory(ROOT / "samples" / "trajectory.json")
    cfg = config.train
    sampler = TrajectorySampler(cameras, cfg.yaw_range_deg, cfg.position_jitter, cfg.min_camera_height)
    painter = PainterOracle(layout.palette(), cfg.painter_seed)
    schedule = NoiseSchedule(config.schedule)
    seed_everything(cfg.seed)
    views = cameras + sampler.held_out(cfg.pretrain_views, cfg.seed + 1)
    report = pretrain_toy_denoiser([(layout, views)], painter, schedule, config)
    return {"config": config, "layout": layout, "sampler": sampler, "painter": painter,
            "schedule": schedule, "denoiser": report.denoiser}


class ToyRuns:
    """按 (种子, 变体) 缓存完整运行，消融与视角测试共用"""

    def __init__(self, toy):
        self.toy = toy
        self.results = {}

    def get(self, seed, variant="full"):
        key = (seed, variant)
        if key not in self.results:
            self.results[key] = self._run(seed, variant)
        return self.results[key]

    def _run(self, seed, variant):
        toy = self.toy
        config = toy["config"].with_seed(seed)
        if variant == "no_layout_constraint":
            config = config.with_render(layout_constraint=False)
        elif variant == "unconditional_refine":
            config = config.with_train(unconditional_refine=True)
        seed_everything(seed)
        layout = toy["layout"]
        cfg = config.train
        field = SceneField(config.field, layout)
        stack = GuidanceStack.build(copy.deepcopy(toy["denoiser"]), toy["schedule"], config, layout)
        eval_cameras = toy["sampler"].held_out(cfg.eval_cameras, cfg.seed, cfg.eval_resolution)
        kwargs = dict(painter=toy["painter"], eval_cameras=eval_cameras)
        optimize_scene(layout, field, stack, toy["sampler"], config, **kwargs)
        result = refine_scene(layout, field, stack, toy["sampler"], config, **kwargs)
        return {"field": field, "config": config, "distance": result.painter_distance,
                "eval_cameras": eval_cameras}


@pytest.fixture(scope="module")
def runs(toy):
    return ToyRuns(toy)


@allure.feature("端到端验收")
class TestToyPipeline:

    @allure.story("收敛到画师分布")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_painter_distance(self, runs):
        distance = runs.get(SEEDS[0])["distance"]
        allure.attach(f"{distance:.4f}", "留出视角画师距离", allure.attachment_type.TEXT)
        assert distance < DISTANCE_TARGET

    @allure.story("消融变体更差")
    @pytest.mark.parametrize("variant", ["no_layout_constraint", "unconditional_refine"])
    def test_ablation_ordering(self, runs, variant):
        for seed in SEEDS:
            with allure.step(f"种子 {seed}"):
                full = runs.get(seed)["distance"]
                ablated = runs.get(seed, variant)["distance"]
                assert full < ablated, f"seed={seed}: full={full:.4f}, {variant}={ablated:.4f}"

    @allure.story("±45° 偏航视角语义一致")
    @pytest.mark.parametrize("yaw", [-45.0, 45.0])
    def test_view_shift(self, runs, toy, yaw):
        run = runs.get(SEEDS[0])
        cameras = [cam.yawed(yaw) for cam in run["eval_cameras"]]
        agreement = semantic_agreement(run["field"], toy["layout"], cameras, run["config"].render)
        allure.attach(f"{agreement:.4f}", "语义一致率", allure.attachment_type.TEXT)
        assert agreement >= VIEW_SHIFT_TARGET


def _painter_tensor(painter, maps, style):
    return torch.from_numpy(painter.paint(maps, style)).permute(2, 0, 1).float()


@allure.feature("端到端验收")
class TestToyGuidance:

    @allure.story("细化保持画师图像、修复加噪图像")
    def test_refine_consistency(self, toy):
        config, layout, painter = toy["config"], toy["layout"], toy["painter"]
        schedule = toy["schedule"]
        cameras = toy["sampler"].held_out(4, config.train.seed + 2, config.train.eval_resolution)
        t0 = refine_start(config.train.refine_t0, schedule)
        gen = torch.Generator().manual_seed(config.train.seed)
        changes, before, after = [], [], []
        for cam in cameras:
            maps = rasterize(layout, cam, config.render.near)
            condition = encode_condition(maps, layout.class_count, cam.width)
            target = _painter_tensor(painter, maps, config.train.style)
            refined = resample_refine(target, condition, config.train.style, toy["denoiser"], schedule, t0,
                                      config.train.refine_mode, gen, config.train.refine_stride)
            changes.append(float((refined - target).abs().mean()))

            noisy = (target + 0.15 * torch.randn(target.shape, generator=gen)).clamp(0.0, 1.0)
            repaired = resample_refine(noisy, condition, config.train.style, toy["denoiser"], schedule, t0,
                                       config.train.refine_mode, gen, config.train.refine_stride)
            before.append(float((noisy - target).abs().mean()))
            after.append(float((repaired - target).abs().mean()))
        allure.attach(f"change={np.mean(changes):.4f}, noisy={np.mean(before):.4f}, repaired={np.mean(after):.4f}",
                      "细化前后画师距离", allure.attachment_type.TEXT)
        with allure.step("画师一致的图像基本不变"):
            assert np.mean(changes) < 0.05
        with allure.step("加噪图像距离至少缩小30%"):
            assert np.mean(after) <= 0.7 * np.mean(before)

    @allure.story("切换风格后微调")
    def test_style_swap_moves_toward_new_style(self, runs, toy):
        run = runs.get(SEEDS[0])
        old_style = run["config"].train.style
        new_style = (old_style + 1) % len(STYLE_NAMES)
        config = run["config"].with_train(edit_fraction=0.5)
        layout = toy["layout"]
        stack = GuidanceStack.build(copy.deepcopy(toy["denoiser"]), toy["schedule"], config, layout)
        outcome = edit_scene(run["field"], layout, ChangeStyle(new_style), stack, config, toy["sampler"])
        assert outcome.fine_tuned is not None

        encoder = FeatureEncoder(seed=config.train.seed)
        to_new, to_old = 0.0, 0.0
        with torch.no_grad():
            for index, cam in enumerate(run["eval_cameras"]):
                maps = rasterize(layout, cam, config.render.near)
                image = render_image(outcome.field, layout, cam, config.render, index).image_chw().float()
                to_new += float(feature_consistency_loss(image, _painter_tensor(toy["painter"], maps, new_style),
                                                         encoder))
                to_old += float(feature_consistency_loss(image, _painter_tensor(toy["painter"], maps, old_style),
                                                         encoder))
        allure.attach(f"new={to_new:.4f}, old={to_old:.4f}", "特征距离", allure.attachment_type.TEXT)
        assert to_new < to_old
