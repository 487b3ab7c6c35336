# tests/integration/test_gradients.py
"""
解析梯度与中心差分对照（float64，16x16）：场的各类参数、噪声损失下的 LoRA 参数、经渲染器的细化MSE
"""
import allure
import pytest
import torch
import torch.nn.functional as F

from src.guidance.adapter import AdaptedDenoiser, AdapterConfig, camera_features
from src.guidance.denoiser import DenoiserConfig, ToyDenoiser
from src.guidance.schedule import NoiseSchedule, ScheduleConfig
from src.losses.objectives import refine_mse
from src.render.renderer import collect_spawn_requests, render_image
from src.render.sampler import RenderConfig

SEED = 13
EPS = 1e-6
REL_TOL = 1e-3
RENDER = RenderConfig(samples_per_ray=16, far=50.0, jitter=False)


def _directional_check(objective, params, seed=0):
    """沿随机方向比较 <∇f, v> 与 (f(θ+εv) - f(θ-εv)) / 2ε"""
    gen = torch.Generator().manual_seed(seed)
    directions = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    for p in params:
        p.grad = None
    objective().backward()
    grads = [p.grad if p.grad is not None else torch.zeros_like(p) for p in params]
    assert any(g.abs().sum() > 0 for g in grads), "解析梯度全为0"
    analytic = sum(float((g * v).sum()) for g, v in zip(grads, directions))

    with torch.no_grad():
        for p, v in zip(params, directions):
            p.add_(EPS * v)
        plus = float(objective())
        for p, v in zip(params, directions):
            p.sub_(2 * EPS * v)
        minus = float(objective())
        for p, v in zip(params, directions):
            p.add_(EPS * v)
    numeric = (plus - minus) / (2 * EPS)
    return analytic, numeric


@pytest.fixture
def spawned_field(tiny_field, street_layout, front_camera):
    """生成前视相机所需的背景网格后转为 float64"""
    tiny_field.spawn_tiles(collect_spawn_requests(tiny_field, street_layout, [front_camera], RENDER, [SEED]))
    assert tiny_field.stuff_grids
    return tiny_field.double()


def _parameter_class(field, name):
    if name == "object_table":
        return [field.object_grids["3"].encoding.table]
    if name == "object_decoder":
        return list(field.object_grids["3"].decoder.parameters())
    if name == "stuff_table":
        return [grid.encoding.table for grid in field.stuff_grids.values()]
    if name == "stuff_decoder":
        return [p for grid in field.stuff_grids.values() for p in grid.decoder.parameters()]
    return list(field.sky.parameters())


@allure.feature("梯度正确性")
@pytest.mark.gradcheck
class TestFieldGradients:

    @allure.story("渲染结果对各类场参数的梯度")
    @pytest.mark.parametrize("name", ["object_table", "object_decoder", "stuff_table", "stuff_decoder", "sky"])
    def test_render_gradient(self, spawned_field, street_layout, front_camera, name):
        params = _parameter_class(spawned_field, name)

        def objective():
            frame = render_image(spawned_field, street_layout, front_camera, RENDER, SEED)
            return frame.color.sum() + frame.depth.sum() * 0.01

        analytic, numeric = _directional_check(objective, params)
        allure.attach(f"analytic={analytic:.8e}, numeric={numeric:.8e}", name, allure.attachment_type.TEXT)
        assert numeric == pytest.approx(analytic, rel=REL_TOL, abs=1e-8)

    @allure.story("细化MSE经渲染器回传")
    def test_refine_mse_gradient(self, spawned_field, street_layout, front_camera):
        target = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
        params = [spawned_field.object_grids["3"].encoding.table,
                  *[grid.encoding.table for grid in spawned_field.stuff_grids.values()],
                  *spawned_field.sky.parameters()]

        def objective():
            frame = render_image(spawned_field, street_layout, front_camera, RENDER, SEED)
            return refine_mse(frame.color, target)

        analytic, numeric = _directional_check(objective, params, seed=1)
        assert numeric == pytest.approx(analytic, rel=REL_TOL, abs=1e-10)


@allure.feature("梯度正确性")
@pytest.mark.gradcheck
class TestAdapterGradients:

    @allure.story("噪声损失对 LoRA 参数的梯度")
    def test_noise_loss_gradient(self, front_camera):
        base = ToyDenoiser(DenoiserConfig(condition_channels=5, hidden_channels=8, layers=2, time_embedding_dim=8))
        adapted = AdaptedDenoiser(base, AdapterConfig(rank=2)).double()
        gen = torch.Generator().manual_seed(3)
        with torch.no_grad():
            # B 零初始化时 A 的梯度恒为0，先给 B 随机值
            for b in adapted.lora_B.values():
                b.copy_(0.1 * torch.randn(b.shape, generator=gen, dtype=b.dtype))
            adapted.camera_embedding.weight.copy_(
                0.1 * torch.randn(adapted.camera_embedding.weight.shape, generator=gen, dtype=torch.float64))

        schedule = NoiseSchedule(ScheduleConfig(steps=100))
        images = torch.rand(2, 3, 16, 16, generator=gen, dtype=torch.float64) * 2.0 - 1.0
        conditions = torch.rand(2, 5, 16, 16, generator=gen, dtype=torch.float64)
        t = schedule.sample_timestep(gen, count=2)
        noise = torch.randn(images.shape, generator=gen, dtype=torch.float64)
        x_t = schedule.perturb(images, t, noise)
        camera = torch.stack([camera_features(front_camera), camera_features(front_camera.yawed(15.0))])
        params = adapted.trainable_parameters()

        def objective():
            return F.mse_loss(adapted(x_t, t, conditions, 0, camera), noise)

        analytic, numeric = _directional_check(objective, params, seed=2)
        assert numeric == pytest.approx(analytic, rel=REL_TOL, abs=1e-10)
        assert all(p.grad is None for p in base.parameters())
