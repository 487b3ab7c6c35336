# src/render 布局约束采样与体渲染
from .compositor import CompositeResult, compositing_weights, volume_composite
from .renderer import RenderFrame, collect_spawn_requests, composite, render_image, render_rays
from .sampler import RaySampleSet, RenderConfig, sample_ray, sample_rays
