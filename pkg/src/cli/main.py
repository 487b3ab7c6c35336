#!/usr/bin/env python3
"""
layoutforge 命令行入口

子命令: validate | rasterize | pretrain | optimize | refine | render | edit | mesh
退出码: 0 成功，2 用法错误，3 布局/配置校验错误，1 运行期错误
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import torch
from colorama import Fore, Style, init as colorama_init

from src.common.errors import LayoutForgeError
from src.common.helpers import seed_everything
from src.common.logger import get_logger, setup_logging
from src.field.checkpoint import load_field, save_field
from src.field.scene_field import SceneField
from src.guidance.adapter import make_adapter_optimizer
from src.guidance.checkpoint import DenoiserBundle, load_denoiser, save_denoiser
from src.guidance.schedule import NoiseSchedule
from src.layout.layout_io import load_layout, save_layout
from src.layout.primitives import SceneLayout
from src.mesh.extract import extract_mesh, save_obj
from src.raster.camera import Camera, load_trajectory
from src.raster.export import export_condition_maps, save_color_png, save_pfm, save_semantic_png
from src.raster.rasterizer import rasterize
from src.render.renderer import render_image
from src.train.config import RunConfig, load_run_config
from src.train.editing import edit_scene, load_edit_script
from src.train.optimize import GuidanceStack, optimize_scene, refine_scene
from src.train.painter import PainterOracle
from src.train.pretrain import pretrain_toy_denoiser
from src.train.trajectory import TrajectorySampler

logger = get_logger(__name__)

COMMANDS = ("validate", "rasterize", "pretrain", "optimize", "refine", "render", "edit", "mesh")
DENOISER_FILE = "denoiser.ckpt"
FIELD_FILE = "field.ckpt"
METRICS_FILE = "metrics.csv"


def print_success(msg: str) -> None:
    print(f"{Fore.GREEN}✓ {msg}{Style.RESET_ALL}")


def print_error(msg: str) -> None:
    print(f"{Fore.RED}✗ {msg}{Style.RESET_ALL}", file=sys.stderr)


# ----------------------------------------------------------------------
# 参数解析
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML 运行配置（缺省使用内置默认值）")
    common.add_argument("--out-dir", default="outputs", help="输出目录")
    common.add_argument("--seed", type=int, help="覆盖配置中的随机种子")
    common.add_argument("--threads", type=int, help="torch 计算线程数上限")
    common.add_argument("--log-level", help="日志级别，缺省读取 LAYOUTFORGE_LOG")

    parser = argparse.ArgumentParser(prog="layoutforge", description="布局条件三维场景生成")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="校验布局文件")
    p.add_argument("--layout", required=True)

    p = sub.add_parser("rasterize", parents=[common], help="沿轨迹输出条件图")
    p.add_argument("--layout", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--resolution", type=int, help="输出分辨率（正方形），缺省使用相机自身尺寸")

    p = sub.add_parser("pretrain", parents=[common], help="在画师数据上预训练玩具去噪器")
    p.add_argument("--layout", required=True, action="append", help="可重复给出多个布局")
    p.add_argument("--trajectory", required=True)
    p.add_argument("--checkpoint", help=f"去噪器输出路径，缺省 <out-dir>/{DENOISER_FILE}")

    for name, help_text in (("optimize", "LG-VSD 场景优化"), ("refine", "布局感知细化")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--layout", required=True)
        p.add_argument("--trajectory", required=True)
        p.add_argument("--denoiser", help=f"去噪器检查点，缺省 <out-dir>/{DENOISER_FILE}")
        p.add_argument("--checkpoint", help=f"场检查点（存在时继续训练），缺省 <out-dir>/{FIELD_FILE}")
        p.add_argument("--no-layout-constraint", action="store_true", help="消融：全空间分层采样")
        p.add_argument("--unconditional-refine", action="store_true", help="消融：无条件细化")

    p = sub.add_parser("render", parents=[common], help="沿轨迹渲染")
    p.add_argument("--layout", required=True)
    p.add_argument("--trajectory", required=True)
    p.add_argument("--checkpoint", help=f"场检查点，缺省 <out-dir>/{FIELD_FILE}")
    p.add_argument("--resolution", type=int)
    p.add_argument("--no-layout-constraint", action="store_true")

    p = sub.add_parser("edit", parents=[common], help="应用编辑脚本")
    p.add_argument("--layout", required=True)
    p.add_argument("--edits", required=True, help="JSON 编辑脚本")
    p.add_argument("--checkpoint", help=f"场检查点，缺省 <out-dir>/{FIELD_FILE}")
    p.add_argument("--denoiser", help="微调所需的去噪器检查点")
    p.add_argument("--trajectory", help="微调所需的相机轨迹")

    p = sub.add_parser("mesh", parents=[common], help="提取三角网格并导出 OBJ")
    p.add_argument("--layout", required=True)
    p.add_argument("--checkpoint", help=f"场检查点，缺省 <out-dir>/{FIELD_FILE}")
    p.add_argument("--voxel-size", type=float)
    p.add_argument("--threshold", type=float)
    return parser


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "no_layout_constraint", False):
        config = config.with_render(layout_constraint=False)
    if getattr(args, "unconditional_refine", False):
        config = config.with_train(unconditional_refine=True)
    return config


def _path(value: Optional[str], out_dir: Path, default: str) -> Path:
    return Path(value) if value else out_dir / default


def _cameras(path: str, resolution: Optional[int] = None) -> List[Camera]:
    cameras = load_trajectory(path)
    return [cam.resized(resolution, resolution) for cam in cameras] if resolution else cameras


def _sampler(cameras: Sequence[Camera], config: RunConfig) -> TrajectorySampler:
    cfg = config.train
    return TrajectorySampler(cameras, cfg.yaw_range_deg, cfg.position_jitter, cfg.min_camera_height)


def _field(path: Path, config: RunConfig, layout: SceneLayout, must_exist: bool) -> SceneField:
    if path.exists():
        return load_field(path)
    if must_exist:
        raise FileNotFoundError(f"场检查点不存在: {path}")
    logger.info(f"未找到场检查点 {path}，按配置新建场")
    return SceneField(config.field, layout)


def _stack(bundle: DenoiserBundle, config: RunConfig, layout: SceneLayout) -> GuidanceStack:
    stack = GuidanceStack.build(bundle.denoiser, bundle.schedule, config, layout)
    if bundle.adapter is not None:
        stack.adapted = bundle.adapter
        stack.adapter_optimizer = make_adapter_optimizer(bundle.adapter)
    return stack


def _painter(layout: SceneLayout, config: RunConfig) -> PainterOracle:
    return PainterOracle(layout.palette(), config.train.painter_seed)


# ----------------------------------------------------------------------
# 子命令
# ----------------------------------------------------------------------
def cmd_validate(args, config: RunConfig, out_dir: Path) -> None:
    layout = load_layout(args.layout)
    objects = len(layout.object_instances())
    print_success(f"布局有效: {len(layout.classes)} 个类别，{len(layout.instances)} 个实例（{objects} 个物体）")


def cmd_rasterize(args, config: RunConfig, out_dir: Path) -> None:
    layout = load_layout(args.layout)
    for index, cam in enumerate(_cameras(args.trajectory, args.resolution)):
        maps = rasterize(layout, cam, config.render.near)
        export_condition_maps(maps, layout.palette(), out_dir, f"view_{index:04d}")
    print_success(f"条件图已输出到 {out_dir}")


def cmd_pretrain(args, config: RunConfig, out_dir: Path) -> None:
    layouts = [load_layout(path) for path in args.layout]
    cameras = _cameras(args.trajectory)
    sampler = _sampler(cameras, config)
    views = cameras + sampler.held_out(config.train.pretrain_views, config.train.seed + 1)
    painter = _painter(layouts[0], config)
    schedule = NoiseSchedule(config.schedule)
    report = pretrain_toy_denoiser([(layout, views) for layout in layouts], painter, schedule, config)
    target = save_denoiser(report.denoiser, schedule, _path(args.checkpoint, out_dir, DENOISER_FILE))
    print_success(f"去噪器已保存: {target}（验证噪声损失 {report.validation_loss:.4f}）")


def _training(args, config: RunConfig, out_dir: Path, phase: str) -> None:
    layout = load_layout(args.layout)
    cameras = _cameras(args.trajectory)
    denoiser_path = _path(args.denoiser, out_dir, DENOISER_FILE)
    bundle = load_denoiser(denoiser_path)
    field_path = _path(args.checkpoint, out_dir, FIELD_FILE)
    field = _field(field_path, config, layout, must_exist=phase == "refine")
    stack = _stack(bundle, config, layout)
    sampler = _sampler(cameras, config)
    cfg = config.train
    kwargs = dict(metrics_path=out_dir / METRICS_FILE, checkpoint_path=field_path,
                  painter=_painter(layout, config),
                  eval_cameras=sampler.held_out(cfg.eval_cameras, cfg.seed, cfg.eval_resolution))
    if phase == "optimize":
        result = optimize_scene(layout, field, stack, sampler, config, **kwargs)
        save_denoiser(bundle.denoiser, bundle.schedule, denoiser_path, adapter=stack.adapted)
    else:
        result = refine_scene(layout, field, stack, sampler, config, **kwargs)
        if result.steps == 0:
            save_field(field, field_path)
    distance = "" if result.painter_distance is None else f"，画师距离 {result.painter_distance:.4f}"
    print_success(f"{phase} 完成: {result.steps} 步{distance}，检查点 {field_path}")


def cmd_optimize(args, config: RunConfig, out_dir: Path) -> None:
    _training(args, config, out_dir, "optimize")


def cmd_refine(args, config: RunConfig, out_dir: Path) -> None:
    _training(args, config, out_dir, "refine")


def cmd_render(args, config: RunConfig, out_dir: Path) -> None:
    layout = load_layout(args.layout)
    field = _field(_path(args.checkpoint, out_dir, FIELD_FILE), config, layout, must_exist=True)
    palette = layout.palette()
    with torch.no_grad():
        for index, cam in enumerate(_cameras(args.trajectory, args.resolution)):
            frame = render_image(field, layout, cam, config.render, config.train.seed + index)
            stem = out_dir / f"frame_{index:04d}"
            save_color_png(frame.color.double().cpu().numpy(), f"{stem}.png")
            save_pfm(frame.depth.double().cpu().numpy(), f"{stem}_depth.pfm")
            save_semantic_png(frame.semantic, palette, f"{stem}_semantic.png")
    print_success(f"渲染结果已输出到 {out_dir}")


def cmd_edit(args, config: RunConfig, out_dir: Path) -> None:
    layout = load_layout(args.layout)
    field = _field(_path(args.checkpoint, out_dir, FIELD_FILE), config, layout, must_exist=True)
    edits = load_edit_script(args.edits)
    stack, sampler = None, None
    if args.denoiser and args.trajectory:
        stack = _stack(load_denoiser(args.denoiser), config, layout)
        sampler = _sampler(_cameras(args.trajectory), config)
    outcome = edit_scene(field, layout, edits, stack, config, sampler, metrics_path=out_dir / METRICS_FILE)
    save_field(outcome.field, out_dir / "field_edited.ckpt")
    save_layout(outcome.layout, out_dir / "layout_edited.json")
    tuned = "，已微调" if outcome.fine_tuned is not None else ""
    print_success(f"已应用 {len(edits)} 个编辑{tuned}，输出到 {out_dir}")


def cmd_mesh(args, config: RunConfig, out_dir: Path) -> None:
    layout = load_layout(args.layout)
    field = _field(_path(args.checkpoint, out_dir, FIELD_FILE), config, layout, must_exist=True)
    mesh_cfg = config.mesh
    region = (mesh_cfg.region_min, mesh_cfg.region_max) if mesh_cfg.region_min is not None else None
    mesh = extract_mesh(field, layout, region,
                        args.voxel_size if args.voxel_size is not None else mesh_cfg.voxel_size,
                        args.threshold if args.threshold is not None else mesh_cfg.threshold)
    target = save_obj(mesh, out_dir / "mesh.obj")
    print_success(f"网格已导出: {target}（{mesh.triangles.shape[0]} 个三角形）")


HANDLERS = {
    "validate": cmd_validate,
    "rasterize": cmd_rasterize,
    "pretrain": cmd_pretrain,
    "optimize": cmd_optimize,
    "refine": cmd_refine,
    "render": cmd_render,
    "edit": cmd_edit,
    "mesh": cmd_mesh,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    colorama_init()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    out_dir = Path(args.out_dir)
    setup_logging(args.log_level, out_dir / "logs")
    if args.threads:
        torch.set_num_threads(args.threads)
    try:
        config = resolve_run_config(args)
        seed_everything(config.train.seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](args, config, out_dir)
    except LayoutForgeError as e:
        logger.error(f"{args.command} 失败: {e}")
        print_error(f"{args.command}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} 运行异常")
        print_error(f"{args.command}: {type(e).__name__}: {e}")
        return 1
    return 0


def main() -> int:
    return run(sys.argv[1:])
