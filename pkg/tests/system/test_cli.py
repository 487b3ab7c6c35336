# tests/system/test_cli.py
import json
from pathlib import Path

import allure
import pytest
import yaml

from src.cli.main import run
from src.common.logger import setup_logging
from src.field.checkpoint import load_field, save_field
from src.field.scene_field import SceneField
from src.layout.layout_io import load_layout
from src.raster.export import load_pfm
from src.train.config import load_run_config

SAMPLES_DIR = Path(__file__).resolve().parents[2] / "samples"
LAYOUT = str(SAMPLES_DIR / "layout.json")
TRAJECTORY = str(SAMPLES_DIR / "trajectory.json")
EDITS = str(SAMPLES_DIR / "edits.json")

TINY_CONFIG = {
    "hash_grid": {"levels": 2, "base_resolution": 4, "per_level_scale": 2.0, "table_size": 256,
                  "decoder_widths": [8]},
    "field": {"sky_hidden": 8},
    "render": {"samples_per_ray": 8, "far": 60.0},
    "schedule": {"steps": 50},
    "denoiser": {"hidden_channels": 8, "layers": 2, "time_embedding_dim": 8},
    "adapter": {"rank": 2},
    "train": {"coarse_resolution": 16, "refine_resolution": 16, "eval_resolution": 16, "eval_cameras": 2,
              "pretrain_resolution": 16, "pretrain_views": 1, "pretrain_steps": 2, "pretrain_batch": 2,
              "optimize_steps": 2, "refine_steps": 1, "refine_stride": 10, "log_every": 0},
    "mesh": {"voxel_size": 1.0},
}


@pytest.fixture(autouse=True)
def restore_logging():
    yield
    setup_logging("WARNING")


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY_CONFIG), encoding="utf-8")
    return str(path)


@pytest.fixture
def saved_field(tmp_path, tiny_config):
    """按 tiny 配置新建的场，保存为 <tmp>/out/field.ckpt"""
    config = load_run_config(tiny_config)
    out_dir = tmp_path / "out"
    save_field(SceneField(config.field, load_layout(LAYOUT)), out_dir / "field.ckpt")
    return out_dir


def _cli(*args, log_level="WARNING"):
    return run([*args, "--log-level", log_level])


@allure.feature("命令行")
class TestCliBasics:

    @allure.story("校验布局")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_validate(self, tmp_path):
        assert _cli("validate", "--layout", LAYOUT, "--out-dir", str(tmp_path)) == 0

    @allure.story("布局校验失败退出码为3")
    def test_validate_duplicate_ids(self, tmp_path):
        document = json.loads(Path(LAYOUT).read_text(encoding="utf-8"))
        document["instances"][1]["id"] = document["instances"][0]["id"]
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(document), encoding="utf-8")
        assert _cli("validate", "--layout", str(bad), "--out-dir", str(tmp_path)) == 3

    @allure.story("布局文件缺失")
    def test_missing_layout(self, tmp_path):
        assert _cli("validate", "--layout", str(tmp_path / "absent.json"), "--out-dir", str(tmp_path)) == 3

    @allure.story("用法错误退出码为2")
    def test_usage_errors(self, tmp_path):
        assert run([]) == 2
        assert run(["teleport"]) == 2
        assert run(["rasterize", "--layout", LAYOUT]) == 2

    @allure.story("配置错误退出码为3")
    def test_bad_config(self, tmp_path):
        config = tmp_path / "bad.yaml"
        config.write_text(yaml.safe_dump({"train": {"coarse_resolution": 100}}), encoding="utf-8")
        assert _cli("validate", "--layout", LAYOUT, "--config", str(config), "--out-dir", str(tmp_path)) == 3

    @allure.story("输出条件图")
    def test_rasterize(self, tmp_path):
        out_dir = tmp_path / "maps"
        code = _cli("rasterize", "--layout", LAYOUT, "--trajectory", TRAJECTORY, "--resolution", "16",
                    "--out-dir", str(out_dir))
        assert code == 0
        for index in range(3):
            stem = out_dir / f"view_{index:04d}"
            for suffix in ("_semantic.png", "_depth.pfm", "_sky.png"):
                assert Path(f"{stem}{suffix}").exists()
        assert load_pfm(out_dir / "view_0000_depth.pfm").shape == (16, 16)
        assert (out_dir / "logs" / "layoutforge.log").exists()


@allure.feature("命令行")
class TestCliWithField:

    @allure.story("渲染")
    def test_render(self, saved_field, tiny_config):
        code = _cli("render", "--layout", LAYOUT, "--trajectory", TRAJECTORY, "--config", tiny_config,
                    "--resolution", "8", "--out-dir", str(saved_field))
        assert code == 0
        for name in ("frame_0000.png", "frame_0002_depth.pfm", "frame_0001_semantic.png"):
            assert (saved_field / name).exists()

    @allure.story("缺少场检查点")
    def test_render_without_checkpoint(self, tmp_path, tiny_config):
        code = _cli("render", "--layout", LAYOUT, "--trajectory", TRAJECTORY, "--config", tiny_config,
                    "--out-dir", str(tmp_path / "empty"))
        assert code == 1

    @allure.story("损坏的检查点")
    def test_corrupt_checkpoint(self, tmp_path, tiny_config):
        out_dir = tmp_path / "corrupt"
        out_dir.mkdir()
        (out_dir / "field.ckpt").write_bytes(b"JUNK" + bytes(32))
        code = _cli("mesh", "--layout", LAYOUT, "--config", tiny_config, "--out-dir", str(out_dir))
        assert code == 1

    @allure.story("网格导出")
    def test_mesh(self, saved_field, tiny_config):
        code = _cli("mesh", "--layout", LAYOUT, "--config", tiny_config, "--voxel-size", "2.0",
                    "--out-dir", str(saved_field))
        assert code == 0
        assert (saved_field / "mesh.obj").exists()

    @allure.story("编辑脚本")
    def test_edit(self, saved_field, tiny_config):
        code = _cli("edit", "--layout", LAYOUT, "--edits", EDITS, "--config", tiny_config,
                    "--out-dir", str(saved_field))
        assert code == 0
        layout = load_layout(saved_field / "layout_edited.json")
        assert layout.has_instance(4) and layout.instance(4).is_object
        assert load_field(saved_field / "field_edited.ckpt").object_ids() == [3, 4]


@allure.feature("命令行")
class TestCliPipeline:

    @allure.story("预训练、优化、细化、渲染、网格")
    @allure.severity(allure.severity_level.CRITICAL)
    def test_tiny_pipeline(self, tmp_path, tiny_config):
        out_dir = str(tmp_path / "run")
        common = ("--config", tiny_config, "--out-dir", out_dir, "--seed", "3")
        with allure.step("预训练去噪器"):
            assert _cli("pretrain", "--layout", LAYOUT, "--trajectory", TRAJECTORY, *common) == 0
            assert (tmp_path / "run" / "denoiser.ckpt").exists()
        with allure.step("场景优化"):
            assert _cli("optimize", "--layout", LAYOUT, "--trajectory", TRAJECTORY, *common) == 0
            assert (tmp_path / "run" / "field.ckpt").exists()
        with allure.step("布局感知细化"):
            assert _cli("refine", "--layout", LAYOUT, "--trajectory", TRAJECTORY, *common) == 0
        with allure.step("渲染与网格"):
            assert _cli("render", "--layout", LAYOUT, "--trajectory", TRAJECTORY, "--resolution", "8",
                        *common) == 0
            assert _cli("mesh", "--layout", LAYOUT, "--voxel-size", "2.0", *common) == 0
        metrics = (tmp_path / "run" / "metrics.csv").read_text(encoding="utf-8").splitlines()
        phases = {line.split(",")[1] for line in metrics[1:]}
        assert {"optimize", "optimize_eval", "refine", "refine_eval"} <= phases
