# src/train 场景优化：运行配置、画师数据、相机采样、预训练、优化/细化循环与编辑
from .config import GUIDANCE_MODES, MeshConfig, RunConfig, TrainConfig, load_run_config, run_config_from_dict, run_config_to_dict
from .editing import (ChangeStyle, EditOutcome, InsertStuff, RemoveObject, RemoveStuff, RepeatObject, ScaleObject,
                      TransformObject, apply_edit, edit_scene, load_edit_script, parse_edit_script)
from .optimize import (GuidanceStack, MetricsLog, SceneTrainer, TrainResult, evaluate_painter_distance,
                       optimize_scene, refine_scene, semantic_agreement)
from .painter import PainterOracle
from .pretrain import PretrainReport, build_dataset, pretrain_toy_denoiser
from .trajectory import TrajectorySampler
