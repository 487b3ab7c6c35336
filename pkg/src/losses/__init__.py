# src/losses 辅助损失：特征一致性、单目深度对齐、天空密度与细化MSE
from .mono_depth import MonoDepthProvider, SyntheticMonoDepth
from .objectives import (FeatureEncoder, depth_align, depth_loss, feature_consistency_loss, refine_mse,
                         sky_loss)
