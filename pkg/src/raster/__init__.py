# src/raster 布局条件图光栅化：相机、语义/深度/天空图与通道编码
from .camera import Camera, load_trajectory, save_trajectory
from .rasterizer import ConditionMaps, encode_condition, rasterize
