# src/mesh 密度场等值面网格提取与 OBJ 导出
from .extract import (DensityVolume, TriangleMesh, default_region, extract_mesh, field_density_fn,
                      mesh_from_volume, sample_density, save_obj)
