#!/usr/bin/env python3
"""天空模型 R_sky：单位方向 -> 球谐基 -> MLP -> RGB"""
import torch
import torch.nn as nn

from src.common.errors import ConfigError, InvalidDirectionError

from .hash_grid import init_linear_, seeded_generator

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
         -0.4570457994644658, 1.445305721320277, -0.5900435899266435)
MAX_SH_DEGREE = 4
DIRECTION_TOLERANCE = 1e-6


def spherical_harmonics(directions: torch.Tensor, degree: int) -> torch.Tensor:
    """实球谐基，degree 为频带数（degree=4 对应 l=0..3，共16项）"""
    x, y, z = directions.unbind(-1)
    terms = [torch.full_like(x, SH_C0)]
    if degree > 1:
        terms += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree > 2:
        xx, yy, zz = x * x, y * y, z * z
        terms += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree > 3:
        terms += [
            SH_C3[0] * y * (3.0 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4.0 * zz - xx - yy),
            SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            SH_C3[4] * x * (4.0 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3.0 * yy),
        ]
    return torch.stack(terms, dim=-1)


class SkyModel(nn.Module):
    def __init__(self, degree: int = MAX_SH_DEGREE, hidden: int = 64, seed: int = 0):
        super().__init__()
        if not 1 <= degree <= MAX_SH_DEGREE:
            raise ConfigError(f"天空球谐阶数必须在 1..{MAX_SH_DEGREE}", {"degree": degree})
        self.degree = degree
        gen = seeded_generator(seed, "sky")
        first = nn.Linear(degree * degree, hidden)
        second = nn.Linear(hidden, 3)
        init_linear_(first, gen)
        init_linear_(second, gen)
        self.mlp = nn.Sequential(first, nn.ReLU(), second)

    def forward(self, directions: torch.Tensor) -> torch.Tensor:
        """directions: (N, 3) 单位向量 -> (N, 3) RGB ∈ [0, 1]"""
        if directions.numel():
            norms = directions.norm(dim=-1)
            if float((norms - 1.0).abs().max()) > DIRECTION_TOLERANCE:
                raise InvalidDirectionError("天空查询方向必须为单位向量", {"max_norm_error": float((norms - 1.0).abs().max())})
        basis = spherical_harmonics(directions.to(self.mlp[0].weight.dtype), self.degree)
        return torch.sigmoid(self.mlp(basis))
