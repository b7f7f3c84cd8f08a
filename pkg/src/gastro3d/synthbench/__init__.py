from .evaluation import EvalReport, align_similarity, evaluate
from .render import RenderResult, default_intrinsics, render_frame, render_views
from .scene import (
    HIGH_TEXTURE,
    LOW_TEXTURE,
    CavitySurface,
    SyntheticScene,
    TextureField,
    interior_loop_trajectory,
)

__all__ = [
    "CavitySurface",
    "EvalReport",
    "HIGH_TEXTURE",
    "LOW_TEXTURE",
    "RenderResult",
    "SyntheticScene",
    "TextureField",
    "align_similarity",
    "default_intrinsics",
    "evaluate",
    "interior_loop_trajectory",
    "render_frame",
    "render_views",
]
