"""Synthgen Service - 決定的な合成顕微鏡シーンとコーパス"""

from src.services.synthgen.corpus import (
    CorpusProfile,
    allocate_counts,
    emit_corpus,
    parse_profile,
    plan_corpus,
)
from src.services.synthgen.scene import PlacedMask, RenderedScene, generate_scene, render_scene
from src.services.synthgen.styles import DEFAULT_STYLES, derive_style, resolve_styles

__all__ = [
    "CorpusProfile",
    "allocate_counts",
    "emit_corpus",
    "parse_profile",
    "plan_corpus",
    "PlacedMask",
    "RenderedScene",
    "generate_scene",
    "render_scene",
    "DEFAULT_STYLES",
    "derive_style",
    "resolve_styles",
]
