"""Synthetic multi-view head corpus with exact ground truth."""

from .corpus import (
    CORPUS_FORMAT,
    generate_corpus,
    load_manifest,
    load_view,
    render_view,
    sample_factors,
    samples_for,
    scene_to_world,
)
from .scene import (
    EXPRESSION_RANGES,
    IDENTITY_RANGES,
    LANDMARK_NAMES,
    REGIONS,
    Scene,
    SceneFactors,
    build_scene,
    neutral_expression,
    sample_expression,
    sample_identity,
)

__all__ = [
    "CORPUS_FORMAT", "generate_corpus", "load_manifest", "load_view",
    "render_view", "sample_factors", "samples_for", "scene_to_world",
    "EXPRESSION_RANGES", "IDENTITY_RANGES", "LANDMARK_NAMES", "REGIONS",
    "Scene", "SceneFactors", "build_scene", "neutral_expression",
    "sample_expression", "sample_identity",
]
