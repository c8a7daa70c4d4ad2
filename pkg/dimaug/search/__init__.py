"""Policy search and the end-to-end pipeline."""

from dimaug.search.dda import (
    DDAObjective,
    SearchResult,
    SelfAugmentObjective,
    dda_search,
    run_policy_search,
    selfaugment_search,
)
from dimaug.search.pipeline import Pipeline, PipelineArtifacts, run_pipeline
from dimaug.search.rotation import train_rotation_head


__all__ = [
    'DDAObjective',
    'Pipeline',
    'PipelineArtifacts',
    'SearchResult',
    'SelfAugmentObjective',
    'dda_search',
    'run_pipeline',
    'run_policy_search',
    'selfaugment_search',
    'train_rotation_head',
]
