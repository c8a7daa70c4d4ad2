"""Corpus ingestion, synthetic data and batch loading."""

from dimaug.data.corpus import ImageCorpus, decode_image, ingest, load_manifest, write_images, write_packed
from dimaug.data.loader import Prefetcher, batch_indices, spawn_streams
from dimaug.data.synthetic import make_manifold, make_toy_corpus, orthonormal_embedding


__all__ = [
    'ImageCorpus',
    'Prefetcher',
    'batch_indices',
    'decode_image',
    'ingest',
    'load_manifest',
    'make_manifold',
    'make_toy_corpus',
    'orthonormal_embedding',
    'spawn_streams',
    'write_images',
    'write_packed',
]
