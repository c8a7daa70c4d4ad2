"""Image corpus ingestion.

Supported sources:
    * a single PNG or PPM (P6) file;
    * a directory of PNG/PPM files, where sorted class sub-directories become labels;
    * a packed record file: little-endian ``<u32 count><u32 H><u32 W><u32 C>`` header followed by
      ``count`` records of H*W*C bytes (HWC order), each optionally followed by one label byte.

Pixels are normalized to [0, 1] and stored as float32 NCHW.
"""

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from loguru import logger
from PIL import Image, UnidentifiedImageError

from dimaug.augment.base import bilinear_resize
from dimaug.exceptions import CorpusError
from dimaug.settings import AppSettings


IMAGE_SUFFIXES = ('.png', '.ppm')
SPLIT_NAMES = ('train', 'val', 'test')
PACKED_HEADER = struct.Struct('<4I')


@dataclass
class ImageCorpus:
    """Decoded images with optional labels and split manifests.

    Attributes:
        images: (N, C, H, W) float32 array in [0, 1].
        ids: Stable item ids (relative paths or record ids).
        labels: Optional (N,) integer class indices.
        source: Where the corpus was read from.
        class_names: Label names when known.
        splits: Split name to list of item ids; splits are disjoint.
    """

    images: np.ndarray
    ids: List[str]
    labels: Optional[np.ndarray] = None
    source: str = ''
    class_names: List[str] = field(default_factory=list)
    splits: Dict[str, List[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.images):
            raise CorpusError(f'{len(self.ids)} ids for {len(self.images)} images')
        if self.labels is not None and len(self.labels) != len(self.images):
            raise CorpusError(f'{len(self.labels)} labels for {len(self.images)} images')
        if len(set(self.ids)) != len(self.ids):
            raise CorpusError('Item ids must be unique')

    def __len__(self) -> int:
        return len(self.images)

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    @property
    def resolution(self) -> int:
        return int(self.images.shape[-1])

    def subset(self, ids: Sequence[str]) -> 'ImageCorpus':
        """Items with the given ids, in the given order."""
        position = {item_id: i for i, item_id in enumerate(self.ids)}
        missing = [i for i in ids if i not in position]
        if missing:
            raise CorpusError(f'Unknown item ids: {missing[:5]}')
        idx = np.array([position[i] for i in ids], dtype=np.int64)
        return ImageCorpus(
            images=self.images[idx],
            ids=list(ids),
            labels=None if self.labels is None else self.labels[idx],
            source=self.source,
            class_names=list(self.class_names),
        )

    def split(self, name: str) -> 'ImageCorpus':
        if name not in self.splits:
            raise CorpusError(f'Corpus from {self.source!r} has no {name!r} split')
        return self.subset(self.splits[name])

    def with_splits(self, splits: Dict[str, List[str]]) -> 'ImageCorpus':
        """Attach split manifests after validating names, ids and disjointness."""
        unknown = set(splits) - set(SPLIT_NAMES)
        if unknown:
            raise CorpusError(f'Unknown split names {sorted(unknown)}; expected {SPLIT_NAMES}')
        known = set(self.ids)
        seen: Dict[str, str] = {}
        for name, ids in splits.items():
            for item_id in ids:
                if item_id not in known:
                    raise CorpusError(f'Split {name!r} names unknown item {item_id!r}')
                if item_id in seen:
                    raise CorpusError(f'Item {item_id!r} appears in both {seen[item_id]!r} and {name!r}')
                seen[item_id] = name
        self.splits = {name: list(ids) for name, ids in splits.items()}
        return self


def _normalize(pixels: np.ndarray) -> np.ndarray:
    """uint8 HWC -> float32 CHW in [0, 1]; byte 255 maps to exactly 1.0."""
    return (pixels.astype(np.float64) / 255.0).astype(np.float32).transpose(2, 0, 1)


def decode_image(path: Union[str, Path], channels: int = 3) -> np.ndarray:
    """Decode one PNG/PPM file to float32 CHW.

    Raises:
        CorpusError: Naming the file if it cannot be decoded.
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            pixels = np.asarray(img.convert('RGB' if channels == 3 else 'L'), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise CorpusError(f'Cannot decode image {path}: {e}') from e
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return _normalize(pixels)


def _resize_all(images: List[np.ndarray], resolution: Optional[int], source: str) -> np.ndarray:
    if resolution is not None:
        images = [
            img if img.shape[1:] == (resolution, resolution) else bilinear_resize(img, resolution, resolution)
            for img in images
        ]
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise CorpusError(f'{source}: images have differing shapes {sorted(shapes)}; set a resolution')
    return np.stack(images).astype(np.float32)


def _collect_files(root: Path) -> List[tuple]:
    """(path, class name or None) pairs in sorted order."""
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    labeled = [
        (f, d.name) for d in class_dirs for f in sorted(d.rglob('*')) if f.suffix.lower() in IMAGE_SUFFIXES
    ]
    if labeled:
        return labeled
    return [(f, None) for f in sorted(root.iterdir()) if f.is_file() and f.suffix.lower() in IMAGE_SUFFIXES]


def _ingest_directory(root: Path, resolution: Optional[int], channels: int) -> ImageCorpus:
    entries = _collect_files(root)
    if not entries:
        raise CorpusError(f'No PNG/PPM images found under {root}')
    workers = max(1, AppSettings.DECODE_WORKERS)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        decoded = list(pool.map(lambda entry: decode_image(entry[0], channels), entries))
    ids = [f.relative_to(root).as_posix() for f, _ in entries]
    class_names = sorted({c for _, c in entries if c is not None})
    labels = None
    if class_names:
        lookup = {name: i for i, name in enumerate(class_names)}
        labels = np.array([lookup[c] for _, c in entries], dtype=np.int64)
    logger.info(f'Decoded {len(entries)} images from {root} with {workers} workers')
    return ImageCorpus(
        images=_resize_all(decoded, resolution, str(root)),
        ids=ids,
        labels=labels,
        source=str(root),
        class_names=class_names,
    )


def _ingest_packed(path: Path, resolution: Optional[int]) -> ImageCorpus:
    payload = path.read_bytes()
    if len(payload) < PACKED_HEADER.size:
        raise CorpusError(f'{path}: too short for a packed header')
    count, height, width, channels = PACKED_HEADER.unpack_from(payload)
    if count == 0:
        raise CorpusError(f'{path}: empty corpus (count=0)')
    if channels not in (1, 3) or height == 0 or width == 0:
        raise CorpusError(f'{path}: unsupported record shape {height}x{width}x{channels}')
    record = height * width * channels
    body = len(payload) - PACKED_HEADER.size
    if body == count * record:
        has_labels = False
    elif body == count * (record + 1):
        has_labels = True
    else:
        raise CorpusError(
            f'{path}: corrupt packed file ({body} body bytes for {count} records of {record} bytes)'
        )
    stride = record + int(has_labels)
    raw = np.frombuffer(payload, dtype=np.uint8, offset=PACKED_HEADER.size).reshape(count, stride)
    pixels = raw[:, :record].reshape(count, height, width, channels)
    images = [_normalize(p) for p in pixels]
    labels = raw[:, record].astype(np.int64) if has_labels else None
    return ImageCorpus(
        images=_resize_all(images, resolution, str(path)),
        ids=[f'record-{i:06d}' for i in range(count)],
        labels=labels,
        source=str(path),
    )


def load_manifest(path: Union[str, Path]) -> Dict[str, List[str]]:
    """Read a split manifest ``{"train": [...], "val": [...], "test": [...]}``."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise CorpusError(f'Split manifest not found: {path}') from e
    except json.JSONDecodeError as e:
        raise CorpusError(f'Split manifest {path} is not valid JSON: {e}') from e
    if not isinstance(raw, dict) or not all(isinstance(v, list) for v in raw.values()):
        raise CorpusError(f'Split manifest {path} must map split names to id lists')
    return {name: [str(i) for i in ids] for name, ids in raw.items()}


def ingest(
    path: Union[str, Path],
    manifest: Optional[Union[str, Path]] = None,
    resolution: Optional[int] = None,
    channels: int = 3,
) -> ImageCorpus:
    """Read a corpus from a file or directory.

    Args:
        path: Image file, image directory, or packed record file.
        manifest: Optional split manifest JSON.
        resolution: Bilinear resize target (square); None keeps the source size.
        channels: 3 for RGB, 1 for grayscale decoding of PNG/PPM sources.

    Returns:
        ImageCorpus: Items in deterministic order (sorted paths or record index).

    Raises:
        CorpusError: If the source is missing, corrupt or empty.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f'Corpus path not found: {path}')
    if path.is_dir():
        corpus = _ingest_directory(path, resolution, channels)
    elif path.suffix.lower() in IMAGE_SUFFIXES:
        corpus = ImageCorpus(
            images=_resize_all([decode_image(path, channels)], resolution, str(path)),
            ids=[path.name],
            source=str(path),
        )
    else:
        corpus = _ingest_packed(path, resolution)
    if manifest is not None:
        corpus.with_splits(load_manifest(manifest))
    logger.info(f'Ingested {len(corpus)} items from {path} (labeled={corpus.labeled})')
    return corpus


def to_bytes(images: np.ndarray) -> np.ndarray:
    """float [0, 1] NCHW -> uint8 NHWC, rounding to the nearest byte."""
    return np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8).transpose(
        0, 2, 3, 1
    )


def write_packed(path: Union[str, Path], images: np.ndarray, labels: Optional[np.ndarray] = None) -> Path:
    """Write images (and optional labels below 256) in the packed record format."""
    path = Path(path)
    pixels = to_bytes(images)
    count, height, width, channels = pixels.shape
    records = pixels.reshape(count, -1)
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != count or labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
            raise CorpusError('Packed labels must be one byte per record')
        records = np.concatenate([records, labels.astype(np.uint8).reshape(-1, 1)], axis=1)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('wb') as f:
        f.write(PACKED_HEADER.pack(count, height, width, channels))
        f.write(np.ascontiguousarray(records).tobytes())
    logger.debug(f'Wrote {count} packed records to {path}')
    return path


def write_images(directory: Union[str, Path], corpus: ImageCorpus) -> Path:
    """Write a corpus as PNG files, one sub-directory per class when labeled."""
    directory = Path(directory)
    pixels = to_bytes(corpus.images)
    for i, item in enumerate(pixels):
        if corpus.labels is not None:
            name = corpus.class_names[corpus.labels[i]] if corpus.class_names else f'class{corpus.labels[i]}'
            target = directory / name / f'{i:06d}.png'
        else:
            target = directory / f'{i:06d}.png'
        target.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(item[:, :, 0] if item.shape[2] == 1 else item).save(target)
    return directory
