"""
On-disk formats: the VDT image container, IDX ingestion and the lattice CSVs

VDT layout (little-endian): magic "VDT1" | version u32 | N u32 | H u32 | W u32 |
flags u32 (bit0 labels, bit1 meta) | N·H·W float32 | N u32 labels | N·2 float32
meta | CRC32 of everything before it.
"""
import gzip
import logging
import struct
import zlib
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from config.settings import Config
from core.exceptions import ChecksumError, DataError, FormatError, LengthError, VersionError
from modules.latticegraph import PointSet, RingSet
from modules.synthdata import ImageBatch

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

VDT_MAGIC = b'VDT1'
VDT_HEADER = struct.Struct('<4sIIIII')
FLAG_LABELS = 1
FLAG_META = 2

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _write_bytes(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e}")


def _write_csv(frame: pd.DataFrame, path: PathLike) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format='%.9g')
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e}")


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    try:
        return path.read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read {path}: {e}")


# --- VDT ----------------------------------------------------------------------------

def encode_vdt(batch: ImageBatch) -> bytes:
    n, h, w = batch.images.shape
    flags = (FLAG_LABELS if batch.labels is not None else 0) | (FLAG_META if batch.meta is not None else 0)
    parts = [VDT_HEADER.pack(VDT_MAGIC, Config.VDT_VERSION, n, h, w, flags),
             batch.images.astype('<f4').tobytes()]
    if batch.labels is not None:
        parts.append(batch.labels.astype('<u4').tobytes())
    if batch.meta is not None:
        parts.append(batch.meta.astype('<f4').tobytes())
    body = b''.join(parts)
    return body + struct.pack('<I', zlib.crc32(body) & 0xFFFFFFFF)


def decode_vdt(blob: bytes) -> ImageBatch:
    if len(blob) < VDT_HEADER.size + 4:
        raise LengthError(f"VDT blob of {len(blob)} bytes is shorter than its header")
    magic, version, n, h, w, flags = VDT_HEADER.unpack_from(blob, 0)
    if magic != VDT_MAGIC:
        raise FormatError(f"Bad VDT magic {magic!r}")
    if version != Config.VDT_VERSION:
        raise VersionError(f"VDT version {version} is not supported (expected {Config.VDT_VERSION})")
    pixels = n * h * w
    expected = VDT_HEADER.size + 4 * pixels + 4
    if flags & FLAG_LABELS:
        expected += 4 * n
    if flags & FLAG_META:
        expected += 8 * n
    if len(blob) != expected:
        raise LengthError(f"VDT blob holds {len(blob)} bytes, header implies {expected}")
    body, (stored,) = blob[:-4], struct.unpack('<I', blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise ChecksumError("VDT checksum mismatch")

    offset = VDT_HEADER.size
    images = np.frombuffer(blob, dtype='<f4', count=pixels, offset=offset).reshape(n, h, w)
    offset += 4 * pixels
    labels = meta = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(blob, dtype='<u4', count=n, offset=offset).astype(np.int64)
        offset += 4 * n
    if flags & FLAG_META:
        meta = np.frombuffer(blob, dtype='<f4', count=2 * n, offset=offset).reshape(n, 2)
    return ImageBatch(images=images.astype(np.float32), labels=labels,
                      meta=None if meta is None else meta.astype(np.float32))


def write_vdt(batch: ImageBatch, path: PathLike) -> None:
    _write_bytes(path, encode_vdt(batch))
    logger.debug(f"Wrote {len(batch)} images to {path}")


def read_vdt(path: PathLike) -> ImageBatch:
    return decode_vdt(_read_bytes(path))


# --- IDX ------------------------------------------------------------------------------

def read_idx(path: PathLike) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed)

    Image files (magic 0x00000803) are scaled to [0, 1] float32; label files
    (0x00000801) come back as int64.
    """
    blob = _read_bytes(path)
    if blob[:2] == b'\x1f\x8b':
        blob = gzip.decompress(blob)
    if len(blob) < 4:
        raise LengthError(f"{path}: IDX file too short for its magic")
    (magic,) = struct.unpack('>I', blob[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"{path}: unknown IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(blob) < 4 + 4 * ndim:
        raise LengthError(f"{path}: IDX header truncated")
    dims = struct.unpack(f'>{ndim}I', blob[4:4 + 4 * ndim])
    count = int(np.prod(dims))
    payload = blob[4 + 4 * ndim:]
    if len(payload) != count:
        raise LengthError(f"{path}: IDX payload holds {len(payload)} bytes, dims {dims} need {count}")
    values = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    if magic == IDX_LABELS:
        return values.astype(np.int64)
    return values.astype(np.float32) / np.float32(255.0)


def read_idx_batch(images_path: PathLike, labels_path: Optional[PathLike] = None,
                   limit: Optional[int] = None) -> ImageBatch:
    images = read_idx(images_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected N×H×W images, got {images.shape}")
    labels = read_idx(labels_path) if labels_path else None
    if labels is not None and labels.shape[0] != images.shape[0]:
        raise LengthError(f"{labels.shape[0]} labels for {images.shape[0]} images")
    if limit is not None:
        images = images[:limit]
        labels = None if labels is None else labels[:limit]
    return ImageBatch(images=images, labels=labels)


# --- lattice CSVs -----------------------------------------------------------------------

def write_points(points: PointSet, path: PathLike) -> None:
    frame = pd.DataFrame({'x': points.positions[:, 0], 'y': points.positions[:, 1]})
    frame['species'] = points.species if points.species is not None else 0
    _write_csv(frame, path)


def read_points(path: PathLike) -> PointSet:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Cannot read point set {path}: {e}")
    missing = {'x', 'y'} - set(frame.columns)
    if missing:
        raise FormatError(f"{path}: missing columns {sorted(missing)}")
    species = frame['species'].to_numpy(dtype=np.int64) if 'species' in frame else None
    return PointSet(frame[['x', 'y']].to_numpy(dtype=np.float64), species)


def write_rings(rings: RingSet, path: PathLike) -> None:
    """One row per ring: size, centroid and the ring's point indices in traversal order"""
    width = max((len(r) for r in rings.rings), default=0)
    rows = []
    for ring, center in zip(rings.rings, rings.centers):
        row = {'size': len(ring), 'center_x': center[0], 'center_y': center[1]}
        row.update({f'i{j}': (ring[j] if j < len(ring) else pd.NA) for j in range(width)})
        rows.append(row)
    columns = ['size', 'center_x', 'center_y'] + [f'i{j}' for j in range(width)]
    frame = pd.DataFrame(rows, columns=columns)
    for j in range(width):
        frame[f'i{j}'] = frame[f'i{j}'].astype('Int64')
    _write_csv(frame, path)
