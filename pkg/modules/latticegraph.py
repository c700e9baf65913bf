"""
Synthetic honeycomb lattices and their ring analysis

Positions are in lattice units (bond length 1, y up). Sites are indexed
A(i, j) = 2·(j·cols + i) and B(i, j) = A(i, j) + 1 with
A(i, j) = i·(√3, 0) + j·(√3/2, 3/2) and B(i, j) = A(i, j) + (0, 1).
"""
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree

from core.exceptions import DefectError, UsageError, ValidationError
from modules.synthdata import ImageBatch
from utils.helpers import make_rng

logger = logging.getLogger(__name__)

MIN_SEPARATION = 0.1
DEFAULT_THRESHOLD = 1.3
MAX_DEGREE = 3
UNCLASSIFIED = -1

RING_CLASSES: Dict[Tuple[int, ...], int] = {
    (6, 6): 1,
    (5, 6): 2,
    (6, 6, 7): 3,
    (6, 6, 6): 4,
    (5, 6, 7): 5,
    (5, 6, 6): 6,
}

A1 = np.array([math.sqrt(3.0), 0.0])
A2 = np.array([math.sqrt(3.0) / 2.0, 1.5])


@dataclass
class PointSet:
    positions: np.ndarray
    species: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if self.species is not None:
            self.species = np.asarray(self.species, dtype=np.int64).reshape(-1)
            if self.species.size != len(self):
                raise ValidationError(f"{self.species.size} species for {len(self)} points")
        if len(self) > 1:
            close = cKDTree(self.positions).query_pairs(MIN_SEPARATION)
            if close:
                i, j = sorted(close)[0]
                raise ValidationError(f"points {i} and {j} are closer than {MIN_SEPARATION} bond lengths")

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class Vacancy:
    site: int


@dataclass(frozen=True)
class StoneWales:
    """Rotate the bond between two neighboring sites by 90° about its midpoint"""
    site_a: int
    site_b: int


Defect = Union[Vacancy, StoneWales]


def site_index(sublattice: str, i: int, j: int, cols: int) -> int:
    base = 2 * (j * cols + i)
    return base if sublattice == 'A' else base + 1


def synth_honeycomb(rows: int, cols: int, defects: Sequence[Defect] = (), jitter_std: float = 0.0,
                    seed: int = 0) -> PointSet:
    """Parallelogram honeycomb patch of rows×cols unit cells

    Stone-Wales rotations are applied first, then vacancies are removed (both
    reference perfect-lattice site indices), then Gaussian jitter is added.
    """
    if rows < 2 or cols < 2:
        raise ValidationError("rows and cols must be at least 2")
    if jitter_std < 0:
        raise ValidationError("jitter_std must be non-negative")
    jj, ii = np.meshgrid(np.arange(rows), np.arange(cols), indexing='ij')
    a_sites = ii.reshape(-1, 1) * A1 + jj.reshape(-1, 1) * A2
    positions = np.empty((2 * a_sites.shape[0], 2))
    positions[0::2] = a_sites
    positions[1::2] = a_sites + np.array([0.0, 1.0])
    n = positions.shape[0]

    removed = set()
    for defect in defects:
        if isinstance(defect, StoneWales):
            a, b = defect.site_a, defect.site_b
            if not (0 <= a < n and 0 <= b < n):
                raise DefectError(f"Stone-Wales bond ({a}, {b}) is outside a lattice of {n} sites")
            if abs(np.linalg.norm(positions[a] - positions[b]) - 1.0) > 1e-6:
                raise DefectError(f"sites {a} and {b} are not bonded")
            mid = (positions[a] + positions[b]) / 2.0
            for site in (a, b):
                dx, dy = positions[site] - mid
                positions[site] = mid + np.array([-dy, dx])
        elif isinstance(defect, Vacancy):
            if not 0 <= defect.site < n:
                raise DefectError(f"vacancy site {defect.site} is outside a lattice of {n} sites")
            removed.add(defect.site)
        else:
            raise UsageError(f"Unknown defect {defect!r}")
    keep = np.array([i for i in range(n) if i not in removed], dtype=np.int64)
    positions = positions[keep]
    if jitter_std > 0:
        positions = positions + make_rng(seed, 'jitter').normal(0.0, jitter_std, size=positions.shape)
    species = np.zeros(len(keep), dtype=np.int64)
    logger.debug(f"Honeycomb {rows}×{cols}: {len(keep)} sites, {len(defects)} defects")
    return PointSet(positions, species)


def random_defects(rows: int, cols: int, stone_wales: int = 0, vacancies: int = 0, seed: int = 0) -> List[Defect]:
    """Seeded interior defects at least 4 cells apart: vertical A-B bonds and single sites"""
    rng = make_rng(seed, 'defects')
    cells = [(i, j) for j in range(2, rows - 2) for i in range(2, cols - 2)]
    order = rng.permutation(len(cells))
    chosen: List[Tuple[int, int]] = []
    for index in order:
        if len(chosen) == stone_wales + vacancies:
            break
        i, j = cells[index]
        if all(max(abs(i - a), abs(j - b)) >= 4 for a, b in chosen):
            chosen.append((i, j))
    if len(chosen) < stone_wales + vacancies:
        raise DefectError(f"a {rows}×{cols} lattice cannot hold {stone_wales + vacancies} separated defects")
    defects: List[Defect] = [StoneWales(site_index('A', i, j, cols), site_index('B', i, j, cols))
                             for i, j in chosen[:stone_wales]]
    defects += [Vacancy(site_index('A', i, j, cols)) for i, j in chosen[stone_wales:]]
    return defects


# --- graph ------------------------------------------------------------------------------

@dataclass
class LatticeGraph:
    """Undirected proximity graph over point indices, degree at most 3"""
    graph: nx.Graph
    positions: np.ndarray
    threshold: float

    @property
    def adjacency(self) -> List[List[int]]:
        return [sorted(self.graph.neighbors(node)) for node in range(self.graph.number_of_nodes())]

    def degree(self, node: int) -> int:
        return self.graph.degree(node)


def build_graph(points: PointSet, threshold: float = DEFAULT_THRESHOLD) -> LatticeGraph:
    """Edges between points closer than threshold, trimmed to each node's 3 nearest

    An edge survives only if both endpoints keep it.
    """
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    graph = nx.Graph()
    graph.add_nodes_from(range(len(points)))
    candidates: Dict[int, List[Tuple[float, int]]] = {i: [] for i in range(len(points))}
    if len(points) > 1:
        for i, j in cKDTree(points.positions).query_pairs(threshold):
            d = float(np.linalg.norm(points.positions[i] - points.positions[j]))
            candidates[i].append((d, j))
            candidates[j].append((d, i))
    kept = {i: {j for _, j in sorted(c)[:MAX_DEGREE]} for i, c in candidates.items()}
    for i, neighbors in kept.items():
        for j in neighbors:
            if i < j and i in kept[j]:
                graph.add_edge(i, j)
    return LatticeGraph(graph=graph, positions=points.positions.copy(), threshold=float(threshold))


# --- rings ------------------------------------------------------------------------------

def canonical_cycle(cycle: Sequence[int]) -> Tuple[int, ...]:
    """Start at the smallest index, walking towards its smaller neighbor"""
    cycle = list(cycle)
    start = cycle.index(min(cycle))
    forward = cycle[start:] + cycle[:start]
    backward = [forward[0]] + forward[:0:-1]
    return tuple(min(forward, backward))


@dataclass
class RingSet:
    rings: List[Tuple[int, ...]] = field(default_factory=list)
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __len__(self) -> int:
        return len(self.rings)

    def census(self) -> Dict[int, int]:
        """Ring count per size"""
        return dict(Counter(len(ring) for ring in self.rings))

    def sizes_at(self, point: int) -> List[int]:
        return sorted(len(ring) for ring in self.rings if point in ring)


def find_rings(graph: LatticeGraph, min_size: int = 5, max_size: int = 7) -> RingSet:
    """All chordless cycles with min_size <= length <= max_size, canonically deduplicated"""
    if min_size < 3 or max_size < min_size:
        raise UsageError("ring sizes must satisfy 3 <= min_size <= max_size")
    unique = set()
    for cycle in nx.chordless_cycles(graph.graph, length_bound=max_size):
        if min_size <= len(cycle) <= max_size:
            unique.add(canonical_cycle(cycle))
    rings = sorted(unique, key=lambda ring: (len(ring), ring))
    centers = np.array([graph.positions[list(ring)].mean(axis=0) for ring in rings]).reshape(-1, 2)
    return RingSet(rings=rings, centers=centers)


def assign_class(point_index: int, rings: RingSet) -> int:
    """Neighborhood class 0-6 from the sizes of the rings through a point; UNCLASSIFIED otherwise"""
    sizes = tuple(rings.sizes_at(point_index))
    if len(sizes) < 2:
        return 0
    return RING_CLASSES.get(sizes, UNCLASSIFIED)


def ring_classes(points: PointSet, threshold: float = DEFAULT_THRESHOLD
                 ) -> Tuple[LatticeGraph, RingSet, np.ndarray]:
    graph = build_graph(points, threshold)
    rings = find_rings(graph)
    classes = np.array([assign_class(i, rings) for i in range(len(points))], dtype=np.int64)
    return graph, rings, classes


# --- rasterization and patches ------------------------------------------------------------

@dataclass(frozen=True)
class LatticeFrame:
    """Mapping between lattice units (y up) and raster pixels (row down)"""
    x0: float
    y1: float
    pixels_per_unit: float
    height: int
    width: int

    def to_pixels(self, positions: np.ndarray) -> np.ndarray:
        """(row, col) pixel coordinates of lattice positions"""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        cols = (positions[:, 0] - self.x0) * self.pixels_per_unit
        rows = (self.y1 - positions[:, 1]) * self.pixels_per_unit
        return np.stack([rows, cols], axis=1)


def lattice_frame(points: PointSet, pixels_per_unit: float, margin: float = 2.0,
                  square: bool = False) -> LatticeFrame:
    """Frame enclosing the points plus a margin; `square` pads the shorter side symmetrically"""
    if pixels_per_unit <= 0:
        raise ValidationError("pixels_per_unit must be positive")
    if len(points):
        lo, hi = points.positions.min(axis=0) - margin, points.positions.max(axis=0) + margin
    else:
        lo, hi = np.full(2, -margin), np.full(2, margin)
    extent = hi - lo
    if square:
        lo = lo - (extent.max() - extent) / 2.0
        extent = np.full(2, extent.max())
        hi = lo + extent
    width = int(math.ceil(extent[0] * pixels_per_unit)) + 1
    height = int(math.ceil(extent[1] * pixels_per_unit)) + 1
    return LatticeFrame(x0=float(lo[0]), y1=float(hi[1]), pixels_per_unit=float(pixels_per_unit),
                        height=height, width=width)


def rasterize_lattice(points: PointSet, pixels_per_unit: float = 8.0, spot_sigma: float = 0.2,
                      frame: Optional[LatticeFrame] = None) -> np.ndarray:
    """Sum of Gaussian spots (sigma in lattice units) at the points, scaled to a maximum of 1"""
    if spot_sigma <= 0:
        raise ValidationError("spot_sigma must be positive")
    frame = frame or lattice_frame(points, pixels_per_unit)
    image = np.zeros((frame.height, frame.width))
    sigma = spot_sigma * frame.pixels_per_unit
    reach = int(math.ceil(4 * sigma))
    for row, col in frame.to_pixels(points.positions):
        r0, r1 = max(0, int(row) - reach), min(frame.height, int(row) + reach + 2)
        c0, c1 = max(0, int(col) - reach), min(frame.width, int(col) + reach + 2)
        if r0 >= r1 or c0 >= c1:
            continue
        rr, cc = np.mgrid[r0:r1, c0:c1]
        image[r0:r1, c0:c1] += np.exp(-((rr - row) ** 2 + (cc - col) ** 2) / (2 * sigma * sigma))
    peak = image.max()
    if peak > 0:
        image /= peak
    return image.astype(np.float32)


@dataclass(frozen=True)
class GridCenters:
    """Patch centers at stride//2 + k·stride along both axes"""
    stride: int


def default_window(pixels_per_unit: float) -> int:
    """Odd window covering the three rings around an atom (radius 2 bond lengths)"""
    return 2 * int(math.ceil(2.0 * pixels_per_unit)) + 1


def extract_patches(image: np.ndarray, centers: Union[GridCenters, np.ndarray, PointSet], window: int,
                    frame: Optional[LatticeFrame] = None) -> ImageBatch:
    """window×window crops around each center, zero-padded at the borders

    Centers are a GridCenters stride, an N×2 array of (row, col) pixels, or a
    PointSet mapped through `frame`. Patch order follows center order.
    """
    image = np.asarray(image, dtype=np.float32)
    height, width = image.shape
    if window % 2 == 0 or window < 1:
        raise UsageError("window must be a positive odd number of pixels")
    if window > min(height, width):
        raise UsageError(f"window {window} is larger than the {height}×{width} image")
    if isinstance(centers, GridCenters):
        if centers.stride < 1:
            raise UsageError("stride must be positive")
        rows = np.arange(centers.stride // 2, height, centers.stride)
        cols = np.arange(centers.stride // 2, width, centers.stride)
        pixel_centers = np.array([(r, c) for r in rows for c in cols], dtype=np.float64).reshape(-1, 2)
    elif isinstance(centers, PointSet):
        if frame is None:
            raise UsageError("point centers need the lattice frame of the raster")
        pixel_centers = frame.to_pixels(centers.positions)
    else:
        pixel_centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)

    index = np.rint(pixel_centers).astype(np.int64)
    outside = (index[:, 0] < 0) | (index[:, 0] >= height) | (index[:, 1] < 0) | (index[:, 1] >= width)
    if np.any(outside):
        raise UsageError(f"{int(outside.sum())} centers fall outside the image")
    half = window // 2
    padded = np.pad(image, half)
    patches = np.empty((len(index), window, window), dtype=np.float32)
    for n, (r, c) in enumerate(index):
        patches[n] = padded[r:r + window, c:c + window]
    return ImageBatch(images=np.clip(patches, 0.0, 1.0), centers=pixel_centers)


def atom_patches(points: PointSet, pixels_per_unit: float = 8.0, spot_sigma: float = 0.2,
                 window: Optional[int] = None, threshold: float = DEFAULT_THRESHOLD
                 ) -> Tuple[ImageBatch, RingSet, np.ndarray]:
    """Atom-centered patches labeled with ring classes; unclassified atoms are left out

    The ring sizes through each center atom ride along as `extras['ring_sizes']`
    (N×3, zero padded). Returns the batch, the ring set and the class of every atom.
    """
    frame = lattice_frame(points, pixels_per_unit)
    image = rasterize_lattice(points, pixels_per_unit, spot_sigma, frame)
    _, rings, classes = ring_classes(points, threshold)
    selected = np.flatnonzero(classes != UNCLASSIFIED)
    batch = extract_patches(image, PointSet(points.positions[selected]), window or default_window(pixels_per_unit),
                            frame)
    sizes = np.zeros((len(selected), 3), dtype=np.int64)
    for row, point in enumerate(selected):
        found = rings.sizes_at(int(point))[:3]
        sizes[row, :len(found)] = found
    labeled = ImageBatch(images=batch.images, labels=classes[selected], centers=batch.centers,
                         extras={'ring_sizes': sizes, 'atom_index': selected})
    return labeled, rings, classes
