"""
Dataset files, seed splitting and synthetic benchmark generation

File formats (UTF-8, tab separated, one record per line):

- triples:    head<TAB>relation<TAB>tail
- alignments: kg1_entity<TAB>kg2_entity
- visual:     entity<TAB>f1<TAB>...<TAB>f_dv   (no line = no image)
"""

import logging
import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Tuple

import networkx as nx
import numpy as np
import torch

from poincare_align.exceptions import DataFormatError, InvalidInputError
from poincare_align.geometry import DTYPE
from poincare_align.graph import MergedGraph, TripleStore, disjoint_union
from poincare_align.train import SeedAlignments

logger = logging.getLogger(__name__)

TRIPLES1_FILE = "triples_1.tsv"
TRIPLES2_FILE = "triples_2.tsv"
ALIGNMENTS_FILE = "alignments.tsv"
VISUAL1_FILE = "visual_1.tsv"
VISUAL2_FILE = "visual_2.tsv"


@dataclass
class DatasetPaths:
    triples1: str
    triples2: str
    alignments: str
    visual1: Optional[str] = None
    visual2: Optional[str] = None

    @classmethod
    def in_directory(cls, directory: str, with_visual: bool = True) -> "DatasetPaths":
        """Default file names inside ``directory``."""
        join = lambda name: os.path.join(directory, name)  # noqa: E731
        return cls(
            join(TRIPLES1_FILE),
            join(TRIPLES2_FILE),
            join(ALIGNMENTS_FILE),
            join(VISUAL1_FILE) if with_visual else None,
            join(VISUAL2_FILE) if with_visual else None,
        )

    def missing(self) -> List[str]:
        required = [self.triples1, self.triples2, self.alignments]
        optional = [p for p in (self.visual1, self.visual2) if p]
        return [p for p in required + optional if not os.path.isfile(p)]


@dataclass
class VisualFeatures:
    """Row i holds entity i's feature vector; ``mask[i]`` is False without an image."""

    matrix: np.ndarray
    mask: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_images(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def empty(cls, n: int, dim: int) -> "VisualFeatures":
        return cls(np.zeros((n, dim), dtype=np.float64), np.zeros(n, dtype=bool))


@dataclass
class AlignmentDataset:
    kg1: TripleStore
    kg2: TripleStore
    alignments: List[Tuple[str, str]]
    seeds: SeedAlignments
    split_fraction: float
    visual1: Optional[VisualFeatures] = None
    visual2: Optional[VisualFeatures] = None

    def __post_init__(self) -> None:
        if self.visual1 is not None and self.visual2 is not None and self.visual1.dim != self.visual2.dim:
            raise InvalidInputError(
                f"Visual feature dimensions differ: {self.visual1.dim} vs {self.visual2.dim}"
            )
        self.seeds.validate(self.merged)

    @cached_property
    def merged(self) -> MergedGraph:
        return disjoint_union(self.kg1, self.kg2)

    @property
    def has_visual(self) -> bool:
        return self.visual1 is not None or self.visual2 is not None

    @property
    def visual_dim(self) -> Optional[int]:
        for visual in (self.visual1, self.visual2):
            if visual is not None:
                return visual.dim
        return None

    def visual_inputs(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Stacked (n1 + n2, dv) features and image mask over global indices."""
        dim = self.visual_dim
        if dim is None:
            raise InvalidInputError("Dataset has no visual features")
        v1 = self.visual1 or VisualFeatures.empty(self.kg1.n_entities, dim)
        v2 = self.visual2 or VisualFeatures.empty(self.kg2.n_entities, dim)
        features = torch.from_numpy(np.vstack([v1.matrix, v2.matrix])).to(DTYPE)
        mask = torch.from_numpy(np.concatenate([v1.mask, v2.mask]))
        return features, mask

    def entity_names(self) -> List[str]:
        """Entity identifiers in global index order."""
        return list(self.kg1.entities) + list(self.kg2.entities)


def _records(path: str, n_fields: Optional[int] = None) -> Iterator[Tuple[int, List[str]]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n").rstrip("\r")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if n_fields is not None and len(fields) != n_fields:
                    raise DataFormatError(
                        f"{path}:{lineno}: expected {n_fields} tab-separated fields, found {len(fields)}"
                    )
                if any(not value for value in fields):
                    raise DataFormatError(f"{path}:{lineno}: empty field")
                yield lineno, fields
    except UnicodeDecodeError as e:
        raise DataFormatError(f"{path}: not valid UTF-8 ({e})")


def read_triples(path: str) -> TripleStore:
    store = TripleStore.from_named_triples(tuple(fields) for _, fields in _records(path, 3))
    if store.n_entities == 0:
        raise DataFormatError(f"{path}: no triples found")
    return store


def read_alignments(path: str, kg1: TripleStore, kg2: TripleStore) -> List[Tuple[str, str]]:
    pairs: List[Tuple[str, str]] = []
    unknown: List[str] = []
    seen = set()
    for lineno, (left, right) in _records(path, 2):
        if left not in kg1.entity_index:
            unknown.append(f"{left} (line {lineno}, KG1)")
        if right not in kg2.entity_index:
            unknown.append(f"{right} (line {lineno}, KG2)")
        if (left, right) in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate alignment {left} -> {right}")
        seen.add((left, right))
        pairs.append((left, right))
    if unknown:
        raise DataFormatError(f"{path}: unknown entities: {', '.join(unknown)}")
    return pairs


def read_visual(path: str, store: TripleStore) -> VisualFeatures:
    rows: Dict[int, np.ndarray] = {}
    dim: Optional[int] = None
    for lineno, fields in _records(path):
        name, values = fields[0], fields[1:]
        if name not in store.entity_index:
            raise DataFormatError(f"{path}:{lineno}: unknown entity {name}")
        if not values:
            raise DataFormatError(f"{path}:{lineno}: no feature values for {name}")
        try:
            vector = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as e:
            raise DataFormatError(f"{path}:{lineno}: {e}")
        if not np.all(np.isfinite(vector)):
            raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
        if dim is None:
            dim = len(vector)
        elif len(vector) != dim:
            raise DataFormatError(f"{path}:{lineno}: expected {dim} features, found {len(vector)}")
        rows[store.entity_index[name]] = vector
    if dim is None:
        raise DataFormatError(f"{path}: no feature vectors found")
    features = VisualFeatures.empty(store.n_entities, dim)
    for index, vector in rows.items():
        features.matrix[index] = vector
        features.mask[index] = True
    return features


def split_alignments(pairs: np.ndarray, split_fraction: float, rng_seed: int) -> SeedAlignments:
    """Shuffle with ``rng_seed``; the first round(fraction * n) pairs train."""
    if not 0.0 < split_fraction < 1.0:
        raise InvalidInputError(f"split_fraction must lie in (0, 1), got {split_fraction!r}")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    order = np.random.default_rng(rng_seed).permutation(len(pairs))
    n_train = int(math.floor(split_fraction * len(pairs) + 0.5))
    shuffled = pairs[order]
    return SeedAlignments(shuffled[:n_train], shuffled[n_train:])


def _global_pairs(alignments: List[Tuple[str, str]], kg1: TripleStore, kg2: TripleStore) -> np.ndarray:
    offset = kg1.n_entities
    return np.array(
        [(kg1.entity_index[a], offset + kg2.entity_index[b]) for a, b in alignments], dtype=np.int64
    ).reshape(-1, 2)


def load_dataset(paths: DatasetPaths, split_fraction: float, rng_seed: int) -> AlignmentDataset:
    missing = paths.missing()
    if missing:
        raise DataFormatError(f"Dataset file not found: {missing[0]}")
    kg1 = read_triples(paths.triples1)
    kg2 = read_triples(paths.triples2)
    alignments = read_alignments(paths.alignments, kg1, kg2)
    visual1 = read_visual(paths.visual1, kg1) if paths.visual1 else None
    visual2 = read_visual(paths.visual2, kg2) if paths.visual2 else None
    seeds = split_alignments(_global_pairs(alignments, kg1, kg2), split_fraction, rng_seed)
    dataset = AlignmentDataset(kg1, kg2, alignments, seeds, split_fraction, visual1, visual2)
    logger.info(
        f"Loaded dataset: {kg1.n_entities} + {kg2.n_entities} entities, {len(alignments)} alignments "
        f"({len(seeds.train_pairs)} train / {len(seeds.test_pairs)} test)"
    )
    return dataset


def _write_lines(path: str, lines: List[str]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for line in lines:
                f.write(line + "\n")
    except OSError as e:
        raise IOError(f"Failed to write {path}: {e}")


def _format_vector(values: np.ndarray) -> str:
    return "\t".join(repr(float(v)) for v in values)


def write_dataset(dataset: AlignmentDataset, directory: str) -> DatasetPaths:
    """Serialize in the three text formats; returns the written paths."""
    os.makedirs(directory, exist_ok=True)
    paths = DatasetPaths.in_directory(directory, with_visual=False)
    _write_lines(paths.triples1, ["\t".join(t) for t in dataset.kg1.named_triples()])
    _write_lines(paths.triples2, ["\t".join(t) for t in dataset.kg2.named_triples()])
    _write_lines(paths.alignments, [f"{a}\t{b}" for a, b in dataset.alignments])
    for attr, store, name in (("visual1", dataset.kg1, VISUAL1_FILE), ("visual2", dataset.kg2, VISUAL2_FILE)):
        visual: Optional[VisualFeatures] = getattr(dataset, attr)
        if visual is None or visual.n_images == 0:
            continue
        path = os.path.join(directory, name)
        _write_lines(
            path,
            [
                f"{store.entities[i]}\t{_format_vector(visual.matrix[i])}"
                for i in range(store.n_entities)
                if visual.mask[i]
            ],
        )
        setattr(paths, attr, path)
    return paths


@dataclass
class SyntheticSpec:
    n_entities: int = 100
    avg_degree: float = 4.0
    edge_noise: float = 0.0
    visual_signal: float = 0.9
    rng_seed: int = 0
    visual_dim: int = 32
    image_coverage: float = 1.0
    n_relations: int = 4
    split_fraction: float = 0.3

    def __post_init__(self) -> None:
        if self.n_entities < 2:
            raise InvalidInputError("n_entities must be at least 2")
        if not 0 < self.avg_degree < self.n_entities:
            raise InvalidInputError("avg_degree must lie in (0, n_entities)")
        for name in ("edge_noise", "visual_signal", "image_coverage"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1], got {value!r}")
        if self.visual_dim < 1 or self.n_relations < 1:
            raise InvalidInputError("visual_dim and n_relations must be positive")
        if not 0.0 < self.split_fraction < 1.0:
            raise InvalidInputError("split_fraction must lie in (0, 1)")


def _attach_isolated(graph: nx.Graph, rng: np.random.Generator) -> None:
    n = graph.number_of_nodes()
    for node in sorted(graph.nodes()):
        if graph.degree(node) == 0:
            other = int(rng.integers(n - 1))
            other += other >= node
            graph.add_edge(node, other)


def _rewire(graph: nx.Graph, fraction: float, rng: np.random.Generator) -> None:
    """Replace ``fraction`` of the edges by uniformly random non-edges.

    The edge count is preserved. When the graph has fewer non-edges than
    edges to move, the missing replacements are drawn from the removed
    edges themselves.
    """
    edges = sorted(tuple(sorted(e)) for e in graph.edges())
    n_rewire = int(math.floor(fraction * len(edges) + 0.5))
    if n_rewire == 0:
        return
    n = graph.number_of_nodes()
    available = n * (n - 1) // 2 - len(edges)
    dense = available < 2 * n_rewire
    non_edges = sorted(tuple(sorted(e)) for e in nx.non_edges(graph)) if dense else []
    removed = [edges[i] for i in rng.choice(len(edges), size=n_rewire, replace=False)]
    graph.remove_edges_from(removed)
    if dense:
        take = min(n_rewire, len(non_edges))
        added = [non_edges[i] for i in rng.choice(len(non_edges), size=take, replace=False)] if take else []
        restored = [removed[i] for i in rng.permutation(n_rewire)[:n_rewire - take]]
        graph.add_edges_from(added + restored)
        return
    forbidden = set(removed)
    added_count = 0
    while added_count < n_rewire:
        u, v = sorted(int(x) for x in rng.integers(n, size=2))
        if u != v and not graph.has_edge(u, v) and (u, v) not in forbidden:
            graph.add_edge(u, v)
            added_count += 1


def generate_synthetic(spec: SyntheticSpec) -> AlignmentDataset:
    """Erdos-Renyi KG1, permuted and optionally rewired copy as KG2.

    Isolated nodes are attached to a random other node so every entity
    occurs in a triple.
    """
    rng = np.random.default_rng(spec.rng_seed)
    n = spec.n_entities
    p = spec.avg_degree / (n - 1)
    g1 = nx.gnp_random_graph(n, p, seed=int(rng.integers(2 ** 31 - 1)))
    _attach_isolated(g1, rng)

    perm = rng.permutation(n)
    g2 = nx.relabel_nodes(g1, {i: int(perm[i]) for i in range(n)}, copy=True)
    _rewire(g2, spec.edge_noise, rng)
    _attach_isolated(g2, rng)

    relations = [f"rel{r}" for r in range(spec.n_relations)]
    edge_relation: Dict[Tuple[int, int], int] = {}
    triples1 = []
    for u, v in sorted(tuple(sorted(e)) for e in g1.edges()):
        r = int(rng.integers(spec.n_relations))
        edge_relation[(int(perm[u]), int(perm[v]))] = r
        triples1.append((u, r, v))
    triples2 = []
    for a, b in sorted(tuple(sorted(e)) for e in g2.edges()):
        r = edge_relation.get((a, b), edge_relation.get((b, a)))
        if r is not None:
            triples2.append((a, r, b) if (a, b) in edge_relation else (b, r, a))
        else:
            triples2.append((a, int(rng.integers(spec.n_relations)), b))

    kg1 = TripleStore([f"kg1:e{i}" for i in range(n)], list(relations), triples1)
    kg2 = TripleStore([f"kg2:e{j}" for j in range(n)], list(relations), triples2)

    base = rng.standard_normal((n, spec.visual_dim))
    noise = rng.standard_normal((n, spec.visual_dim))
    s = spec.visual_signal
    matrix1 = base
    matrix2 = np.zeros_like(base)
    matrix2[perm] = s * base + math.sqrt(max(0.0, 1.0 - s * s)) * noise
    mask1 = rng.random(n) < spec.image_coverage
    mask2 = rng.random(n) < spec.image_coverage
    visual1 = VisualFeatures(np.where(mask1[:, None], matrix1, 0.0), mask1)
    visual2 = VisualFeatures(np.where(mask2[:, None], matrix2, 0.0), mask2)

    alignments = [(kg1.entities[i], kg2.entities[int(perm[i])]) for i in range(n)]
    pairs = np.column_stack([np.arange(n), n + perm]).astype(np.int64)
    seeds = split_alignments(pairs, spec.split_fraction, spec.rng_seed)
    logger.info(
        f"Generated synthetic pair: {n} entities, {len(triples1)} / {len(triples2)} triples, "
        f"edge_noise {spec.edge_noise}, visual_signal {spec.visual_signal}"
    )
    return AlignmentDataset(kg1, kg2, alignments, seeds, spec.split_fraction, visual1, visual2)


def dataset_statistics(dataset: AlignmentDataset) -> List[Dict[str, object]]:
    """One row per KG: Entities, Relations, Rel.Triples, Images, SameAs."""
    rows = []
    for label, store, visual in (("KG1", dataset.kg1, dataset.visual1), ("KG2", dataset.kg2, dataset.visual2)):
        rows.append(
            {
                "dataset": label,
                "entities": store.n_entities,
                "relations": len(store.relations),
                "triples": len(store.triples),
                "images": visual.n_images if visual is not None else 0,
                "same_as": len(dataset.alignments) if label == "KG2" else "",
            }
        )
    return rows


def format_statistics(rows: List[Dict[str, object]]) -> str:
    header = ["Datasets", "Entities", "Relations", "Rel.Triples", "Images", "SameAs"]
    keys = ["dataset", "entities", "relations", "triples", "images", "same_as"]
    table = [header] + [[str(row[k]) for k in keys] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return "\n".join(" | ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in table)
