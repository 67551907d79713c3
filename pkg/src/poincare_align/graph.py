"""
Entity indices and the symmetric normalized adjacency matrix
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import torch

from poincare_align.exceptions import InvalidInputError
from poincare_align.geometry import DTYPE

Triple = Tuple[int, int, int]


@dataclass
class TripleStore:
    """Relational triples of one knowledge graph, indexed by position."""

    entities: List[str]
    relations: List[str]
    triples: List[Triple] = field(default_factory=list)

    def __post_init__(self) -> None:
        n_ent = len(self.entities)
        n_rel = len(self.relations)
        seen = set()
        unique: List[Triple] = []
        for h, r, t in self.triples:
            if not (0 <= h < n_ent and 0 <= t < n_ent):
                raise InvalidInputError(f"Triple ({h}, {r}, {t}) references an unknown entity index")
            if not 0 <= r < n_rel:
                raise InvalidInputError(f"Triple ({h}, {r}, {t}) references an unknown relation index")
            key = (int(h), int(r), int(t))
            if key not in seen:
                seen.add(key)
                unique.append(key)
        self.triples = unique

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @cached_property
    def entity_index(self) -> Dict[str, int]:
        return {name: i for i, name in enumerate(self.entities)}

    @classmethod
    def from_named_triples(cls, named: Iterable[Tuple[str, str, str]]) -> "TripleStore":
        """Build a store, numbering entities and relations by first appearance."""
        entities: Dict[str, int] = {}
        relations: Dict[str, int] = {}
        triples: List[Triple] = []
        for head, relation, tail in named:
            h = entities.setdefault(head, len(entities))
            r = relations.setdefault(relation, len(relations))
            t = entities.setdefault(tail, len(entities))
            triples.append((h, r, t))
        return cls(list(entities), list(relations), triples)

    def named_triples(self) -> List[Tuple[str, str, str]]:
        return [(self.entities[h], self.relations[r], self.entities[t]) for h, r, t in self.triples]


@dataclass(frozen=True)
class NormalizedGraph:
    """Â = D^-1/2 (A + I) D^-1/2 over ``n`` nodes, stored as CSR."""

    n: int
    adjacency: sp.csr_matrix

    @cached_property
    def torch_adjacency(self) -> torch.Tensor:
        coo = self.adjacency.tocoo()
        indices = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
        values = torch.from_numpy(coo.data.astype(np.float64))
        return torch.sparse_coo_tensor(indices, values, (self.n, self.n), dtype=DTYPE).coalesce()

    def propagate(self, x: torch.Tensor) -> torch.Tensor:
        """Â · x for a dense (n, d) tensor."""
        if x.shape[0] != self.n:
            raise InvalidInputError(f"Feature matrix has {x.shape[0]} rows, graph has {self.n} nodes")
        return torch.sparse.mm(self.torch_adjacency, x)

    def to_dense(self) -> np.ndarray:
        return self.adjacency.toarray()


@dataclass(frozen=True)
class MergedGraph:
    """Disjoint union of two graphs plus local-to-global index maps."""

    graph: NormalizedGraph
    kg1_global: np.ndarray
    kg2_global: np.ndarray

    @property
    def n1(self) -> int:
        return len(self.kg1_global)

    @property
    def n2(self) -> int:
        return len(self.kg2_global)


def _normalize(binary: sp.coo_matrix, n: int) -> sp.csr_matrix:
    with_loops = (binary + sp.identity(n, format="coo", dtype=np.float64)).tocoo()
    degrees = np.asarray(with_loops.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degrees)
    data = inv_sqrt[with_loops.row] * inv_sqrt[with_loops.col]
    normalized = sp.coo_matrix((data, (with_loops.row, with_loops.col)), shape=(n, n))
    return normalized.tocsr()


def binary_adjacency(n: int, edges: Sequence[Tuple[int, int]]) -> sp.coo_matrix:
    """Symmetric 0/1 adjacency without self-loops."""
    if edges:
        pairs = np.asarray(edges, dtype=np.int64)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        keep = rows != cols
        rows, cols = rows[keep], cols[keep]
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    data = np.ones(len(rows), dtype=np.float64)
    a = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.data[:] = 1.0
    return a.tocoo()


def build_adjacency(store: TripleStore) -> NormalizedGraph:
    """Relations are ignored; each triple contributes an undirected edge."""
    n = store.n_entities
    if n == 0:
        raise InvalidInputError("Cannot build an adjacency matrix for an empty entity set")
    edges = [(h, t) for h, _, t in store.triples]
    return NormalizedGraph(n, _normalize(binary_adjacency(n, edges), n))


def disjoint_union(store1: TripleStore, store2: TripleStore) -> MergedGraph:
    """Block-diagonal Â; KG1 takes global indices [0, n1), KG2 [n1, n1 + n2)."""
    g1 = build_adjacency(store1)
    g2 = build_adjacency(store2)
    n = g1.n + g2.n
    combined = sp.block_diag([g1.adjacency, g2.adjacency], format="csr")
    return MergedGraph(
        graph=NormalizedGraph(n, combined),
        kg1_global=np.arange(g1.n, dtype=np.int64),
        kg2_global=np.arange(g1.n, n, dtype=np.int64),
    )
