"""
Alignment prediction, Hits@k and embedding export
"""

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from poincare_align.exceptions import InvalidInputError
from poincare_align.graph import MergedGraph
from poincare_align.model import ChannelModel, FusionConfig, channel_distance, fuse
from poincare_align.train import SeedAlignments

logger = logging.getLogger(__name__)

DIRECTION = "kg1_to_kg2"
METRICS_VERSION = 1
EMBEDDINGS_VERSION = 1

# Upper bound on the number of floats materialized per distance chunk.
CHUNK_ELEMENTS = 2_000_000

DistanceFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class QueryRanking:
    query: int
    truth: int
    rank: int
    candidates: np.ndarray
    distances: np.ndarray


@dataclass
class RankingReport:
    queries: List[QueryRanking]
    hits_at: Dict[int, float]
    mean_rank: float
    mrr: float
    direction: str = DIRECTION

    @property
    def ranks(self) -> np.ndarray:
        return np.array([q.rank for q in self.queries], dtype=np.int64)


def _normalize_k_list(k_list: Sequence[int]) -> List[int]:
    ks = sorted(set(int(k) for k in k_list))
    if not ks or ks[0] < 1:
        raise InvalidInputError(f"k_list must contain positive integers, got {list(k_list)}")
    return ks


def predict(
    emb: torch.Tensor,
    test_pairs: np.ndarray,
    kg2_global: np.ndarray,
    k_list: Sequence[int],
    distance: DistanceFn,
    top_n: int = 10,
) -> RankingReport:
    """Rank every KG2 entity for each KG1 query by ascending distance.

    rank = 1 + #(strictly closer) + #(equally close with a smaller entity
    index). The result does not depend on the order of ``kg2_global``.
    """
    ks = _normalize_k_list(k_list)
    test_pairs = np.asarray(test_pairs, dtype=np.int64).reshape(-1, 2)
    if len(test_pairs) == 0:
        raise InvalidInputError("Cannot evaluate an empty test set")
    kg2_global = np.asarray(kg2_global, dtype=np.int64)
    position = {int(g): i for i, g in enumerate(kg2_global)}
    if len(position) != len(kg2_global):
        raise InvalidInputError("KG2 candidates contain duplicates")
    if any(int(g) not in position for g in test_pairs[:, 1]):
        raise InvalidInputError("Test pairs reference entities outside KG2")
    truth_local = np.array([position[int(g)] for g in test_pairs[:, 1]], dtype=np.int64)

    m = len(kg2_global)
    keep = min(m, max(top_n, ks[-1]))
    with torch.no_grad():
        candidates = emb[torch.as_tensor(kg2_global)].detach()
        chunk = max(1, CHUNK_ELEMENTS // max(1, m * candidates.shape[1]))
        queries: List[QueryRanking] = []
        for start in range(0, len(test_pairs), chunk):
            batch = test_pairs[start:start + chunk]
            q = emb[torch.as_tensor(batch[:, 0])].detach()
            dist = distance(q.unsqueeze(1), candidates.unsqueeze(0)).cpu().numpy()
            for row, (query, truth), t in zip(dist, batch, truth_local[start:start + chunk]):
                d_truth = row[t]
                rank = 1 + int(np.sum(row < d_truth)) + int(np.sum((row == d_truth) & (kg2_global < truth)))
                order = np.lexsort((kg2_global, row))[:keep]
                queries.append(
                    QueryRanking(int(query), int(truth), rank, kg2_global[order], row[order])
                )

    ranks = np.array([q.rank for q in queries], dtype=np.float64)
    hits_at = {k: float(np.mean(ranks <= k)) for k in ks}
    return RankingReport(queries, hits_at, float(np.mean(ranks)), float(np.mean(1.0 / ranks)))


def export_embeddings(emb: torch.Tensor, names: Sequence[str], path: str) -> None:
    """One line per entity: name then coordinates with 17 significant digits."""
    matrix = emb.detach().cpu().numpy()
    if len(names) != matrix.shape[0]:
        raise InvalidInputError(f"{len(names)} names for {matrix.shape[0]} embedding rows")
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for name, row in zip(names, matrix):
            f.write(name + "\t" + "\t".join(format(float(x), ".17g") for x in row) + "\n")


def read_embeddings(path: str) -> Tuple[List[str], np.ndarray]:
    names: List[str] = []
    rows: List[List[float]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            fields = line.rstrip("\n").split("\t")
            names.append(fields[0])
            rows.append([float(x) for x in fields[1:]])
    return names, np.array(rows, dtype=np.float64)


@dataclass
class VariantRow:
    variant: str
    beta: Optional[float]
    report: RankingReport
    geometry: str = "poincare"

    @property
    def label(self) -> str:
        if self.variant == "fused":
            return f"fused_beta={self.beta:g}"
        return self.variant


@dataclass
class VariantTable:
    rows: List[VariantRow] = field(default_factory=list)
    k_list: List[int] = field(default_factory=list)

    def row(self, label: str) -> VariantRow:
        for row in self.rows:
            if row.label == label:
                return row
        raise KeyError(label)

    def best_fused(self) -> Optional[VariantRow]:
        fused = [r for r in self.rows if r.variant == "fused"]
        if not fused:
            return None
        return max(fused, key=lambda r: (r.report.hits_at[self.k_list[0]], -abs(r.beta - 0.5)))

    def metrics(self) -> Dict[str, float]:
        values: Dict[str, float] = {}
        for row in self.rows:
            for k in self.k_list:
                values[f"{row.label}.hits@{k}"] = row.report.hits_at[k]
            values[f"{row.label}.mean_rank"] = row.report.mean_rank
            values[f"{row.label}.mrr"] = row.report.mrr
        return values


def _embed(channel: ChannelModel, merged: MergedGraph) -> torch.Tensor:
    with torch.no_grad():
        return channel(merged.graph)


def evaluate_variants(
    merged: MergedGraph,
    seeds: SeedAlignments,
    structure: Optional[ChannelModel],
    visual: Optional[ChannelModel],
    beta_list: Sequence[float],
    k_list: Sequence[int],
    top_n: int = 10,
) -> VariantTable:
    """Structure-only, visual-only and fused rows; beta is swept without retraining."""
    if structure is None and visual is None:
        raise InvalidInputError("At least one trained channel is required")
    if beta_list and (structure is None or visual is None):
        raise InvalidInputError("Fused rows require both the structure and the visual channel")
    ks = _normalize_k_list(k_list)
    table = VariantTable(k_list=ks)
    embeddings: Dict[str, torch.Tensor] = {}
    for name, channel in (("structure", structure), ("visual", visual)):
        if channel is None:
            continue
        emb = _embed(channel, merged)
        embeddings[name] = emb
        report = predict(emb, seeds.test_pairs, merged.kg2_global, ks, channel.distance, top_n)
        table.rows.append(VariantRow(name, 1.0 if name == "structure" else 0.0, report, channel.geometry))

    if beta_list:
        assert structure is not None and visual is not None
        if structure.geometry != visual.geometry:
            raise InvalidInputError("Channels of different geometries cannot be fused")
        if structure.output_curvature != visual.output_curvature:
            raise InvalidInputError(
                "Both channels must end at the fusion curvature "
                f"({structure.output_curvature.c} vs {visual.output_curvature.c})"
            )
        if structure.dims[-1] != visual.dims[-1]:
            raise InvalidInputError("Structure and visual embeddings must have the same dimension")
        c = structure.output_curvature
        geometry = structure.geometry
        for beta in beta_list:
            cfg = FusionConfig(beta, c)
            fused = fuse(embeddings["structure"], embeddings["visual"], cfg, geometry)
            report = predict(
                fused,
                seeds.test_pairs,
                merged.kg2_global,
                ks,
                lambda a, b: channel_distance(a, b, c, geometry),
                top_n,
            )
            table.rows.append(VariantRow("fused", cfg.beta, report, geometry))

    for row in table.rows:
        hits = ", ".join(f"Hits@{k}={row.report.hits_at[k]:.4f}" for k in ks)
        logger.info(f"[{row.geometry}] {row.label}: {hits}, MRR={row.report.mrr:.4f}")
    return table


def fused_embeddings(
    structure: ChannelModel,
    visual: Optional[ChannelModel],
    merged: MergedGraph,
    cfg: FusionConfig,
) -> torch.Tensor:
    """Fused embeddings for ``cfg``; the structure embedding alone without a visual channel."""
    h_struct = _embed(structure, merged)
    if visual is None or cfg.beta == 1.0:
        return h_struct
    if cfg.fusion_curvature != structure.output_curvature:
        raise InvalidInputError(
            f"Fusion curvature {cfg.fusion_curvature.c} differs from the channel output "
            f"curvature {structure.output_curvature.c}"
        )
    return fuse(h_struct, _embed(visual, merged), cfg, structure.geometry)


def format_table(table: VariantTable) -> str:
    header = ["Variant", "beta"] + [f"Hits@{k}" for k in table.k_list] + ["MR", "MRR"]
    lines = [header]
    for row in table.rows:
        lines.append(
            [row.label, "" if row.beta is None else f"{row.beta:g}"]
            + [f"{100 * row.report.hits_at[k]:.2f}" for k in table.k_list]
            + [f"{row.report.mean_rank:.2f}", f"{row.report.mrr:.4f}"]
        )
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    return "\n".join(" | ".join(cell.ljust(w) for cell, w in zip(r, widths)) for r in lines)


def write_metrics(table: VariantTable, directory: str, geometry: str = "poincare") -> Tuple[str, str]:
    """``metrics.txt`` (one "name value" per line) and ``metrics.json``."""
    os.makedirs(directory, exist_ok=True)
    metrics = table.metrics()
    text_path = os.path.join(directory, "metrics.txt")
    json_path = os.path.join(directory, "metrics.json")
    with open(text_path, "w", encoding="utf-8") as f:
        for name in sorted(metrics):
            f.write(f"{name} {metrics[name]!r}\n")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "format_version": METRICS_VERSION,
                "direction": DIRECTION,
                "geometry": geometry,
                "k_list": table.k_list,
                "metrics": metrics,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    return text_path, json_path
