"""
Margin ranking training over seed alignments
"""

import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from poincare_align.exceptions import CheckpointError, InvalidInputError, TrainingDivergedError
from poincare_align.geometry import DTYPE
from poincare_align.graph import MergedGraph
from poincare_align.model import ChannelModel, GraphConvolution, channel_difference

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "poincare-align-checkpoint"
CHECKPOINT_VERSION = 1

# Hinge terms closer than this to the kink are left out of gradient checks.
KINK_TOLERANCE = 1e-6
# Coordinates whose analytic and numeric gradients are both below this are skipped.
GRADIENT_NOISE_FLOOR = 1e-10
# Embedding differences this small count as zero (tied seed pairs sit there).
DIFFERENCE_FLOOR = 1e-12

DistanceFn = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def _as_pairs(pairs) -> np.ndarray:
    array = np.asarray(pairs, dtype=np.int64)
    if array.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if array.ndim != 2 or array.shape[1] != 2:
        raise InvalidInputError(f"Seed pairs must have shape (n, 2), got {array.shape}")
    return array


@dataclass
class SeedAlignments:
    """Train/test pairs as (global KG1 index, global KG2 index)."""

    train_pairs: np.ndarray
    test_pairs: np.ndarray

    def __post_init__(self) -> None:
        self.train_pairs = _as_pairs(self.train_pairs)
        self.test_pairs = _as_pairs(self.test_pairs)
        overlap = set(map(tuple, self.train_pairs.tolist())) & set(map(tuple, self.test_pairs.tolist()))
        if overlap:
            raise InvalidInputError(f"{len(overlap)} seed pairs appear in both train and test")

    def validate(self, merged: MergedGraph) -> None:
        lo1, hi1 = 0, merged.n1
        lo2, hi2 = merged.n1, merged.n1 + merged.n2
        for name, pairs in (("train", self.train_pairs), ("test", self.test_pairs)):
            if len(pairs) == 0:
                continue
            if pairs[:, 0].min() < lo1 or pairs[:, 0].max() >= hi1:
                raise InvalidInputError(f"{name} pairs reference entities outside KG1")
            if pairs[:, 1].min() < lo2 or pairs[:, 1].max() >= hi2:
                raise InvalidInputError(f"{name} pairs reference entities outside KG2")


@dataclass
class TrainingConfig:
    margin_struct: float = 0.5
    margin_visual: float = 1.5
    negatives_per_positive: int = 6
    learning_rate: float = 0.01
    epochs: int = 300
    rng_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 50

    def __post_init__(self) -> None:
        if not (self.margin_struct > 0 and self.margin_visual > 0):
            raise InvalidInputError("Margins must be positive")
        if self.negatives_per_positive < 1:
            raise InvalidInputError("negatives_per_positive must be at least 1")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be at least 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise InvalidInputError("Adam betas must lie in [0, 1) and eps must be positive")

    def margin_for(self, kind: str) -> float:
        return self.margin_visual if kind == "visual" else self.margin_struct


class GradientTape:
    """Registry of a module's trainable tensors and their accumulated gradients."""

    def __init__(self, module: torch.nn.Module):
        self.parameters: "OrderedDict[str, torch.nn.Parameter]" = OrderedDict(
            (name, p) for name, p in module.named_parameters() if p.requires_grad
        )

    def zero(self) -> None:
        for p in self.parameters.values():
            p.grad = None

    def backward(self, loss: torch.Tensor) -> Dict[str, torch.Tensor]:
        self.zero()
        loss.backward()
        return self.gradients()

    def gradients(self) -> Dict[str, torch.Tensor]:
        """Gradient per parameter; parameters the loss never touched get zeros."""
        return OrderedDict(
            (name, p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in self.parameters.items()
        )

    def coordinates(self) -> List[Tuple[str, int]]:
        return [(name, i) for name, p in self.parameters.items() for i in range(p.numel())]


def candidate_pools(merged: MergedGraph, image_mask: Optional[torch.Tensor] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Global indices each side may be corrupted with."""
    pool1, pool2 = merged.kg1_global, merged.kg2_global
    if image_mask is not None:
        mask = image_mask.cpu().numpy().astype(bool)
        pool1, pool2 = pool1[mask[pool1]], pool2[mask[pool2]]
    return pool1, pool2


def sample_negative_batch(
    pairs: np.ndarray,
    k: int,
    rng: np.random.Generator,
    pool1: np.ndarray,
    pool2: np.ndarray,
) -> np.ndarray:
    """Corrupt each pair ``k`` times; returns an array of shape (P, k, 2).

    Sample j replaces the KG1 side when j is even and the KG2 side when j is
    odd. A side whose pool offers no alternative is never corrupted. The
    replacement is uniform over the pool minus the entity being replaced.
    """
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    pairs = _as_pairs(pairs)
    pools = (np.sort(np.asarray(pool1, dtype=np.int64)), np.sort(np.asarray(pool2, dtype=np.int64)))
    can_corrupt = [len(pool) >= 2 for pool in pools]
    if not any(can_corrupt):
        raise InvalidInputError("Both candidate pools are too small to corrupt a pair")

    n_pairs = len(pairs)
    sides = np.tile(np.arange(k) % 2, (n_pairs, 1))
    if not can_corrupt[0]:
        sides[:] = 1
    elif not can_corrupt[1]:
        sides[:] = 0

    negatives = np.repeat(pairs[:, None, :], k, axis=1)
    current = np.take_along_axis(negatives, sides[..., None], axis=2)[..., 0]
    highs = np.empty_like(current)
    positions = np.full_like(current, -1)
    for side, pool in enumerate(pools):
        on_side = sides == side
        if not on_side.any():
            continue
        pos = np.searchsorted(pool, current[on_side])
        found = (pos < len(pool)) & (pool[np.minimum(pos, len(pool) - 1)] == current[on_side])
        positions[on_side] = np.where(found, pos, -1)
        highs[on_side] = np.where(found, len(pool) - 1, len(pool))

    draws = rng.integers(0, highs)
    draws = draws + ((positions >= 0) & (draws >= positions))
    for side, pool in enumerate(pools):
        on_side = sides == side
        if on_side.any():
            negatives[..., side][on_side] = pool[draws[on_side]]
    return negatives


def sample_negatives(
    pair: Sequence[int],
    k: int,
    rng: np.random.Generator,
    pool1: np.ndarray,
    pool2: np.ndarray,
) -> np.ndarray:
    """``k`` corrupted copies of one seed pair, shape (k, 2)."""
    return sample_negative_batch(np.asarray([pair]), k, rng, pool1, pool2)[0]


def hinge_arguments(
    emb: torch.Tensor,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
    distance: DistanceFn,
) -> torch.Tensor:
    """d(pos) + margin - d(neg) for every (positive, negative) term, shape (P, k)."""
    pos = torch.as_tensor(positives, dtype=torch.long)
    neg = torch.as_tensor(negatives, dtype=torch.long)
    d_pos = distance(emb[pos[:, 0]], emb[pos[:, 1]])
    d_neg = distance(emb[neg[..., 0]], emb[neg[..., 1]])
    return d_pos.unsqueeze(1) + margin - d_neg


def ranking_loss(
    emb: torch.Tensor,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
    distance: DistanceFn,
) -> torch.Tensor:
    """Sum of [d(pos) + margin - d(neg)]_+; backpropagate through the result."""
    if not margin > 0:
        raise InvalidInputError("margin must be positive")
    return torch.relu(hinge_arguments(emb, positives, negatives, margin, distance)).sum()


@dataclass
class TrainingResult:
    channel: ChannelModel
    losses: List[float] = field(default_factory=list)


def training_pairs(channel: ChannelModel, seeds: SeedAlignments) -> np.ndarray:
    pairs = seeds.train_pairs
    if channel.kind == "visual" and len(pairs):
        mask = channel.image_mask.cpu().numpy()
        pairs = pairs[mask[pairs[:, 0]] & mask[pairs[:, 1]]]
    return pairs


def train_channel(
    channel: ChannelModel,
    merged: MergedGraph,
    seeds: SeedAlignments,
    cfg: TrainingConfig,
    margin: Optional[float] = None,
) -> TrainingResult:
    """Full-batch Adam on the ranking loss; negatives are redrawn every epoch."""
    seeds.validate(merged)
    positives = training_pairs(channel, seeds)
    if len(positives) == 0:
        raise InvalidInputError(f"No training pairs available for the {channel.kind} channel")
    margin = cfg.margin_for(channel.kind) if margin is None else margin
    pool1, pool2 = candidate_pools(merged, channel.image_mask if channel.kind == "visual" else None)
    rng = np.random.default_rng(cfg.rng_seed)
    optimizer = torch.optim.Adam(
        channel.parameters(),
        lr=cfg.learning_rate,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
        eps=cfg.adam_eps,
    )
    tape = GradientTape(channel)
    graph = merged.graph

    logger.info(
        f"Training {channel.kind} channel: {len(positives)} positive pairs, "
        f"{cfg.negatives_per_positive} negatives each, margin {margin}, {cfg.epochs} epochs"
    )
    channel.train()
    result = TrainingResult(channel)
    for epoch in range(cfg.epochs):
        negatives = sample_negative_batch(positives, cfg.negatives_per_positive, rng, pool1, pool2)
        emb = channel(graph)
        loss = ranking_loss(emb, positives, negatives, margin, channel.distance)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(epoch, value)
        tape.backward(loss)
        optimizer.step()
        result.losses.append(value)
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1:
            logger.info(f"[{channel.kind}] epoch {epoch}: loss = {value:.6f}")
    channel.eval()
    return result


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str
    worst_index: Tuple[int, ...]
    checked: int
    skipped_small: int
    skipped_kinks: int
    excluded_terms: int

    @property
    def worst_coordinate(self) -> str:
        return f"{self.worst_parameter}[{', '.join(str(i) for i in self.worst_index)}]"

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.checked > 0 and self.max_relative_error < tolerance

    def lines(self) -> List[str]:
        return [
            f"max_relative_error\t{self.max_relative_error:.6e}",
            f"worst_coordinate\t{self.worst_coordinate}",
            f"checked\t{self.checked}",
            f"skipped_small\t{self.skipped_small}",
            f"skipped_kinks\t{self.skipped_kinks}",
            f"excluded_terms\t{self.excluded_terms}",
        ]


def _difference_pattern(emb: torch.Tensor, pairs: torch.Tensor, channel: ChannelModel) -> List[torch.Tensor]:
    diff = channel_difference(
        emb[pairs[..., 0]], emb[pairs[..., 1]], channel.output_curvature, channel.geometry
    )
    return [(diff > DIFFERENCE_FLOOR).detach(), (diff < -DIFFERENCE_FLOOR).detach()]


def gradient_check(
    channel: ChannelModel,
    merged: MergedGraph,
    seeds: SeedAlignments,
    cfg: TrainingConfig,
    n_coordinates: int = 200,
    step: float = 1e-5,
    margin: Optional[float] = None,
) -> GradCheckReport:
    """Compare autograd gradients of the ranking loss with central differences.

    Negatives are drawn once. Hinge terms within ``KINK_TOLERANCE`` of zero
    are dropped from the checked loss, and a coordinate whose perturbation
    flips any ReLU, hinge or absolute-value sign is skipped.
    """
    seeds.validate(merged)
    positives = training_pairs(channel, seeds)
    if len(positives) == 0:
        raise InvalidInputError("Gradient check needs at least one training pair")
    margin = cfg.margin_for(channel.kind) if margin is None else margin
    rng = np.random.default_rng(cfg.rng_seed)
    pool1, pool2 = candidate_pools(merged, channel.image_mask if channel.kind == "visual" else None)
    negatives = sample_negative_batch(positives, cfg.negatives_per_positive, rng, pool1, pool2)
    pos_t = torch.as_tensor(positives, dtype=torch.long)
    neg_t = torch.as_tensor(negatives, dtype=torch.long)
    graph = merged.graph

    def evaluate() -> Tuple[torch.Tensor, List[torch.Tensor]]:
        trace: List[torch.Tensor] = []
        emb = channel(graph, trace)
        args = hinge_arguments(emb, positives, negatives, margin, channel.distance)
        trace.extend(_difference_pattern(emb, pos_t, channel))
        trace.extend(_difference_pattern(emb, neg_t, channel))
        trace.append((args > 0).detach())
        return args, trace

    args, base_pattern = evaluate()
    keep = (args.detach().abs() >= KINK_TOLERANCE)
    excluded_terms = int((~keep).sum())
    tape = GradientTape(channel)
    analytic = tape.backward(torch.relu(args)[keep].sum())

    coordinates = tape.coordinates()
    count = min(n_coordinates, len(coordinates))
    chosen = np.sort(rng.choice(len(coordinates), size=count, replace=False))

    worst = (0.0, "", (0,))
    checked = skipped_small = skipped_kinks = 0
    with torch.no_grad():
        for index in chosen:
            name, flat_index = coordinates[int(index)]
            param = tape.parameters[name]
            flat = param.data.view(-1)
            original = float(flat[flat_index])

            flat[flat_index] = original + step
            args_plus, pattern_plus = evaluate()
            flat[flat_index] = original - step
            args_minus, pattern_minus = evaluate()
            flat[flat_index] = original

            same_pattern = all(
                torch.equal(b, p) and torch.equal(b, m)
                for b, p, m in zip(base_pattern, pattern_plus, pattern_minus)
            )
            if not same_pattern:
                skipped_kinks += 1
                continue
            numeric = float(
                (torch.relu(args_plus)[keep] - torch.relu(args_minus)[keep]).sum() / (2 * step)
            )
            grad = float(analytic[name].view(-1)[flat_index])
            if abs(grad) < GRADIENT_NOISE_FLOOR and abs(numeric) < GRADIENT_NOISE_FLOOR:
                skipped_small += 1
                continue
            checked += 1
            rel = abs(grad - numeric) / max(1e-8, abs(grad) + abs(numeric))
            if rel >= worst[0] or not worst[1]:
                worst = (rel, name, tuple(int(i) for i in np.unravel_index(flat_index, tuple(param.shape))))

    report = GradCheckReport(
        max_relative_error=worst[0],
        worst_parameter=worst[1],
        worst_index=worst[2],
        checked=checked,
        skipped_small=skipped_small,
        skipped_kinks=skipped_kinks,
        excluded_terms=excluded_terms,
    )
    logger.info(
        f"Gradient check: max relative error {report.max_relative_error:.3e} at "
        f"{report.worst_coordinate} ({checked} checked, {skipped_kinks} kink, {skipped_small} small)"
    )
    return report


def save_checkpoint(path: str, channel: ChannelModel, rng_seed: int) -> None:
    """Versioned torch container with every tensor, curvature and dimension."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "kind": channel.kind,
        "geometry": channel.geometry,
        "dims": list(channel.dims),
        "curvatures": list(channel.curvatures),
        "activation": channel.activation,
        "rng_seed": int(rng_seed),
        "state": OrderedDict((k, v.detach().clone()) for k, v in channel.state_dict().items()),
    }
    try:
        torch.save(payload, path)
    except OSError as e:
        raise IOError(f"Failed to save checkpoint to {path}: {e}")


def load_checkpoint(path: str) -> Tuple[ChannelModel, Dict]:
    """Rebuild a channel; returns the channel and the checkpoint metadata."""
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"Could not read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a poincare-align checkpoint")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has format version {payload.get('format_version')}, expected {CHECKPOINT_VERSION}"
        )
    state = payload["state"]
    curvatures = payload["curvatures"]
    n_layers = len(payload["dims"]) - 1
    layers = [
        GraphConvolution(
            state[f"layers.{i}.weight"],
            curvatures[i],
            curvatures[i + 1],
            payload["activation"],
            payload["geometry"],
        )
        for i in range(n_layers)
    ]
    channel = ChannelModel(
        payload["kind"],
        state["input_features"].to(DTYPE),
        layers,
        trainable_inputs=(payload["kind"] == "structure"),
        image_mask=state["image_mask"],
        geometry=payload["geometry"],
        input_index=state.get("input_index"),
    )
    channel.eval()
    meta = {k: v for k, v in payload.items() if k != "state"}
    return channel, meta
