"""
Hyperbolic graph convolution channels and Mobius fusion
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from torch.nn import Parameter

from poincare_align.exceptions import InvalidInputError
from poincare_align.geometry import (
    DTYPE,
    Curvature,
    CurvatureLike,
    as_curvature,
    check_finite,
    expmap0,
    logmap0,
    mobius_addition,
    mobius_scalar_mul,
    poincare_distance,
)
from poincare_align.graph import NormalizedGraph

GEOMETRIES = ("poincare", "euclidean")
CHANNEL_KINDS = ("structure", "visual")

ACTIVATIONS: Dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "none": lambda x: x,
}

# Structure inputs are drawn inside this fraction of the ball radius.
INPUT_NORM_FRACTION = 0.9
# Visual feature rows are unit-normalized and then scaled by this factor.
VISUAL_SCALE = 0.5


def _check_activation(name: str) -> None:
    if name not in ACTIVATIONS:
        raise InvalidInputError(f"Unknown activation '{name}', expected one of {sorted(ACTIVATIONS)}")


@dataclass
class LayerParams:
    weight: torch.Tensor
    c_in: Curvature
    c_out: Curvature
    activation: str = "relu"

    def __post_init__(self) -> None:
        _check_activation(self.activation)
        self.c_in = as_curvature(self.c_in)
        self.c_out = as_curvature(self.c_out)
        if self.weight.dim() != 2:
            raise InvalidInputError("Layer weight must be a matrix")
        check_finite(self.weight.detach(), "layer weight")


@dataclass(frozen=True)
class FusionConfig:
    beta: float
    fusion_curvature: Curvature = Curvature(1.0)

    def __post_init__(self) -> None:
        if not 0.0 <= float(self.beta) <= 1.0:
            raise InvalidInputError(f"beta must lie in [0, 1], got {self.beta!r}")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "fusion_curvature", as_curvature(self.fusion_curvature))


def lift_to_ball(x_euclid: torch.Tensor, c: CurvatureLike) -> torch.Tensor:
    check_finite(x_euclid.detach(), "Euclidean features")
    return expmap0(x_euclid, c)


def _check_shapes(h: torch.Tensor, graph: NormalizedGraph, weight: torch.Tensor) -> None:
    if h.dim() != 2 or h.shape[0] != graph.n:
        raise InvalidInputError(f"Expected a ({graph.n}, d) feature matrix, got {tuple(h.shape)}")
    if h.shape[1] != weight.shape[0]:
        raise InvalidInputError(
            f"Feature dimension {h.shape[1]} does not match weight rows {weight.shape[0]}"
        )


def hgcn_layer(
    h: torch.Tensor,
    graph: NormalizedGraph,
    params: LayerParams,
    trace: Optional[List[torch.Tensor]] = None,
) -> torch.Tensor:
    """exp^{c_out}( sigma( Â · log^{c_in}(H) · W ) ), row-wise.

    When ``trace`` is given, the sign pattern of the pre-activation is
    appended to it.
    """
    _check_shapes(h, graph, params.weight)
    tangent = logmap0(h, params.c_in)
    pre = graph.propagate(tangent) @ params.weight
    if trace is not None:
        trace.append((pre > 0).detach())
    return expmap0(ACTIVATIONS[params.activation](pre), params.c_out)


def euclid_gcn_layer(
    h: torch.Tensor,
    graph: NormalizedGraph,
    weight: torch.Tensor,
    activation: str = "relu",
    trace: Optional[List[torch.Tensor]] = None,
) -> torch.Tensor:
    """sigma( Â · H · W )."""
    _check_activation(activation)
    _check_shapes(h, graph, weight)
    pre = graph.propagate(h) @ weight
    if trace is not None:
        trace.append((pre > 0).detach())
    return ACTIVATIONS[activation](pre)


def fuse(
    h_struct: torch.Tensor,
    h_visual: torch.Tensor,
    cfg: FusionConfig,
    geometry: str = "poincare",
) -> torch.Tensor:
    """(beta (x) h_s) (+) ((1 - beta) (x) h_v); linear mix for Euclidean channels."""
    if h_struct.shape != h_visual.shape:
        raise InvalidInputError(
            f"Cannot fuse embeddings of shapes {tuple(h_struct.shape)} and {tuple(h_visual.shape)}"
        )
    if geometry == "euclidean":
        return cfg.beta * h_struct + (1.0 - cfg.beta) * h_visual
    c = cfg.fusion_curvature
    return mobius_addition(
        mobius_scalar_mul(cfg.beta, h_struct, c),
        mobius_scalar_mul(1.0 - cfg.beta, h_visual, c),
        c,
    )


def channel_difference(
    a: torch.Tensor, b: torch.Tensor, c: CurvatureLike, geometry: str = "poincare"
) -> torch.Tensor:
    """(-a) (+) b on the ball, b - a in Euclidean space."""
    if geometry == "euclidean":
        return b - a
    return mobius_addition(-a, b, c)


def channel_distance(
    a: torch.Tensor, b: torch.Tensor, c: CurvatureLike, geometry: str = "poincare"
) -> torch.Tensor:
    """L1 distance from rows of ``a`` to rows of ``b`` (broadcasting)."""
    if geometry == "euclidean":
        return channel_difference(a, b, c, geometry).abs().sum(dim=-1)
    return poincare_distance(a, b, c)


def _xavier_uniform(fan_in: int, fan_out: int, generator: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return torch.empty(fan_in, fan_out, dtype=DTYPE).uniform_(-bound, bound, generator=generator)


class GraphConvolution(nn.Module):
    """One convolution layer; hyperbolic or Euclidean depending on ``geometry``."""

    def __init__(
        self,
        weight: torch.Tensor,
        c_in: CurvatureLike,
        c_out: CurvatureLike,
        activation: str = "relu",
        geometry: str = "poincare",
    ):
        super().__init__()
        _check_activation(activation)
        self.weight = Parameter(weight.to(DTYPE))
        self.c_in = as_curvature(c_in)
        self.c_out = as_curvature(c_out)
        self.activation = activation
        self.geometry = geometry

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def params(self) -> LayerParams:
        return LayerParams(self.weight, self.c_in, self.c_out, self.activation)

    def forward(
        self, h: torch.Tensor, graph: NormalizedGraph, trace: Optional[List[torch.Tensor]] = None
    ) -> torch.Tensor:
        if self.geometry == "euclidean":
            return euclid_gcn_layer(h, graph, self.weight, self.activation, trace)
        return hgcn_layer(h, graph, self.params(), trace)

    def extra_repr(self) -> str:
        return "in_features={}, out_features={}, c_in={}, c_out={}, activation={}".format(
            self.in_features, self.out_features, self.c_in.c, self.c_out.c, self.activation
        )


class ChannelModel(nn.Module):
    """Input features followed by a stack of graph convolutions.

    The structure channel owns a trainable input matrix; the visual channel
    keeps its precomputed features as a fixed buffer together with a mask of
    the entities that have an image.

    ``input_index`` maps every graph node to its row of ``input_features``;
    a node mapped to -1 starts at the origin. Nodes sharing a row share
    their input, which is how the two sides of a training seed pair are
    tied together.
    """

    def __init__(
        self,
        kind: str,
        input_features: torch.Tensor,
        layers: Sequence[GraphConvolution],
        trainable_inputs: bool,
        image_mask: Optional[torch.Tensor] = None,
        geometry: str = "poincare",
        input_index: Optional[torch.Tensor] = None,
    ):
        super().__init__()
        if kind not in CHANNEL_KINDS:
            raise InvalidInputError(f"Unknown channel kind '{kind}'")
        if geometry not in GEOMETRIES:
            raise InvalidInputError(f"Unknown geometry '{geometry}'")
        if not layers:
            raise InvalidInputError("A channel needs at least one layer")
        self.kind = kind
        self.geometry = geometry
        features = input_features.to(DTYPE)
        if trainable_inputs:
            self.input_features = Parameter(features)
        else:
            self.register_buffer("input_features", features)
        if input_index is None:
            input_index = torch.arange(features.shape[0])
        input_index = torch.as_tensor(input_index, dtype=torch.long)
        if input_index.dim() != 1 or (
            input_index.numel() and (input_index.min() < -1 or input_index.max() >= features.shape[0])
        ):
            raise InvalidInputError(
                f"input_index must be a vector with entries in [-1, {features.shape[0]})"
            )
        self.register_buffer("input_index", input_index)
        if image_mask is None:
            image_mask = torch.ones(input_index.shape[0], dtype=torch.bool)
        self.register_buffer("image_mask", image_mask.to(torch.bool))
        self.layers = nn.ModuleList(layers)
        self._check_chain()

    def _check_chain(self) -> None:
        width = self.input_features.shape[1]
        for i, layer in enumerate(self.layers):
            if layer.in_features != width:
                raise InvalidInputError(
                    f"Layer {i} expects {layer.in_features} inputs, previous width is {width}"
                )
            if i > 0 and self.layers[i - 1].c_out != layer.c_in:
                raise InvalidInputError(f"Curvature chain broken between layers {i - 1} and {i}")
            width = layer.out_features

    @property
    def n_nodes(self) -> int:
        return self.input_index.shape[0]

    @property
    def dims(self) -> List[int]:
        return [self.input_features.shape[1]] + [layer.out_features for layer in self.layers]

    @property
    def curvatures(self) -> List[float]:
        return [self.layers[0].c_in.c] + [layer.c_out.c for layer in self.layers]

    @property
    def activation(self) -> str:
        return self.layers[0].activation

    @property
    def output_curvature(self) -> Curvature:
        return self.layers[-1].c_out

    def node_features(self) -> torch.Tensor:
        """Euclidean input row of every node, zeros where the index is -1."""
        rows = self.input_features[self.input_index.clamp_min(0)]
        return torch.where((self.input_index >= 0).unsqueeze(1), rows, torch.zeros_like(rows))

    def lift(self) -> torch.Tensor:
        if self.geometry == "euclidean":
            return self.node_features()
        return lift_to_ball(self.node_features(), self.layers[0].c_in)

    def forward(
        self, graph: NormalizedGraph, trace: Optional[List[torch.Tensor]] = None
    ) -> torch.Tensor:
        if graph.n != self.n_nodes:
            raise InvalidInputError(
                f"Channel has {self.n_nodes} input rows but the graph has {graph.n} nodes"
            )
        h = self.lift()
        for layer in self.layers:
            h = layer(h, graph, trace)
        return h

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        return channel_distance(a, b, self.output_curvature, self.geometry)

    @classmethod
    def build(
        cls,
        kind: str,
        input_features: torch.Tensor,
        dims: Sequence[int],
        curvatures: Sequence[float],
        activation: str = "relu",
        geometry: str = "poincare",
        generator: Optional[torch.Generator] = None,
        image_mask: Optional[torch.Tensor] = None,
        input_index: Optional[torch.Tensor] = None,
    ) -> "ChannelModel":
        """Create Xavier-initialized layers for ``dims`` = [d0, d1, ..., dL]."""
        if len(dims) < 2:
            raise InvalidInputError("dims must list the input width and at least one layer width")
        if len(curvatures) != len(dims):
            raise InvalidInputError(
                f"Expected {len(dims)} curvatures (one per layer boundary), got {len(curvatures)}"
            )
        if input_features.shape[1] != dims[0]:
            raise InvalidInputError(
                f"Input features have width {input_features.shape[1]}, dims[0] is {dims[0]}"
            )
        generator = generator or torch.Generator().manual_seed(0)
        layers = [
            GraphConvolution(
                _xavier_uniform(dims[i], dims[i + 1], generator),
                curvatures[i],
                curvatures[i + 1],
                activation,
                geometry,
            )
            for i in range(len(dims) - 1)
        ]
        return cls(
            kind,
            input_features,
            layers,
            trainable_inputs=(kind == "structure"),
            image_mask=image_mask,
            geometry=geometry,
            input_index=input_index,
        )

    @classmethod
    def structure(
        cls,
        n_nodes: int,
        dims: Sequence[int],
        curvatures: Sequence[float],
        activation: str = "relu",
        geometry: str = "poincare",
        generator: Optional[torch.Generator] = None,
        anchors: Optional[np.ndarray] = None,
    ) -> "ChannelModel":
        """Trainable structure channel.

        Without ``anchors`` every node gets a free input row. With anchors
        (the training seed pairs) both entities of a pair share one row and
        every other node starts at the origin, so unseen entities are
        described only through their position relative to the anchors.
        """
        generator = generator or torch.Generator().manual_seed(0)
        if anchors is None:
            features = init_structure_features(n_nodes, dims[0], curvatures[0], generator)
            return cls.build("structure", features, dims, curvatures, activation, geometry, generator)
        input_index = anchor_index(n_nodes, anchors)
        n_rows = int(input_index.max()) + 1 if input_index.numel() else 0
        features = init_structure_features(n_rows, dims[0], curvatures[0], generator)
        return cls.build(
            "structure", features, dims, curvatures, activation, geometry, generator,
            input_index=input_index,
        )

    @classmethod
    def visual(
        cls,
        features: torch.Tensor,
        image_mask: torch.Tensor,
        dims: Sequence[int],
        curvatures: Sequence[float],
        activation: str = "relu",
        geometry: str = "poincare",
        generator: Optional[torch.Generator] = None,
    ) -> "ChannelModel":
        """``dims[0]`` must equal the visual feature width."""
        prepared = prepare_visual_features(features, image_mask)
        return cls.build(
            "visual", prepared, dims, curvatures, activation, geometry, generator, image_mask
        )


def forward_channel(model: ChannelModel, graph: NormalizedGraph) -> torch.Tensor:
    return model(graph)


def init_structure_features(
    n_nodes: int, dim: int, c: CurvatureLike, generator: torch.Generator
) -> torch.Tensor:
    """N(0, 1/dim) rows, shrunk to norm <= 0.9/sqrt(c)."""
    features = torch.empty(n_nodes, dim, dtype=DTYPE).normal_(
        0.0, 1.0 / math.sqrt(dim), generator=generator
    )
    limit = INPUT_NORM_FRACTION * as_curvature(c).radius
    norms = features.norm(dim=1, keepdim=True)
    scale = torch.clamp(limit / norms.clamp_min(1e-300), max=1.0)
    return features * scale


def prepare_visual_features(features: torch.Tensor, image_mask: torch.Tensor) -> torch.Tensor:
    """Unit-normalize, scale by 0.5, zero the rows of entities without an image."""
    features = torch.as_tensor(features, dtype=DTYPE)
    check_finite(features, "visual features")
    mask = torch.as_tensor(image_mask, dtype=torch.bool)
    if mask.shape[0] != features.shape[0]:
        raise InvalidInputError("Image mask length does not match the feature rows")
    norms = features.norm(dim=1, keepdim=True).clamp_min(1e-300)
    prepared = VISUAL_SCALE * features / norms
    return torch.where(mask.unsqueeze(1), prepared, torch.zeros_like(prepared))


def anchor_index(n_nodes: int, anchors: np.ndarray) -> torch.Tensor:
    """Row p for both entities of anchor pair p, -1 for every other node."""
    pairs = np.asarray(anchors, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n_nodes):
        raise InvalidInputError(f"Anchor pairs reference nodes outside [0, {n_nodes})")
    flat = pairs.reshape(-1)
    if len(np.unique(flat)) != len(flat):
        raise InvalidInputError("An entity appears in more than one anchor pair")
    index = np.full(n_nodes, -1, dtype=np.int64)
    rows = np.arange(len(pairs))
    index[pairs[:, 0]] = rows
    index[pairs[:, 1]] = rows
    return torch.from_numpy(index)
