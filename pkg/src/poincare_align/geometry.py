"""
Poincare ball operations

Two layers live here. The tensor kernels (``expmap0``, ``logmap0``,
``mobius_addition``, ``mobius_scalar_mul``, ``poincare_distance``, ``project``)
work row-wise on the last dimension of float64 tensors and are what the model
and training code call. The typed operations (``exp_map``, ``log_map``,
``mobius_add``, ``mobius_scale``, ``hyp_distance``) wrap the kernels for
``BallPoint`` / ``TangentVector`` values and check curvature and dimension
agreement.
"""

import math
from dataclasses import dataclass
from typing import Union

import torch

from poincare_align.exceptions import InvalidInputError

DTYPE = torch.float64

# Points are kept inside (1 - BALL_EPS) / sqrt(c).
BALL_EPS = 1e-5
# Upper clamp for the artanh argument.
ARTANH_MAX = 1.0 - 1e-7
# Norms below this are treated as zero.
MIN_NORM = 1e-15


@dataclass(frozen=True)
class Curvature:
    """Ball of curvature -c (c > 0) and radius 1/sqrt(c)."""

    c: float

    def __post_init__(self) -> None:
        value = float(self.c)
        if not math.isfinite(value) or value <= 0.0:
            raise InvalidInputError(f"Curvature must be positive and finite, got {self.c!r}")
        object.__setattr__(self, "c", value)

    @property
    def sqrt_c(self) -> float:
        return math.sqrt(self.c)

    @property
    def radius(self) -> float:
        return 1.0 / self.sqrt_c

    @property
    def max_norm(self) -> float:
        """Radius of the margin shell points are projected onto."""
        return (1.0 - BALL_EPS) / self.sqrt_c


CurvatureLike = Union[Curvature, float]


def as_curvature(c: CurvatureLike) -> Curvature:
    return c if isinstance(c, Curvature) else Curvature(c)


def check_finite(x: torch.Tensor, name: str = "input") -> None:
    if not bool(torch.isfinite(x).all()):
        raise InvalidInputError(f"{name} contains non-finite values")


def _norm(x: torch.Tensor) -> torch.Tensor:
    return x.norm(dim=-1, p=2, keepdim=True)


def project(x: torch.Tensor, c: CurvatureLike) -> torch.Tensor:
    """Rescale rows that reach the margin shell back onto it."""
    curv = as_curvature(c)
    norm = _norm(x).clamp_min(MIN_NORM)
    maxnorm = curv.max_norm
    projected = x / norm * maxnorm
    return torch.where(norm >= maxnorm, projected, x)


def artanh(x: torch.Tensor) -> torch.Tensor:
    return torch.atanh(x.clamp(0.0, ARTANH_MAX))


def expmap0(v: torch.Tensor, c: CurvatureLike) -> torch.Tensor:
    """Exponential map at the origin: tanh(sqrt(c)|v|) v / (sqrt(c)|v|)."""
    curv = as_curvature(c)
    raw_norm = _norm(v)
    norm = raw_norm.clamp_min(MIN_NORM)
    scaled = curv.sqrt_c * norm
    result = torch.tanh(scaled) * v / scaled
    result = torch.where(raw_norm < MIN_NORM, torch.zeros_like(v), result)
    return project(result, curv)


def logmap0(y: torch.Tensor, c: CurvatureLike) -> torch.Tensor:
    """Logarithmic map at the origin: artanh(sqrt(c)|y|) y / (sqrt(c)|y|)."""
    curv = as_curvature(c)
    y = project(y, curv)
    raw_norm = _norm(y)
    norm = raw_norm.clamp_min(MIN_NORM)
    scaled = curv.sqrt_c * norm
    result = artanh(scaled) * y / scaled
    return torch.where(raw_norm < MIN_NORM, torch.zeros_like(y), result)


def mobius_addition(x: torch.Tensor, y: torch.Tensor, c: CurvatureLike) -> torch.Tensor:
    curv = as_curvature(c)
    k = curv.c
    x2 = x.pow(2).sum(dim=-1, keepdim=True)
    y2 = y.pow(2).sum(dim=-1, keepdim=True)
    xy = (x * y).sum(dim=-1, keepdim=True)
    num = (1 + 2 * k * xy + k * y2) * x + (1 - k * x2) * y
    denom = 1 + 2 * k * xy + k ** 2 * x2 * y2
    return project(num / denom.clamp_min(MIN_NORM), curv)


def mobius_scalar_mul(r: float, x: torch.Tensor, c: CurvatureLike) -> torch.Tensor:
    """r (x) x = tanh(r artanh(sqrt(c)|x|)) x / (sqrt(c)|x|)."""
    curv = as_curvature(c)
    r = float(r)
    if r == 1.0:
        return project(x, curv)
    if r == 0.0:
        return torch.zeros_like(x)
    raw_norm = _norm(x)
    norm = raw_norm.clamp_min(MIN_NORM)
    scaled = curv.sqrt_c * norm
    result = torch.tanh(r * artanh(scaled)) * x / scaled
    result = torch.where(raw_norm < MIN_NORM, torch.zeros_like(x), result)
    return project(result, curv)


def poincare_distance(x: torch.Tensor, y: torch.Tensor, c: CurvatureLike) -> torch.Tensor:
    """L1 norm of (-x) (+) y; the last dimension is reduced."""
    return mobius_addition(-x, y, c).abs().sum(dim=-1)


def _as_tensor(coords) -> torch.Tensor:
    tensor = torch.as_tensor(coords, dtype=DTYPE)
    if tensor.dim() == 0:
        raise InvalidInputError("Coordinates must have at least one dimension")
    return tensor


@dataclass(frozen=True)
class TangentVector:
    """Vector in the tangent space at the origin of the ball with ``curvature``."""

    coords: torch.Tensor
    curvature: Curvature

    def __post_init__(self) -> None:
        coords = _as_tensor(self.coords)
        check_finite(coords, "tangent vector")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "curvature", as_curvature(self.curvature))

    @property
    def dim(self) -> int:
        return self.coords.shape[-1]


@dataclass(frozen=True)
class BallPoint:
    """Point (or batch of points along the last axis) on the Poincare ball."""

    coords: torch.Tensor
    curvature: Curvature

    def __post_init__(self) -> None:
        coords = _as_tensor(self.coords)
        check_finite(coords, "ball point")
        curvature = as_curvature(self.curvature)
        object.__setattr__(self, "coords", project(coords, curvature))
        object.__setattr__(self, "curvature", curvature)

    @property
    def dim(self) -> int:
        return self.coords.shape[-1]

    @classmethod
    def origin(cls, dim: int, curvature: CurvatureLike) -> "BallPoint":
        return cls(torch.zeros(dim, dtype=DTYPE), as_curvature(curvature))

    def __neg__(self) -> "BallPoint":
        return BallPoint(-self.coords, self.curvature)


def _check_same_ball(a: BallPoint, b: BallPoint) -> None:
    if a.curvature != b.curvature:
        raise InvalidInputError(
            f"Curvature mismatch: {a.curvature.c} vs {b.curvature.c}"
        )
    if a.dim != b.dim:
        raise InvalidInputError(f"Dimension mismatch: {a.dim} vs {b.dim}")


def exp_map(v: TangentVector) -> BallPoint:
    return BallPoint(expmap0(v.coords, v.curvature), v.curvature)


def log_map(y: BallPoint) -> TangentVector:
    return TangentVector(logmap0(y.coords, y.curvature), y.curvature)


def mobius_add(a: BallPoint, b: BallPoint) -> BallPoint:
    _check_same_ball(a, b)
    return BallPoint(mobius_addition(a.coords, b.coords, a.curvature), a.curvature)


def mobius_scale(r: float, a: BallPoint) -> BallPoint:
    if not math.isfinite(float(r)):
        raise InvalidInputError(f"Scale factor must be finite, got {r!r}")
    return BallPoint(mobius_scalar_mul(r, a.coords, a.curvature), a.curvature)


def hyp_distance(a: BallPoint, b: BallPoint) -> torch.Tensor:
    """Distance from ``a`` to ``b``; not assumed symmetric."""
    _check_same_ball(a, b)
    return poincare_distance(a.coords, b.coords, a.curvature)
