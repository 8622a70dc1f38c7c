"""VICReg and composite objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

VAR_EPS = 1e-4


@dataclass(frozen=True)
class VicregWeights:
    lambda_inv: float = 10.0
    lambda_var: float = 10.0
    lambda_cov: float = 1.0

    def __post_init__(self):
        if min(self.lambda_inv, self.lambda_var, self.lambda_cov) < 0:
            raise ValueError("VICReg weights must be non-negative")


@dataclass
class LossBreakdown:
    """Loss components; ``total`` keeps the autodiff graph."""

    total: Tensor
    invariance: float
    variance: float
    covariance: float
    auxiliary: float = 0.0

    def to_dict(self) -> dict:
        return {"total": float(self.total.data), "invariance": self.invariance,
                "variance": self.variance, "covariance": self.covariance, "auxiliary": self.auxiliary}


def _variance_term(z: Tensor) -> Tensor:
    b = z.shape[0]
    zc = z - z.mean(axis=0, keepdims=True)
    var = (zc * zc).sum(axis=0) * (1.0 / (b - 1))
    std = T.sqrt(var + VAR_EPS)
    return T.relu(1.0 - std).mean()


def _covariance_term(z: Tensor) -> Tensor:
    b, d = z.shape
    zc = z - z.mean(axis=0, keepdims=True)
    cov = T.matmul(zc.T, zc) * (1.0 / (b - 1))
    off = Tensor((1.0 - np.eye(d)).astype(z.dtype))
    return ((cov * off) ** 2).sum() * (1.0 / d)


def vicreg_terms(z_a: Tensor, z_m: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """(invariance, variance, covariance) as graph nodes.

    Variance is the hinge on per-dimension std averaged over the two branches;
    covariance is summed over the branches.
    """
    if z_a.ndim != 2 or z_a.shape != z_m.shape:
        raise T.ShapeError(f"vicreg: embeddings must share a (B, D) shape, got {z_a.shape} and {z_m.shape}")
    if z_a.shape[0] < 2:
        raise ValueError("vicreg needs a batch of at least 2")
    diff = z_a - z_m
    inv = (diff * diff).mean()
    var = (_variance_term(z_a) + _variance_term(z_m)) * 0.5
    cov = _covariance_term(z_a) + _covariance_term(z_m)
    return inv, var, cov


def vicreg(z_a: Tensor, z_m: Tensor, weights: VicregWeights = VicregWeights()) -> LossBreakdown:
    inv, var, cov = vicreg_terms(z_a, z_m)
    total = inv * weights.lambda_inv + var * weights.lambda_var + cov * weights.lambda_cov
    return LossBreakdown(total, float(inv.data), float(var.data), float(cov.data))


def third_tower_loss(z_a: Tensor, z_m: Tensor, z_d: Tensor, alpha: float, beta: float,
                     weights: VicregWeights = VicregWeights(), anchor: bool = False) -> LossBreakdown:
    """VICReg(a, m) + alpha VICReg(a, d) + beta VICReg(m, d).

    With ``anchor`` the direct (a, m) term is dropped and the descriptor
    embedding is the only link between the modalities.
    """
    parts = [] if anchor else [(1.0, vicreg(z_a, z_m, weights))]
    parts += [(alpha, vicreg(z_a, z_d, weights)), (beta, vicreg(z_m, z_d, weights))]
    total = None
    for w, p in parts:
        if w == 0:
            continue
        term = p.total * w
        total = term if total is None else total + term
    if total is None:
        total = parts[0][1].total * 0.0
    return LossBreakdown(total, *(sum(w * getattr(p, f) for w, p in parts)
                                  for f in ("invariance", "variance", "covariance")))


def with_auxiliary(loss: LossBreakdown, aux: Tensor | None) -> LossBreakdown:
    """Add an auxiliary term (e.g. MoE balance) to the total."""
    if aux is None:
        return loss
    return LossBreakdown(loss.total + aux, loss.invariance, loss.variance, loss.covariance,
                         loss.auxiliary + float(aux.data))

