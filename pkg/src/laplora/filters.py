"""Spectral responses of the GCN and Laplacian-LoRA propagation operators.

All filters take a Laplacian eigenvalue (scalar or array) in ``[0, 2]``.
Eigenvalues coming out of a numerical solver can overshoot the interval by
rounding, so anything within ``1e-10`` of it is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DomainError, ParameterError

__all__ = [
    "ThetaNet",
    "FilterParams",
    "StabilityReport",
    "LayerStability",
    "gcn_filter",
    "theta_eval",
    "alpha_at_layer",
    "lora_filter",
    "effective_filter",
    "beta_of_lambda",
    "stability_report",
    "COMBINE_MODES",
]

COMBINE_MODES = ("sum", "mean")
_SLACK = 1e-10
_NONZERO = 1e-8
# largest double below 1 / smallest positive normal, keeps theta strictly inside (0, 1)
_THETA_HI = np.nextafter(1.0, 0.0)
_THETA_LO = np.finfo(np.float64).tiny


@dataclass
class ThetaNet:
    """Weights of the scalar MLP ``lambda -> sigmoid(W2 relu(W1 lambda + b1) + b2)``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float = 0.0

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64).reshape(1, -1)
        h = self.w1.shape[1]
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(h)
        self.w2 = np.asarray(self.w2, dtype=np.float64).reshape(h, 1)
        self.b2 = float(np.asarray(self.b2, dtype=np.float64).reshape(-1)[0])

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 32) -> "ThetaNet":
        # uniform(+-1/sqrt(fan_in)), zero biases
        w1 = rng.uniform(-1.0, 1.0, size=(1, hidden))
        w2 = rng.uniform(-1.0, 1.0, size=(hidden, 1)) / np.sqrt(hidden)
        return cls(w1, np.zeros(hidden), w2, 0.0)

    @classmethod
    def zeros(cls, hidden: int = 32) -> "ThetaNet":
        return cls(np.zeros((1, hidden)), np.zeros(hidden), np.zeros((hidden, 1)), 0.0)

    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + 1


@dataclass
class FilterParams:
    """Correction strength ``alpha`` at layer ``layer_index`` of a ``depth``-layer model."""

    alpha: float
    layer_index: int
    depth: int
    theta: ThetaNet | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.depth < 1 or not 1 <= self.layer_index <= self.depth:
            raise ParameterError(f"need 1 <= layer_index <= depth, got {self.layer_index}/{self.depth}")


def _check_domain(lam):
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(~np.isfinite(lam)) or np.any(lam < -_SLACK) or np.any(lam > 2.0 + _SLACK):
        raise DomainError("Laplacian eigenvalues must lie in [0, 2]")
    return lam


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def gcn_filter(lam):
    """``1 - lambda``."""
    arr = _check_domain(lam)
    return _out(1.0 - arr, lam)


def theta_eval(net: ThetaNet, lam):
    arr = np.asarray(lam, dtype=np.float64)
    hidden = np.maximum(arr[..., None] * net.w1[0] + net.b1, 0.0)
    z = hidden @ net.w2[:, 0] + net.b2
    return _out(np.clip(expit(z), _THETA_LO, _THETA_HI), lam)


def alpha_at_layer(params: FilterParams) -> float:
    """Depth-annealed strength ``alpha * layer / depth``."""
    return params.alpha * params.layer_index / params.depth


def _theta(params: FilterParams, lam):
    if params.theta is None:
        if params.alpha == 0.0:
            return np.zeros_like(lam)
        raise ParameterError("FilterParams.theta is required when alpha > 0")
    return theta_eval(params.theta, lam)


def lora_filter(lam, params: FilterParams):
    """Residual branch response ``(1 - lambda)(1 - alpha_l theta(lambda))``."""
    arr = _check_domain(lam)
    a = alpha_at_layer(params)
    return _out((1.0 - arr) * (1.0 - a * _theta(params, arr)), lam)


def effective_filter(lam, params: FilterParams, combine: str = "sum"):
    """GCN branch plus LoRA branch; ``mean`` halves the sum."""
    if combine not in COMBINE_MODES:
        raise ParameterError(f"combine must be one of {COMBINE_MODES}")
    arr = _check_domain(lam)
    a = alpha_at_layer(params)
    g = (1.0 - arr) * (2.0 - a * _theta(params, arr))
    if combine == "mean":
        g = 0.5 * g
    return _out(g, lam)


def beta_of_lambda(lam, params: FilterParams):
    arr = _check_domain(lam)
    return _out(1.0 - alpha_at_layer(params) * _theta(params, arr), lam)


@dataclass
class LayerStability:
    layer: int
    sup: float
    argmax_lambda: float | None
    stable: bool


@dataclass
class StabilityReport:
    """Worst-case ``|g_eff|`` over the cached nonzero eigenvalues, per layer."""

    combine: str
    layers: list[LayerStability] = field(default_factory=list)

    @property
    def sup(self) -> float:
        return max((l.sup for l in self.layers), default=0.0)

    @property
    def stable(self) -> bool:
        return all(l.stable for l in self.layers)

    def to_dict(self) -> dict:
        return {
            "combine": self.combine,
            "sup": self.sup,
            "stable": self.stable,
            "layers": [vars(l).copy() for l in self.layers],
        }


def stability_report(eigenvalues, params_per_layer, combine: str = "sum") -> StabilityReport:
    """Check ``sup |g_eff(lambda)| < 1`` over cached eigenvalues with ``lambda > 0``.

    ``eigenvalues`` may be an :class:`~laplora.eigen.EigenBasis` or an array.
    Nothing is clamped; an unstable filter is reported, not repaired.
    """
    lam = np.asarray(getattr(eigenvalues, "eigenvalues", eigenvalues), dtype=np.float64)
    lam = lam[lam > _NONZERO]
    report = StabilityReport(combine=combine)
    for params in params_per_layer:
        if len(lam) == 0:
            report.layers.append(LayerStability(params.layer_index, 0.0, None, True))
            continue
        g = np.abs(effective_filter(lam, params, combine))
        i = int(np.argmax(g))
        report.layers.append(
            LayerStability(params.layer_index, float(g[i]), float(lam[i]), bool(g[i] < 1.0))
        )
    return report
