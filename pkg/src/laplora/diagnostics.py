"""Oversmoothing diagnostics.

Spectra are lists of ``(lam, mu)`` pairs evaluated at the cached Laplacian
eigenvalues: ``mu`` is the per-layer propagation eigenvalue for that mode.
From a spectrum we derive the contraction ratio ``(|mu_2| / |mu_1|)^L`` and
the per-frequency retained energy ``|mu|^L``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError
from .filters import (
    LayerStability,
    StabilityReport,
    effective_filter,
    gcn_filter,
    stability_report,
)

__all__ = [
    "embedding_variance",
    "propagation_spectrum",
    "contraction_ratio",
    "energy_retention",
    "variance_sweep",
    "DiagnosticsReport",
    "build_report",
]


def embedding_variance(h) -> float:
    """Across-node population variance per dimension, averaged over dimensions."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim == 1:
        h = h[:, None]
    if h.shape[0] < 2:
        raise DataError("embedding variance needs at least two nodes")
    # shift by the first row: identical rows then give exactly zero
    centred = h - h[0]
    centred = centred - centred.mean(axis=0)
    return float(np.mean(np.mean(centred * centred, axis=0)))


def _layer_filter(model, lam, layer):
    cfg = model.config
    if not model.lora_active(layer):
        return gcn_filter(lam)
    return effective_filter(lam, model.filter_params(layer), cfg.combine)


def propagation_spectrum(basis, model, layer: int | None = None, mode: str = "final"):
    """``[(lam_i, mu_i)]`` for the model's propagation at one layer.

    ``layer`` defaults to the last one.  ``mode="geomean"`` replaces the
    single layer by the geometric mean of ``|mu|`` over layers ``1..depth``.
    """
    lam = np.asarray(basis.eigenvalues, dtype=np.float64)
    depth = model.config.depth
    if mode == "final":
        mu = _layer_filter(model, lam, depth if layer is None else layer)
    elif mode == "geomean":
        logs = np.zeros_like(lam)
        zero = np.zeros(len(lam), dtype=bool)
        for l in range(1, depth + 1):
            m = np.abs(_layer_filter(model, lam, l))
            zero |= m == 0
            logs += np.log(np.where(m == 0, 1.0, m))
        mu = np.where(zero, 0.0, np.exp(logs / depth))
    else:
        raise ParameterError(f"unknown spectrum mode {mode!r}")
    return [(float(a), float(b)) for a, b in zip(lam, np.atleast_1d(mu))]


def _pairs(spectrum) -> np.ndarray:
    return np.asarray(spectrum, dtype=np.float64).reshape(-1, 2)


def contraction_ratio(spectrum, depth: int) -> float:
    """``(|mu_2| / |mu_1|)^depth`` for the two largest ``|mu|`` in the spectrum."""
    sp = _pairs(spectrum)
    if len(sp) < 2:
        raise DataError("contraction ratio needs at least two spectral entries")
    if depth == 0:
        return 1.0
    mags = np.abs(sp[:, 1])
    # |mu| descending, lam ascending on ties
    order = np.lexsort((sp[:, 0], -mags))
    mu1, mu2 = mags[order[0]], mags[order[1]]
    if mu1 == 0.0:
        return 0.0
    return float((mu2 / mu1) ** depth)


def energy_retention(spectrum, depth: int):
    """``[(lam, |mu|^depth)]``."""
    if depth < 1:
        raise ParameterError("energy retention needs depth >= 1")
    sp = _pairs(spectrum)
    return [(float(a), float(abs(m) ** depth)) for a, m in sp]


def variance_sweep(protocol) -> dict[int, tuple[float, float]]:
    """Depth -> (mean GCN variance, mean LoRA variance) over seeds; NaN where a variant is missing."""
    out: dict[int, tuple[float, float]] = {}
    for depth in sorted({r.depth for r in protocol.runs}):
        pair = []
        for variant in ("gcn", "lora"):
            vals = [
                embedding_variance(r.embeddings) if r.embeddings is not None else r.embed_variance
                for r in protocol.runs
                if r.depth == depth and r.variant == variant
            ]
            pair.append(float(np.mean(vals)) if vals else float("nan"))
        out[depth] = (pair[0], pair[1])
    return out


@dataclass
class DiagnosticsReport:
    variant: str
    model_depth: int
    energy_depth: int
    per_depth_variance: dict = field(default_factory=dict)
    spectrum: list = field(default_factory=list)
    contraction_curve: dict = field(default_factory=dict)
    energy_curve: list = field(default_factory=list)
    stability: StabilityReport | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "model_depth": self.model_depth,
            "energy_depth": self.energy_depth,
            "per_depth_variance": {str(k): v for k, v in self.per_depth_variance.items()},
            "spectrum": [{"lambda": l, "mu_gcn": g, "mu_eff": e} for l, g, e in self.spectrum],
            "contraction_curve": {
                v: {str(L): c for L, c in curve.items()} for v, curve in self.contraction_curve.items()
            },
            "energy_curve": [{"lambda": l, "E_gcn": g, "E_eff": e} for l, g, e in self.energy_curve],
            "stability": self.stability.to_dict() if self.stability else None,
            "meta": self.meta,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def csv_rows(self):
        """Long-format rows ``(diagnostic, variant, depth, lambda, value)``."""
        rows = []
        for l, g, e in self.spectrum:
            rows.append(("spectrum", "gcn", self.model_depth, l, g))
            if self.variant != "gcn":
                rows.append(("spectrum", self.variant, self.model_depth, l, e))
        for variant, curve in self.contraction_curve.items():
            for L, c in curve.items():
                rows.append(("contraction", variant, L, None, c))
        for l, g, e in self.energy_curve:
            rows.append(("energy", "gcn", self.energy_depth, l, g))
            if self.variant != "gcn":
                rows.append(("energy", self.variant, self.energy_depth, l, e))
        for depth, v in self.per_depth_variance.items():
            rows.append(("variance", self.variant, depth, None, v))
        if self.stability is not None:
            for ls in self.stability.layers:
                rows.append(("stability_sup", self.variant, ls.layer, ls.argmax_lambda, ls.sup))
        return rows

    def to_csv(self, path) -> None:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, float):
                return format(x, ".17g")
            return str(x)

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["diagnostic", "variant", "depth", "lambda", "value"])
            for row in self.csv_rows():
                w.writerow([fmt(x) for x in row])


def _gcn_stability(lam, depth) -> StabilityReport:
    lam = lam[lam > 1e-8]
    report = StabilityReport(combine="gcn")
    for layer in range(1, depth + 1):
        if len(lam) == 0:
            report.layers.append(LayerStability(layer, 0.0, None, True))
            continue
        g = np.abs(gcn_filter(lam))
        i = int(np.argmax(g))
        report.layers.append(LayerStability(layer, float(g[i]), float(lam[i]), bool(g[i] < 1.0)))
    return report


def build_report(model, basis, energy_depth: int = 16, max_depth: int = 32,
                 mode: str = "final", embeddings=None) -> DiagnosticsReport:
    """All spectral diagnostics for one (trained or fresh) model."""
    variant = model.config.variant
    lam = np.asarray(basis.eigenvalues, dtype=np.float64)
    gcn = [(float(l), float(m)) for l, m in zip(lam, gcn_filter(lam))]
    eff = propagation_spectrum(basis, model, mode=mode)
    spectrum = [(l, g, e) for (l, g), (_, e) in zip(gcn, eff)]
    curves = {"gcn": {L: contraction_ratio(gcn, L) for L in range(1, max_depth + 1)}}
    if variant != "gcn":
        curves[variant] = {L: contraction_ratio(eff, L) for L in range(1, max_depth + 1)}
    e_gcn = energy_retention(gcn, energy_depth)
    e_eff = energy_retention(eff, energy_depth)
    energy = [(l, g, e) for (l, g), (_, e) in zip(e_gcn, e_eff)]
    depth = model.config.depth
    if variant == "gcn":
        stability = _gcn_stability(lam, depth)
    else:
        stability = stability_report(
            lam, [model.filter_params(l) for l in range(1, depth + 1)], model.config.combine
        )
    variance = {}
    if embeddings is not None:
        variance[depth] = embedding_variance(embeddings)
    return DiagnosticsReport(
        variant=variant,
        model_depth=depth,
        energy_depth=energy_depth,
        per_depth_variance=variance,
        spectrum=spectrum,
        contraction_curve=curves,
        energy_curve=energy,
        stability=stability,
        meta={"spectrum_mode": mode, "k": int(len(lam))},
    )
