"""
Spectral filters of GCN and Laplacian-LoRA propagation
======================================================

A GCN layer multiplies every Laplacian eigenmode by ``1 - lambda``.  Stacking
layers raises that factor to the depth, so all modes except ``lambda = 0``
decay geometrically.  The Laplacian-LoRA branch adds a learned low-rank
correction whose response is ``(1 - lambda)(1 - alpha_l theta(lambda))``;
summed with the GCN branch the layer response becomes
``(1 - lambda)(2 - alpha_l theta(lambda))``.

This script tabulates both responses and shows what the stability report
says about them.
"""

import numpy as np

from laplora import (
    FilterParams,
    ThetaNet,
    effective_filter,
    gcn_filter,
    stability_report,
    theta_eval,
)

rng = np.random.default_rng(0)
net = ThetaNet.init(rng)  # theta starts close to 0.5 everywhere

lam = np.array([0.0, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0])
depth = 8

###############################################################################
# Per-layer responses at the first and the last layer.  ``alpha_l`` grows
# linearly with the layer index, so the correction is strongest at the top.

first = FilterParams(alpha=0.5, layer_index=1, depth=depth, theta=net)
last = FilterParams(alpha=0.5, layer_index=depth, depth=depth, theta=net)

print(f"{'lambda':>7} {'theta':>7} {'gcn':>8} {'eff l=1':>8} {'eff l=L':>8} {'mean l=L':>9}")
for x, th, g, e1, eL, mL in zip(
    lam,
    theta_eval(net, lam),
    gcn_filter(lam),
    effective_filter(lam, first),
    effective_filter(lam, last),
    effective_filter(lam, last, combine="mean"),
):
    print(f"{x:7.2f} {th:7.3f} {g:8.3f} {e1:8.3f} {eL:8.3f} {mL:9.3f}")

###############################################################################
# Energy left in each mode after ``depth`` layers, ``|mu|^L``.  The GCN
# kills everything but the constant mode; the summed response keeps low
# frequencies alive (and amplifies some, which is the stability problem).

print(f"\nretained energy after L={depth} layers")
for x in lam:
    gcn = abs(gcn_filter(x)) ** depth
    lora = np.prod([abs(effective_filter(x, FilterParams(0.5, l, depth, net))) for l in range(1, depth + 1)])
    print(f"  lambda={x:4.2f}  gcn={gcn:10.3e}  lora={lora:10.3e}")

###############################################################################
# The stability condition asks for ``sup |g| < 1`` over ``lambda`` in (0, 2].
# Summing the branches violates it near ``lambda = 0``; averaging them does not.

layers = [FilterParams(0.5, l, depth, net) for l in range(1, depth + 1)]
for combine in ("sum", "mean"):
    rep = stability_report(lam, layers, combine)
    worst = max(rep.layers, key=lambda l: l.sup)
    print(f"\n{combine:>4}: sup |g| = {rep.sup:.4f} at lambda = {worst.argmax_lambda}, stable = {rep.stable}")
