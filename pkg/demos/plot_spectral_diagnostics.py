"""
Propagation spectrum, contraction and energy retention
======================================================

For a freshly initialised model the diagnostics only depend on the filter
and the cached eigenvalues.  This script builds a small two-community graph,
computes its eigenbasis, and compares the GCN and Laplacian-LoRA spectra:

* ``mu(lambda)``: per-layer propagation eigenvalue of every cached mode,
* ``C(L) = (|mu_2| / |mu_1|)^L``: how fast the second mode dies relative to the first,
* ``E(lambda; L) = |mu|^L``: energy each mode keeps after ``L`` layers.

The full report is written as JSON and long-format CSV to ``./spectral_diagnostics``.
"""

from pathlib import Path

from laplora import (
    ModelConfig,
    SyntheticSpec,
    build_model,
    build_report,
    generate,
    normalized_laplacian,
    partial_eigen,
)

data = generate(SyntheticSpec("sbm", 200, p_in=0.1, p_out=0.01, seed=3))
basis = partial_eigen(normalized_laplacian(data), 16)
print("lowest eigenvalues:", " ".join(f"{x:.3f}" for x in basis.eigenvalues[:6]))

gcn, _ = build_model(data, ModelConfig(depth=16), basis, seed=0)
lora, _ = build_model(data, ModelConfig(depth=16, use_lora=True, k=16), basis, seed=0)

###############################################################################
# The second-smallest eigenvalue separates the two communities.  Under GCN
# propagation its mode decays like ``(1 - lambda_2)^L`` relative to the
# constant mode.  With theta near 0.5 at initialisation the summed response
# scales both modes by similar factors, so the ratio barely moves; the
# difference shows up in absolute energy instead.

reports = {m.config.variant: build_report(m, basis, energy_depth=16) for m in (gcn, lora)}
for L in (1, 2, 4, 8, 16, 32):
    print(f"C({L:2d})  gcn={reports['gcn'].contraction_curve['gcn'][L]:.4f}  "
          f"lora={reports['lora'].contraction_curve['lora'][L]:.4f}")

print("\nenergy retention at L=16")
for lam, e_gcn, e_eff in reports["lora"].energy_curve[:6]:
    print(f"  lambda={lam:.3f}  gcn={e_gcn:.3e}  lora={e_eff:.3e}")

st = reports["lora"].stability
print(f"\nstability: sup |g_eff| = {st.sup:.3f}, stable = {st.stable}")

out = Path("spectral_diagnostics")
out.mkdir(exist_ok=True)
reports["lora"].to_json(out / "diagnostics.json")
reports["lora"].to_csv(out / "diagnostics.csv")
print(f"wrote {out}/diagnostics.json and diagnostics.csv")
