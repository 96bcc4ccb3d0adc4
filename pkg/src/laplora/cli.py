"""Command-line entry point.

Exit codes: 0 success, 1 usage or format error, 2 stale cache / checkpoint
mismatch / eigensolver non-convergence, 3 training failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import SyntheticSpec, generate, graph_hash, load_dataset, save_dataset
from .diagnostics import build_report
from .eigen import check_basis, load_eigen_cache, partial_eigen, save_eigen_cache
from .errors import ConvergenceError, LaplacianLoraError, StaleCacheError
from .graph import normalized_laplacian, propagation_operator
from .model import (
    GcnModel,
    ModelConfig,
    TrainConfig,
    load_checkpoint,
    run_protocol,
    save_checkpoint,
)

EXIT_OK, EXIT_USAGE, EXIT_STALE, EXIT_TRAIN = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _write_manifest(out: Path, command: str, args: dict, started: float, extra: dict) -> Path:
    manifest = {
        "tool": "laplora",
        "version": __version__,
        "command": command,
        "args": args,
        "started_at": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "wall_clock_seconds": time.time() - started,
        **extra,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# -- eigen ---------------------------------------------------------------------

def cmd_eigen(a) -> int:
    t0 = time.time()
    data = load_dataset(a.data)
    lap = normalized_laplacian(data, self_loops=a.self_loops)
    basis = partial_eigen(
        lap, a.k, tol=a.tol, max_iter=a.max_iter, seed=a.seed, graph_hash=graph_hash(data)
    )
    save_eigen_cache(basis, a.out)
    res = check_basis(lap, basis)
    print(f"k={basis.k} residual_max={res.max():.3e} "
          f"lambda_min={basis.eigenvalues[0]:.3e} elapsed={time.time() - t0:.2f}s")
    return EXIT_OK


# -- sweep ---------------------------------------------------------------------

SWEEP_KEYS = (
    "data", "eigen", "depths", "variants", "alpha", "combine", "seeds", "hidden", "dropout",
    "lr", "weight_decay", "epochs", "patience", "k", "self_loops", "row_normalize",
    "no_lora_output", "checkpoints",
)


def _sweep_configs(a):
    mc = ModelConfig(
        depth=max(2, min(a.depths)),
        hidden_dim=a.hidden,
        dropout=a.dropout,
        alpha=a.alpha,
        combine=a.combine,
        k=a.k,
        lora_on_output=not a.no_lora_output,
        self_loops=a.self_loops,
    )
    tc = TrainConfig(
        lr=a.lr, weight_decay=a.weight_decay, max_epochs=a.epochs, patience=a.patience, n_seeds=a.seeds
    )
    return mc, tc


def cmd_sweep(a) -> int:
    t0 = time.time()
    bad = [v for v in a.variants if v not in ("gcn", "lora")]
    if bad:
        raise UsageError(f"unknown variant(s): {', '.join(bad)}")
    if "lora" in a.variants and not a.eigen:
        raise UsageError("--eigen is required when variants include lora")
    if any(d < 2 for d in a.depths):
        raise UsageError("depths must be >= 2")
    data = load_dataset(a.data, row_normalize_features=a.row_normalize)
    ghash = graph_hash(data)
    basis = None
    if a.eigen and "lora" in a.variants:
        basis = load_eigen_cache(a.eigen, ghash)
    mc, tc = _sweep_configs(a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    if a.checkpoints:
        ckpt_dir.mkdir(exist_ok=True)

    def on_model(rec, model):
        if a.checkpoints:
            save_checkpoint(
                model,
                ckpt_dir / f"{rec.variant}_L{rec.depth}_s{rec.seed}.llck",
                {"graph_hash": ghash, "dataset": data.name, "seed": rec.seed,
                 "row_normalized": bool(a.row_normalize),
                 "eigen_hash": basis.graph_hash if basis is not None else None},
            )

    jobs = int(os.environ.get("LAPLORA_JOBS", a.jobs))
    try:
        result = run_protocol(
            data, a.depths, tc, mc, basis, variants=a.variants, jobs=jobs,
            keep_embeddings=False, on_model=on_model,
        )
    except Exception as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN

    _write_csv(
        out / "results.csv",
        ["variant", "depth", "seed", "test_acc", "val_acc", "best_epoch", "embed_variance"],
        [[r.variant, r.depth, r.seed, r.test_acc, r.val_acc, r.best_epoch, r.embed_variance]
         for r in result.runs],
    )
    summary = result.summary()
    cols = ["variant", "depth", "n_seeds", "test_acc_mean", "test_acc_std",
            "embed_variance_mean", "embed_variance_std"]
    _write_csv(out / "summary.csv", cols, [[row[c] for c in cols] for row in summary])
    args = {k: getattr(a, k) for k in SWEEP_KEYS}
    for key in ("data", "eigen"):
        if args[key]:
            args[key] = os.path.abspath(args[key])
    _write_manifest(out, "sweep", args, t0, {
        "model_config": asdict(mc),
        "train_config": asdict(tc),
        "dataset": {"name": data.name, "graph_hash": f"{ghash:016x}"},
        "seeds": list(range(tc.n_seeds)),
        "outputs": {"results": "results.csv", "summary": "summary.csv",
                    "checkpoints": "checkpoints" if a.checkpoints else None},
    })
    for row in summary:
        print(f"{row['variant']:>4} L={row['depth']:<3} acc={row['test_acc_mean']:.4f}"
              f"±{row['test_acc_std']:.4f} var={row['embed_variance_mean']:.4g}")
    return EXIT_OK


# -- diagnose ------------------------------------------------------------------

def cmd_diagnose(a) -> int:
    t0 = time.time()
    if not Path(a.model).exists():
        raise UsageError(f"checkpoint not found: {a.model}")
    header, state = load_checkpoint(a.model)
    data = load_dataset(a.data, row_normalize_features=bool(header.get("row_normalized", False)))
    ghash = graph_hash(data)
    basis = load_eigen_cache(a.eigen, ghash)
    ck_hash = header.get("graph_hash")
    if ck_hash is not None and int(ck_hash) != ghash:
        raise StaleCacheError("checkpoint was trained on a different graph than --data / --eigen")
    mc = ModelConfig.from_dict(header["config"])
    lap = normalized_laplacian(data, self_loops=mc.self_loops)
    if mc.use_lora and "theta.w1" not in state:
        raise StaleCacheError("checkpoint has no theta parameters for a lora model")
    model = GcnModel(mc, data.n_features, data.n_classes, propagation_operator(lap),
                     basis.truncate(min(mc.k, basis.k)))
    model.load_state(state)
    _, emb = model.forward(data.features, training=False)
    report = build_report(model, basis.truncate(min(mc.k, basis.k)), energy_depth=a.depth,
                          max_depth=a.max_depth, mode=a.spectrum_mode, embeddings=emb.data)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "diagnostics.json")
    report.to_csv(out / "diagnostics.csv")
    _write_manifest(out, "diagnose", {k: getattr(a, k) for k in
                                      ("data", "eigen", "model", "depth", "max_depth", "spectrum_mode")},
                    t0, {"dataset": {"name": data.name, "graph_hash": f"{ghash:016x}"},
                         "model_config": asdict(mc),
                         "outputs": {"json": "diagnostics.json", "csv": "diagnostics.csv"}})
    st = report.stability
    print(f"variant={report.variant} depth={report.model_depth} sup|g|={st.sup:.6g} stable={st.stable}")
    return EXIT_OK


# -- gen -----------------------------------------------------------------------

def cmd_gen(a) -> int:
    t0 = time.time()
    if a.spec:
        spec = SyntheticSpec(**json.loads(Path(a.spec).read_text(encoding="utf-8")))
    else:
        if a.kind is None or a.n is None:
            raise UsageError("gen needs --kind and --n (or --spec FILE)")
        spec = SyntheticSpec(
            kind=a.kind, n=a.n, block_sizes=a.blocks, p_in=a.p_in, p_out=a.p_out,
            feature_mode=a.features, n_features=a.n_features, feature_noise=a.noise, seed=a.seed,
            name=a.name,
        )
    data = generate(spec)
    out = save_dataset(data, a.out)
    _write_manifest(out, "gen", {"spec": spec.to_dict(), "out": a.out}, t0,
                    {"dataset": {"name": data.name, "graph_hash": f"{graph_hash(data):016x}"}})
    print(f"wrote {data.name}: n={data.n_nodes} edges={len(data.edges)} -> {out}")
    return EXIT_OK


# -- replay --------------------------------------------------------------------

def cmd_replay(a) -> int:
    manifest = json.loads(Path(a.manifest).read_text(encoding="utf-8"))
    if manifest.get("command") != "sweep":
        raise UsageError("only sweep manifests can be replayed")
    args = dict(manifest["args"])
    argv = ["sweep", "--out", a.out or str(Path(a.manifest).parent)]
    flags = {
        "data": "--data", "eigen": "--eigen", "alpha": "--alpha", "combine": "--combine",
        "seeds": "--seeds", "hidden": "--hidden", "dropout": "--dropout", "lr": "--lr",
        "weight_decay": "--weight-decay", "epochs": "--epochs", "patience": "--patience", "k": "--k",
    }
    for key, flag in flags.items():
        if args.get(key) is not None:
            argv += [flag, _fmt(args[key])]
    argv += ["--depths", ",".join(map(str, args["depths"])), "--variants", ",".join(args["variants"])]
    for key, flag in (("self_loops", "--self-loops"), ("row_normalize", "--row-normalize"),
                      ("no_lora_output", "--no-lora-output"), ("checkpoints", "--checkpoints")):
        if args.get(key):
            argv.append(flag)
    return main(argv)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="laplora", description="Laplacian-LoRA GCN experiments")
    p.add_argument("--version", action="version", version=f"laplora {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("eigen", help="precompute and cache the k smallest Laplacian eigenpairs")
    e.add_argument("--data", required=True)
    e.add_argument("--k", type=int, default=64)
    e.add_argument("--out", required=True)
    e.add_argument("--tol", type=float, default=1e-8)
    e.add_argument("--max-iter", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--self-loops", action="store_true")
    e.set_defaults(func=cmd_eigen)

    s = sub.add_parser("sweep", help="train GCN / Laplacian-LoRA over depths and seeds")
    s.add_argument("--data", required=True)
    s.add_argument("--eigen", default=None)
    s.add_argument("--depths", type=_int_list, default=[2, 4, 8, 16, 32])
    s.add_argument("--variants", type=_str_list, default=["gcn", "lora"])
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--combine", choices=["sum", "mean"], default="sum")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--dropout", type=float, default=0.5)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--weight-decay", type=float, default=5e-4)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--patience", type=int, default=50)
    s.add_argument("--k", type=int, default=64)
    s.add_argument("--self-loops", action="store_true", help="use A + I before normalizing")
    s.add_argument("--row-normalize", action="store_true", help="row-normalize input features")
    s.add_argument("--no-lora-output", action="store_true", help="skip the LoRA branch on the last layer")
    s.add_argument("--checkpoints", action="store_true", help="write one checkpoint per run")
    s.set_defaults(func=cmd_sweep)

    d = sub.add_parser("diagnose", help="spectral diagnostics of a trained checkpoint")
    d.add_argument("--data", required=True)
    d.add_argument("--eigen", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--depth", type=int, default=16, help="depth L for energy retention")
    d.add_argument("--max-depth", type=int, default=32, help="contraction curve covers L=1..max")
    d.add_argument("--spectrum-mode", choices=["final", "geomean"], default="final")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    g = sub.add_parser("gen", help="write a synthetic graph container")
    g.add_argument("--kind", choices=["path", "cycle", "complete", "two_cliques", "sbm"])
    g.add_argument("--n", type=int)
    g.add_argument("--blocks", type=_int_list, default=None)
    g.add_argument("--p-in", type=float, default=0.5)
    g.add_argument("--p-out", type=float, default=0.05)
    g.add_argument("--features", default="one_hot_block",
                   choices=["one_hot_block", "random_gaussian", "noisy_one_hot"])
    g.add_argument("--n-features", type=int, default=16)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--name", default=None)
    g.add_argument("--spec", default=None, help="JSON file with SyntheticSpec fields")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("replay", help="rerun a sweep from its manifest.json")
    r.add_argument("manifest")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return a.func(a)
    except UsageError as exc:
        print(f"laplora: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (StaleCacheError, ConvergenceError) as exc:
        print(f"laplora: {exc}", file=sys.stderr)
        return EXIT_STALE
    except (LaplacianLoraError, OSError, ValueError) as exc:
        print(f"laplora: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
