"""GCN backbone with an optional Laplacian-LoRA residual branch.

Each layer propagates with ``S = I - L`` and, when the branch is enabled,
adds a correction living in the span of the cached low-frequency
eigenvectors ``U_k``::

    P = S H + U_k diag((1 - lam)(1 - alpha_l theta(lam))) U_k^T H
    H' = relu(P W_l)          (no relu on the last layer)

``theta`` is one small MLP shared by every layer, and
``alpha_l = alpha * l / depth`` grows with depth.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .diagnostics import embedding_variance
from .eigen import EigenBasis
from .errors import DataError, FormatError, ParameterError, ShapeError
from .filters import COMBINE_MODES, FilterParams, ThetaNet, alpha_at_layer, lora_filter
from .graph import (
    GraphDataset,
    SparseMatrix,
    normalized_laplacian,
    propagation_operator,
)

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "GcnModel",
    "TrainResult",
    "RunRecord",
    "ProtocolResult",
    "lora_correction",
    "train",
    "run_protocol",
    "derive_seed",
    "save_checkpoint",
    "load_checkpoint",
]

VARIANTS = ("gcn", "lora")
_MASK64 = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed, one splitmix64 round per part."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & _MASK64))
    return h


@dataclass
class ModelConfig:
    depth: int = 2
    hidden_dim: int = 64
    dropout: float = 0.5
    alpha: float = 0.5
    use_lora: bool = False
    combine: str = "sum"
    k: int = 64
    seed: int = 0
    theta_hidden: int = 32
    lora_on_output: bool = True
    self_loops: bool = False

    def __post_init__(self):
        if self.depth < 2:
            raise ParameterError("depth must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must lie in [0, 1)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError("alpha must lie in [0, 1]")
        if self.combine not in COMBINE_MODES:
            raise ParameterError(f"combine must be one of {COMBINE_MODES}")

    @property
    def variant(self) -> str:
        return "lora" if self.use_lora else "gcn"

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainConfig:
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 200
    patience: int = 50
    n_seeds: int = 5

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0 or self.max_epochs < 1 or self.patience < 0 or self.n_seeds < 1:
            raise ParameterError("invalid training configuration")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def lora_correction(h, basis: EigenBasis, params: FilterParams, net: ThetaNet | None = None) -> np.ndarray:
    """``U_k diag(g_lora(lam)) U_k^T H`` as three skinny products."""
    h = np.asarray(h, dtype=np.float64)
    u = basis.eigenvectors
    if h.shape[0] != u.shape[0]:
        raise ShapeError(f"H has {h.shape[0]} rows, basis has {u.shape[0]}")
    if net is not None:
        params = FilterParams(params.alpha, params.layer_index, params.depth, net)
    g = lora_filter(basis.eigenvalues, params)
    coeff = u.T @ h
    coeff = g[:, None] * coeff if coeff.ndim == 2 else g * coeff
    return u @ coeff


class GcnModel:
    """``depth`` propagation layers ``F -> hidden -> ... -> C``, no biases."""

    def __init__(
        self,
        config: ModelConfig,
        n_features: int,
        n_classes: int,
        prop: SparseMatrix,
        basis: EigenBasis | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.config = config
        self.prop = prop
        if config.use_lora and basis is None:
            raise ParameterError("the LoRA variant needs an eigenbasis")
        if basis is not None and basis.n != prop.n_rows:
            raise ShapeError("eigenbasis and propagation operator sizes differ")
        self.basis = basis if config.use_lora else None
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        dims = [n_features] + [config.hidden_dim] * (config.depth - 1) + [n_classes]
        self.weights = [
            ad.Tensor(_glorot(rng, dims[i], dims[i + 1]), requires_grad=True, name=f"W{i + 1}")
            for i in range(config.depth)
        ]
        self.theta_params: list[ad.Tensor] = []
        if config.use_lora:
            net = ThetaNet.init(rng, config.theta_hidden)
            self.theta_params = [
                ad.Tensor(net.w1, requires_grad=True, name="theta.w1"),
                ad.Tensor(net.b1.reshape(1, -1), requires_grad=True, name="theta.b1"),
                ad.Tensor(net.w2, requires_grad=True, name="theta.w2"),
                ad.Tensor(np.array([[net.b2]]), requires_grad=True, name="theta.b2"),
            ]
            lam = self.basis.eigenvalues
            self._lam = ad.Tensor(lam.reshape(-1, 1))
            self._one_minus_lam = ad.Tensor((1.0 - lam).reshape(-1, 1))
            self._u = ad.Tensor(self.basis.eigenvectors)
            self._ut = ad.Tensor(self.basis.eigenvectors.T)

    def parameters(self) -> list[ad.Tensor]:
        return self.weights + self.theta_params

    def named_parameters(self) -> dict[str, ad.Tensor]:
        return {p.name: p for p in self.parameters()}

    def theta_net(self) -> ThetaNet | None:
        if not self.theta_params:
            return None
        w1, b1, w2, b2 = (p.data for p in self.theta_params)
        return ThetaNet(w1, b1, w2, b2.item())

    def filter_params(self, layer: int) -> FilterParams:
        alpha = self.config.alpha if self.config.use_lora else 0.0
        return FilterParams(alpha, layer, self.config.depth, self.theta_net())

    def lora_active(self, layer: int) -> bool:
        return self.config.use_lora and (self.config.lora_on_output or layer < self.config.depth)

    def _theta(self) -> ad.Tensor:
        w1, b1, w2, b2 = self.theta_params
        hidden = ad.relu(ad.add(ad.matmul(self._lam, w1), b1))
        return ad.sigmoid(ad.add(ad.matmul(hidden, w2), b2))

    def _propagate(self, h: ad.Tensor, layer: int, theta: ad.Tensor | None) -> ad.Tensor:
        p = ad.sparse_matmul(self.prop, h)
        if theta is None or not self.lora_active(layer):
            return p
        a = alpha_at_layer(FilterParams(self.config.alpha, layer, self.config.depth))
        # g = (1 - lam)(1 - a theta), shape k x 1
        g = ad.mul(self._one_minus_lam, ad.add(1.0, ad.mul(-a, theta)))
        corr = ad.matmul(self._u, ad.mul(g, ad.matmul(self._ut, h)))
        out = ad.add(p, corr)
        return ad.mul(0.5, out) if self.config.combine == "mean" else out

    def layer_forward(self, h, layer: int, training: bool = False, rng=None, theta=None) -> ad.Tensor:
        """Dropout, propagation, weight, and relu (except the last layer) for ``layer`` in 1..depth."""
        if not 1 <= layer <= self.config.depth:
            raise ParameterError(f"layer must lie in [1, {self.config.depth}]")
        h = ad._as_tensor(h)
        if training and self.config.dropout > 0:
            h = ad.dropout(h, self.config.dropout, rng, training=True)
        w = self.weights[layer - 1]
        if theta is None and self.lora_active(layer):
            theta = self._theta()
        # propagation and the weight commute; apply whichever narrows first
        if w.shape[1] < w.shape[0]:
            z = self._propagate(ad.matmul(h, w), layer, theta)
        else:
            z = ad.matmul(self._propagate(h, layer, theta), w)
        return z if layer == self.config.depth else ad.relu(z)

    def forward(self, x, training: bool = False, rng=None):
        """Return ``(logits, embeddings)``; embeddings are the input to the last layer."""
        h = ad._as_tensor(x)
        theta = self._theta() if self.config.use_lora else None
        emb = None
        for layer in range(1, self.config.depth + 1):
            if layer == self.config.depth:
                emb = h
            h = self.layer_forward(h, layer, training, rng, theta)
        return h, emb

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in state or state[p.name].shape != p.shape:
                raise FormatError(f"state is missing or misshapes {p.name}")
            p.data[...] = state[p.name]


@dataclass
class TrainResult:
    test_acc: float
    best_val_acc: float
    best_epoch: int
    epochs_run: int
    final_embeddings: np.ndarray = field(repr=False)
    val_history: list[float] = field(default_factory=list, repr=False)


def _accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return float("nan")
    return float(np.mean(np.argmax(logits[mask], axis=1) == labels[mask]))


def train(model: GcnModel, data: GraphDataset, tc: TrainConfig, seed: int = 0, rng=None) -> TrainResult:
    """Full-batch Adam with early stopping on validation accuracy.

    The parameters of the best validation epoch (earliest on ties) are
    restored before test accuracy and embeddings are computed.
    """
    if not data.train_mask.any():
        raise DataError("training mask is empty")
    rng = rng if rng is not None else np.random.default_rng(seed)
    opt = ad.Adam(model.parameters(), lr=tc.lr, weight_decay=tc.weight_decay)
    x = ad.Tensor(data.features)
    best_val = -np.inf
    best_epoch = 0
    best_state = model.state()
    stale = 0
    history = []
    epoch = 0
    for epoch in range(1, tc.max_epochs + 1):
        opt.zero_grad()
        with ad.Tape() as tape:
            logits, _ = model.forward(x, training=True, rng=rng)
            loss = ad.log_softmax_cross_entropy(logits, data.labels, data.train_mask)
        tape.backward(loss)
        opt.step()
        logits, _ = model.forward(x, training=False)
        val = _accuracy(logits.data, data.labels, data.val_mask)
        history.append(val)
        if val > best_val:
            best_val, best_epoch, best_state, stale = val, epoch, model.state(), 0
        else:
            stale += 1
            if stale >= tc.patience:
                break
    model.load_state(best_state)
    logits, emb = model.forward(x, training=False)
    return TrainResult(
        test_acc=_accuracy(logits.data, data.labels, data.test_mask),
        best_val_acc=float(best_val),
        best_epoch=best_epoch,
        epochs_run=epoch,
        final_embeddings=emb.data.copy(),
        val_history=history,
    )


@dataclass
class RunRecord:
    variant: str
    depth: int
    seed: int
    test_acc: float
    val_acc: float
    best_epoch: int
    embed_variance: float
    embeddings: np.ndarray | None = field(default=None, repr=False)


@dataclass
class ProtocolResult:
    runs: list[RunRecord]

    def summary(self) -> list[dict]:
        """Mean and population std of test accuracy and variance per (variant, depth)."""
        rows = []
        keys = sorted({(r.variant, r.depth) for r in self.runs}, key=lambda t: (VARIANTS.index(t[0]) if t[0] in VARIANTS else 9, t[1]))
        for variant, depth in keys:
            sel = [r for r in self.runs if r.variant == variant and r.depth == depth]
            acc = np.array([r.test_acc for r in sel])
            var = np.array([r.embed_variance for r in sel])
            rows.append({
                "variant": variant,
                "depth": depth,
                "n_seeds": len(sel),
                "test_acc_mean": float(acc.mean()),
                "test_acc_std": float(acc.std()),
                "embed_variance_mean": float(var.mean()),
                "embed_variance_std": float(var.std()),
            })
        return rows

    def mean_acc(self, variant: str, depth: int) -> float:
        return float(np.mean([r.test_acc for r in self.runs if r.variant == variant and r.depth == depth]))

    def mean_variance(self, variant: str, depth: int) -> float:
        return float(np.mean([r.embed_variance for r in self.runs if r.variant == variant and r.depth == depth]))


def build_model(data: GraphDataset, mc: ModelConfig, basis: EigenBasis | None, seed: int,
                prop: SparseMatrix | None = None) -> tuple[GcnModel, np.random.Generator]:
    """Model plus its private dropout stream, both derived from ``(seed, depth, variant)``."""
    if prop is None:
        prop = propagation_operator(normalized_laplacian(data, self_loops=mc.self_loops))
    variant = VARIANTS.index(mc.variant)
    if basis is not None and mc.use_lora:
        basis = basis.truncate(min(mc.k, basis.k))
    init_rng = np.random.default_rng(derive_seed(seed, mc.depth, variant, 0))
    drop_rng = np.random.default_rng(derive_seed(seed, mc.depth, variant, 1))
    model = GcnModel(mc, data.n_features, data.n_classes, prop, basis, init_rng)
    return model, drop_rng


def _run_one(args):
    data, mc, tc, basis, seed, keep_embeddings, prop = args
    model, drop_rng = build_model(data, mc, basis, seed, prop)
    res = train(model, data, tc, seed, rng=drop_rng)
    return RunRecord(
        variant=mc.variant,
        depth=mc.depth,
        seed=seed,
        test_acc=res.test_acc,
        val_acc=res.best_val_acc,
        best_epoch=res.best_epoch,
        embed_variance=embedding_variance(res.final_embeddings),
        embeddings=res.final_embeddings if keep_embeddings else None,
    ), model


def run_protocol(
    data: GraphDataset,
    depths,
    tc: TrainConfig,
    mc_base: ModelConfig,
    basis: EigenBasis | None = None,
    variants=VARIANTS,
    jobs: int = 1,
    keep_embeddings: bool = True,
    on_model=None,
) -> ProtocolResult:
    """Train every (variant, depth, seed) with seeds ``0..n_seeds-1``.

    ``on_model(record, model)`` is called for each finished run in the
    deterministic (variant, depth, seed) order, e.g. to write checkpoints.
    """
    for v in variants:
        if v not in VARIANTS:
            raise ParameterError(f"unknown variant {v!r}")
    if "lora" in variants and basis is None:
        raise ParameterError("the lora variant needs an eigenbasis")
    prop = propagation_operator(normalized_laplacian(data, self_loops=mc_base.self_loops))
    tasks = []
    for v in sorted(variants, key=VARIANTS.index):
        for depth in depths:
            base = asdict(mc_base)
            base.update(depth=int(depth), use_lora=(v == "lora"))
            mc = ModelConfig(**base)
            for seed in range(tc.n_seeds):
                tasks.append((data, mc, tc, basis if v == "lora" else None, seed, keep_embeddings, prop))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    runs = []
    for rec, model in results:
        if on_model is not None:
            on_model(rec, model)
        runs.append(rec)
    return ProtocolResult(runs)


# -- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"LLCK"
CKPT_VERSION = 1


def save_checkpoint(model: GcnModel, path, meta: dict | None = None) -> None:
    """Binary envelope: magic, version, JSON header, then named float64 blocks."""
    header = {"config": asdict(model.config), **(meta or {})}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    state = model.state()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(state)))
        for name, arr in state.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"{path}: truncated checkpoint")
        out = raw[pos : pos + n]
        pos += n
        return out

    magic, version, hlen = struct.unpack("<4sII", take(12))
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise FormatError(f"{path}: not a version-{CKPT_VERSION} checkpoint")
    try:
        header = json.loads(take(hlen).decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"{path}: bad header: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(raw):
        raise FormatError(f"{path}: trailing bytes")
    return header, state
