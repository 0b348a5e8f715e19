"""Tiny conditional denoiser trained on synthetic 2-d mixture data.

Architecture: an MLP encoder maps ``(x, t)`` to a short sequence of query
slots, one cross-attention block attends over learned condition-token
embeddings, and a linear decoder reads the attended features back out as a
2-vector (predicted noise, or velocity for the flow parameterization).

The ``t`` passed to :meth:`DenoiserModel.forward` is the signal coordinate:
the schedule's ``abar_t`` for noise prediction, the flow time for velocity
prediction.  Using the signal level rather than a step index keeps the model
reusable across schedules with different step counts.

Gradients are derived by hand in :func:`loss_and_grads`; the test suite
checks every parameter block against central finite differences.  Training
is plain minibatch SGD and is bit-reproducible from its seed (all draws come
from a counter-based Philox generator).

Conditions are token-id tuples.  Class tokens are ``0 .. n_classes-1`` and
the last embedding row is a shared padding token, so the default condition
for class ``c`` is ``(c, pad)`` -- two tokens, which keeps the per-row
normalization in guided attention non-trivial.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionParams,
    GuidanceConfig,
    NagTrace,
    nag_attention,
    nasa_attention,
)
from .errors import ParameterError, TrainingDivergenceError
from .linalg import Tensor, matmul, scale, softmax_rows

PARAMETERIZATIONS = ("epsilon", "velocity")

WEIGHTS_MAGIC = b"GLAB"
WEIGHTS_FORMAT_VERSION = 1
_ARRAY_ORDER = ("embed_table", "w_q", "w_k", "w_v", "mlp_in", "b_in", "mlp_out", "b_out")


@dataclass
class DenoiserModel:
    """Weights of the toy denoiser.  See the module docstring for the layout."""

    embed_table: Tensor  # (n_classes + 1, d_text); last row is the padding token
    attn: AttentionParams
    mlp_in: Tensor  # (3, n_slots * d_query)
    b_in: Tensor  # (n_slots * d_query,)
    mlp_out: Tensor  # (n_slots * d_k, data_dim)
    b_out: Tensor  # (data_dim,)
    n_slots: int
    parameterization: str = "epsilon"
    seed: int = 0
    loss_curve: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.parameterization not in PARAMETERIZATIONS:
            raise ParameterError(
                f"parameterization must be one of {PARAMETERIZATIONS}, got {self.parameterization!r}"
            )
        if self.n_slots < 1:
            raise ParameterError(f"n_slots must be >= 1, got {self.n_slots}")

    @property
    def d_query(self) -> int:
        return self.attn.w_q.shape[0]

    @property
    def d_text(self) -> int:
        return self.embed_table.shape[1]

    @property
    def n_tokens(self) -> int:
        return self.embed_table.shape[0]

    @property
    def pad_token(self) -> int:
        return self.n_tokens - 1

    @property
    def data_dim(self) -> int:
        return self.mlp_out.shape[1]

    def condition(self, class_id: int) -> tuple[int, int]:
        """Default two-token condition for a class: (class token, padding token)."""
        return (int(class_id), self.pad_token)

    def copy(self) -> "DenoiserModel":
        return DenoiserModel(
            embed_table=self.embed_table.copy(),
            attn=AttentionParams(
                w_q=self.attn.w_q.copy(),
                w_k=self.attn.w_k.copy(),
                w_v=self.attn.w_v.copy(),
                d_k=self.attn.d_k,
                n_heads=self.attn.n_heads,
            ),
            mlp_in=self.mlp_in.copy(),
            b_in=self.b_in.copy(),
            mlp_out=self.mlp_out.copy(),
            b_out=self.b_out.copy(),
            n_slots=self.n_slots,
            parameterization=self.parameterization,
            seed=self.seed,
            loss_curve=list(self.loss_curve),
        )

    def _embed(self, condition_tokens) -> Tensor:
        ids = np.asarray(condition_tokens, dtype=np.int64)
        if ids.ndim != 1 or len(ids) < 1:
            raise ParameterError("condition_tokens must be a non-empty 1-d sequence of token ids")
        if np.any(ids < 0) or np.any(ids >= self.n_tokens):
            raise ParameterError(f"invalid condition token id in {condition_tokens!r}")
        return self.embed_table[ids]

    def _encode(self, x: Tensor, t) -> tuple[Tensor, Tensor, Tensor]:
        """(x, t) -> query rows.  Returns (feats, q_flat, q_rows)."""
        t_col = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
        feats = np.concatenate([x, t_col[:, None]], axis=1)
        q_flat = np.tanh(matmul(feats, self.mlp_in) + self.b_in)
        q_rows = q_flat.reshape(x.shape[0] * self.n_slots, self.d_query)
        return feats, q_flat, q_rows

    def _decode(self, z: Tensor, n: int) -> Tensor:
        z_flat = z.reshape(n, self.n_slots * self.attn.d_k)
        return matmul(z_flat, self.mlp_out) + self.b_out

    def forward(self, x_t: Tensor, t, condition_tokens) -> Tensor:
        """Predict noise (or velocity) for a batch of states at signal level ``t``."""
        x = np.asarray(x_t, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        _, _, _, _, _, y = _forward_cache(self, x, t, condition_tokens)
        return y[0] if single else y

    def forward_guided(
        self,
        x_t: Tensor,
        t,
        cond_pos,
        cond_neg,
        cfg: GuidanceConfig,
        collect_trace: bool = False,
    ) -> tuple[Tensor, NagTrace | None]:
        """Forward pass with attention-space guidance applied inside the block.

        With ``collect_trace`` the returned trace covers the first batch
        element only (its ``n_slots`` attention rows).
        """
        if cfg.strategy not in ("nasa", "nag"):
            raise ParameterError(
                f"forward_guided handles attention-space strategies, got {cfg.strategy!r}"
            )
        x = np.asarray(x_t, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        _, _, q_rows = self._encode(x, t)
        emb_pos = self._embed(cond_pos)
        emb_neg = self._embed(cond_neg)
        trace = None
        if cfg.strategy == "nasa":
            z = nasa_attention(q_rows, emb_pos, emb_neg, self.attn, cfg.phi)
        else:
            z, full_trace = nag_attention(q_rows, emb_pos, emb_neg, self.attn, cfg)
            if collect_trace:
                trace = full_trace.rows(0, self.n_slots, cfg.tau)
        y = self._decode(z, x.shape[0])
        return (y[0] if single else y), trace


def init_model(
    n_classes: int = 2,
    d_text: int = 6,
    d_query: int = 8,
    d_k: int = 8,
    n_slots: int = 4,
    parameterization: str = "epsilon",
    data_dim: int = 2,
    seed: int = 0,
) -> DenoiserModel:
    """Random initial weights (Philox-seeded, fan-in scaled projections)."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    embed = rng.standard_normal((n_classes + 1, d_text))
    attn = AttentionParams(
        w_q=rng.standard_normal((d_query, d_k)) / math.sqrt(d_query),
        w_k=rng.standard_normal((d_text, d_k)) / math.sqrt(d_text),
        w_v=rng.standard_normal((d_text, d_k)) / math.sqrt(d_text),
        d_k=d_k,
    )
    return DenoiserModel(
        embed_table=embed,
        attn=attn,
        mlp_in=rng.standard_normal((3, n_slots * d_query)) / math.sqrt(3.0),
        b_in=np.zeros(n_slots * d_query),
        mlp_out=rng.standard_normal((n_slots * d_k, data_dim)) / math.sqrt(n_slots * d_k),
        b_out=np.zeros(data_dim),
        n_slots=n_slots,
        parameterization=parameterization,
        seed=seed,
    )


def _forward_cache(model: DenoiserModel, x: Tensor, t, condition_tokens):
    """Forward pass keeping every intermediate needed by the backward pass."""
    feats, q_flat, q_rows = model._encode(x, t)
    emb = model._embed(condition_tokens)
    # Mirrors cross_attention step for step so the plain and guided paths
    # produce bit-identical positive features.
    q = matmul(q_rows, model.attn.w_q)
    k = matmul(emb, model.attn.w_k)
    v = matmul(emb, model.attn.w_v)
    logits = scale(matmul(q, k.T), 1.0 / math.sqrt(model.attn.d_k))
    attn_w = softmax_rows(logits)
    z = matmul(attn_w, v)
    y = model._decode(z, x.shape[0])
    return feats, q_flat, emb, (q, k, v, attn_w), z, y


def loss_and_grads(
    model: DenoiserModel, x_t: Tensor, t, condition_tokens, target: Tensor
) -> tuple[float, dict[str, Tensor]]:
    """Mean squared error over the batch and its gradient for every block."""
    x = np.asarray(x_t, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n = x.shape[0]
    feats, q_flat, emb, (q, k, v, attn_w), z, y = _forward_cache(model, x, t, condition_tokens)

    resid = y - target
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    dy = 2.0 * resid / n

    z_flat = z.reshape(n, model.n_slots * model.attn.d_k)
    d_mlp_out = z_flat.T @ dy
    d_b_out = dy.sum(axis=0)
    dz = (dy @ model.mlp_out.T).reshape(n * model.n_slots, model.attn.d_k)

    # Attention block backward.
    d_attn = dz @ v.T
    dv = attn_w.T @ dz
    d_logits = attn_w * (d_attn - np.sum(d_attn * attn_w, axis=1, keepdims=True))
    inv_sqrt = 1.0 / math.sqrt(model.attn.d_k)
    dq = d_logits @ k * inv_sqrt
    dk = d_logits.T @ q * inv_sqrt
    q_rows = q_flat.reshape(n * model.n_slots, model.d_query)
    d_w_q = q_rows.T @ dq
    d_q_rows = dq @ model.attn.w_q.T
    d_w_k = emb.T @ dk
    d_w_v = emb.T @ dv
    d_emb = dk @ model.attn.w_k.T + dv @ model.attn.w_v.T
    d_embed = np.zeros_like(model.embed_table)
    ids = np.asarray(condition_tokens, dtype=np.int64)
    np.add.at(d_embed, ids, d_emb)

    # Encoder backward through tanh.
    d_q_flat = d_q_rows.reshape(n, model.n_slots * model.d_query)
    d_pre = d_q_flat * (1.0 - q_flat**2)
    d_mlp_in = feats.T @ d_pre
    d_b_in = d_pre.sum(axis=0)

    grads = {
        "embed_table": d_embed,
        "w_q": d_w_q,
        "w_k": d_w_k,
        "w_v": d_w_v,
        "mlp_in": d_mlp_in,
        "b_in": d_b_in,
        "mlp_out": d_mlp_out,
        "b_out": d_b_out,
    }
    return loss, grads


@dataclass(frozen=True)
class SyntheticDataset:
    """Isotropic Gaussian blobs, one per class, truncated at radius 4 sigma."""

    x0: Tensor  # (N, 2)
    labels: np.ndarray  # (N,) int class ids
    centers: Tensor  # (C, 2)
    sigma: float
    seed: int

    @property
    def modes(self) -> list[tuple[Tensor, int]]:
        return [(self.centers[c], c) for c in range(len(self.centers))]

    @property
    def samples(self) -> list[tuple[Tensor, int]]:
        return [(self.x0[i], int(self.labels[i])) for i in range(len(self.labels))]

    @property
    def n_classes(self) -> int:
        return len(self.centers)


def make_dataset(
    n_per_class: int,
    centers=((-2.0, 0.0), (2.0, 0.0)),
    sigma: float = 0.15,
    seed: int = 0,
) -> SyntheticDataset:
    """Draw ``n_per_class`` points per mode; draws beyond 4 sigma are rejected."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[0] < 2 or centers.shape[1] != 2:
        raise ParameterError("centers must be at least two 2-d points")
    if n_per_class < 0:
        raise ParameterError(f"n_per_class must be >= 0, got {n_per_class}")
    if sigma < 0.0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    xs = []
    labels = []
    for c, center in enumerate(centers):
        z = rng.standard_normal((n_per_class, 2))
        bad = np.linalg.norm(z, axis=1) > 4.0
        while np.any(bad):
            z[bad] = rng.standard_normal((int(bad.sum()), 2))
            bad = np.linalg.norm(z, axis=1) > 4.0
        xs.append(center + sigma * z)
        labels.append(np.full(n_per_class, c, dtype=np.int64))
    return SyntheticDataset(
        x0=np.concatenate(xs) if xs else np.zeros((0, 2)),
        labels=np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64),
        centers=centers,
        sigma=float(sigma),
        seed=int(seed),
    )


def train(
    model: DenoiserModel,
    dataset: SyntheticDataset,
    schedule,
    epochs: int,
    lr: float,
    seed: int,
    batch_size: int = 32,
) -> DenoiserModel:
    """Minibatch SGD on the denoising objective; returns a trained copy.

    Each update draws a fresh (signal level, noise) pair per sample.  For
    the diffusion schedule the target is the injected noise; for the flow
    schedule it is the data-minus-base velocity of the linear path.

    ``model.loss_curve`` holds one entry per epoch: the objective evaluated
    on a fixed draw built once at the start, so consecutive entries compare
    the same quantity and trace learning progress without draw noise.
    """
    if len(dataset.labels) == 0:
        raise ParameterError("dataset must contain at least one sample")
    if epochs < 0:
        raise ParameterError(f"epochs must be >= 0, got {epochs}")
    if schedule.kind == "ddpm" and model.parameterization != "epsilon":
        raise ParameterError("ddpm schedules train noise-predicting models")
    if schedule.kind == "flow" and model.parameterization != "velocity":
        raise ParameterError("flow schedules train velocity-predicting models")

    work = model.copy()
    work.loss_curve = []
    train_key, eval_key = (
        int(v) for v in np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)
    )
    rng = np.random.Generator(np.random.Philox(key=np.uint64(train_key)))
    n = len(dataset.labels)
    pad = work.pad_token

    def _draw(gen, x0):
        b = len(x0)
        eps = gen.standard_normal((b, work.data_dim))
        if schedule.kind == "ddpm":
            abar = schedule.alphas_bar[gen.integers(0, schedule.total_steps, size=b)]
            x_in = np.sqrt(abar)[:, None] * x0 + np.sqrt(1.0 - abar)[:, None] * eps
            return x_in, abar, eps
        t = gen.random(b)
        x_in = (1.0 - t)[:, None] * eps + t[:, None] * x0
        return x_in, t, x0 - eps

    # Fixed evaluation draw: small datasets are replicated so the estimate
    # averages enough (t, eps) pairs to be stable.
    eval_rng = np.random.Generator(np.random.Philox(key=np.uint64(eval_key)))
    reps = max(1, -(-256 // n))
    eval_idx = np.tile(np.arange(n), reps)[:2048]
    eval_x, eval_t, eval_target = _draw(eval_rng, dataset.x0[eval_idx])
    eval_labels = dataset.labels[eval_idx]

    def _eval_loss() -> float:
        total = 0.0
        for cls in np.unique(eval_labels):
            m = eval_labels == cls
            pred = work.forward(eval_x[m], eval_t[m], (int(cls), pad))
            total += float(np.sum((pred - eval_target[m]) ** 2))
        return total / len(eval_idx)

    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            b = len(idx)
            x_in, t_feat, target = _draw(rng, dataset.x0[idx])

            # The attention block shares K/V across the batch, so each call
            # carries one condition; batches are split by class.
            for cls in np.unique(dataset.labels[idx]):
                m = dataset.labels[idx] == cls
                tokens = (int(cls), pad)
                loss, grads = loss_and_grads(work, x_in[m], t_feat[m], tokens, target[m])
                if not math.isfinite(loss):
                    raise TrainingDivergenceError(
                        f"non-finite loss {loss} at epoch {epoch}, batch start {start}, "
                        f"class {cls}, lr={lr}"
                    )
                _apply_sgd(work, grads, lr * int(m.sum()) / b)
        work.loss_curve.append(_eval_loss())
    return work


def _apply_sgd(model: DenoiserModel, grads: dict[str, Tensor], lr: float) -> None:
    for name, arr in _model_arrays(model).items():
        arr -= lr * grads[name]  # in-place update of the model's storage


def _model_arrays(model: DenoiserModel) -> dict[str, Tensor]:
    return {
        "embed_table": model.embed_table,
        "w_q": model.attn.w_q,
        "w_k": model.attn.w_k,
        "w_v": model.attn.w_v,
        "mlp_in": model.mlp_in,
        "b_in": model.b_in,
        "mlp_out": model.mlp_out,
        "b_out": model.b_out,
    }


def save_model(model: DenoiserModel, path) -> None:
    """Write weights to the flat binary container (see README for the layout)."""
    arrays = _model_arrays(model)
    header = {
        "format_version": WEIGHTS_FORMAT_VERSION,
        "parameterization": model.parameterization,
        "seed": model.seed,
        "n_slots": model.n_slots,
        "d_k": model.attn.d_k,
        "n_heads": model.attn.n_heads,
        "arrays": [{"name": name, "shape": list(arrays[name].shape)} for name in _ARRAY_ORDER],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in _ARRAY_ORDER:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_model(path) -> DenoiserModel:
    """Read weights written by :func:`save_model`."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != WEIGHTS_MAGIC:
            raise ValueError(f"not a weights container (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header["format_version"] != WEIGHTS_FORMAT_VERSION:
            raise ValueError(f"unsupported format version {header['format_version']}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    attn = AttentionParams(
        w_q=arrays["w_q"],
        w_k=arrays["w_k"],
        w_v=arrays["w_v"],
        d_k=int(header["d_k"]),
        n_heads=int(header["n_heads"]),
    )
    return DenoiserModel(
        embed_table=arrays["embed_table"],
        attn=attn,
        mlp_in=arrays["mlp_in"],
        b_in=arrays["b_in"],
        mlp_out=arrays["mlp_out"],
        b_out=arrays["b_out"],
        n_slots=int(header["n_slots"]),
        parameterization=header["parameterization"],
        seed=int(header["seed"]),
    )
