"""Cross-attention and the attention-space guidance processors.

Guided attention runs the positive and negative prompts through the same
scaled dot-product block and steers the positive features away from the
negative ones.  Two processors are provided:

* ``nasa_attention`` -- the unconstrained baseline ``Z+ - phi * Z-``, whose
  output norm grows without bound in ``phi``.
* ``nag_attention`` -- extrapolation ``Z+ + phi * (Z+ - Z-)`` followed by a
  per-row L1-ratio clip at ``tau`` and a blend back toward the positive
  features with weight ``alpha``.  Every intermediate (both attention maps,
  the raw extrapolation, the clipped features, the ratios and the final
  output) is returned in a :class:`NagTrace` so experiments can audit each
  stage.

Rows are independent everywhere, so a stack of ``batch * seq`` rows can be
pushed through these functions in one call; the toy model relies on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .linalg import Tensor, l1_norm_lastdim, matmul, scale, softmax_rows

STRATEGIES = ("none", "cfg", "nasa", "nag")

# L1 mass assigned to a clipped row whose positive counterpart has zero norm.
# The ratio is infinite there; scaling to tau * ZERO_NORM_FLOOR is the
# continuous limit of the clip and keeps every output finite.
ZERO_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class AttentionParams:
    """Projection weights for one single-head cross-attention block.

    ``w_q`` maps query features to the head dimension; ``w_k`` and ``w_v``
    map text embeddings to the same head dimension.  ``n_heads`` exists for
    forward compatibility but only 1 is supported.
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    d_k: int
    n_heads: int = 1

    def __post_init__(self):
        if self.d_k < 1:
            raise ParameterError(f"d_k must be a positive integer, got {self.d_k}")
        if self.n_heads != 1:
            raise ParameterError("only single-head attention is supported (n_heads must be 1)")
        for name in ("w_q", "w_k", "w_v"):
            w = getattr(self, name)
            if w.ndim != 2:
                raise DimensionError(f"{name} must be 2-d, got shape {w.shape}")
            if w.shape[1] != self.d_k:
                raise DimensionError(f"{name} must have {self.d_k} columns, got shape {w.shape}")
        if self.w_k.shape[0] != self.w_v.shape[0]:
            raise DimensionError(
                f"w_k and w_v must share the text dimension, got {self.w_k.shape} and {self.w_v.shape}"
            )


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance strategy plus its scalar knobs.

    phi    -- extrapolation scale (>= 0)
    tau    -- L1 ratio threshold for the clip (> 0; >= 1 is the sane range)
    alpha  -- refinement blend weight in [0, 1]
    theta  -- fraction of initial sampler steps during which guidance runs

    The two ``disable_*`` flags switch off individual pipeline stages for
    component-removal experiments and are only meaningful with the ``nag``
    strategy.
    """

    strategy: str
    phi: float = 4.0
    tau: float = 2.5
    alpha: float = 0.25
    theta: float = 1.0
    disable_normalization: bool = False
    disable_refinement: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ParameterError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not (self.phi >= 0.0):
            raise ParameterError(f"phi must be >= 0, got {self.phi}")
        if not (self.tau > 0.0):
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (0.0 <= self.theta <= 1.0):
            raise ParameterError(f"theta must lie in [0, 1], got {self.theta}")
        if (self.disable_normalization or self.disable_refinement) and self.strategy != "nag":
            raise ParameterError("ablation flags are only valid with strategy 'nag'")


@dataclass
class NagTrace:
    """Per-call record of every intermediate of the guided-attention pipeline."""

    z_pos: Tensor
    z_neg: Tensor
    z_tilde: Tensor
    z_hat: Tensor
    z_nag: Tensor
    ratio: Tensor
    clipped_count: int

    def to_dict(self) -> dict:
        return {
            "z_pos": self.z_pos.tolist(),
            "z_neg": self.z_neg.tolist(),
            "z_tilde": self.z_tilde.tolist(),
            "z_hat": self.z_hat.tolist(),
            "z_nag": self.z_nag.tolist(),
            "ratio": self.ratio.tolist(),
            "clipped_count": int(self.clipped_count),
        }

    def rows(self, start: int, stop: int, tau: float) -> "NagTrace":
        """Slice of the trace covering rows ``start:stop`` only."""
        ratio = self.ratio[start:stop]
        return NagTrace(
            z_pos=self.z_pos[start:stop],
            z_neg=self.z_neg[start:stop],
            z_tilde=self.z_tilde[start:stop],
            z_hat=self.z_hat[start:stop],
            z_nag=self.z_nag[start:stop],
            ratio=ratio,
            clipped_count=int(np.count_nonzero(ratio > tau)),
        )


def cross_attention(q_in: Tensor, text: Tensor, params: AttentionParams) -> Tensor:
    """Scaled dot-product attention of query rows over text-token rows."""
    if q_in.ndim != 2 or text.ndim != 2:
        raise DimensionError("cross_attention expects 2-d query and text tensors")
    if q_in.shape[1] != params.w_q.shape[0]:
        raise DimensionError(
            f"query feature dim {q_in.shape[1]} does not match w_q rows {params.w_q.shape[0]}"
        )
    if text.shape[1] != params.w_k.shape[0]:
        raise DimensionError(
            f"text embedding dim {text.shape[1]} does not match w_k rows {params.w_k.shape[0]}"
        )
    q = matmul(q_in, params.w_q)
    k = matmul(text, params.w_k)
    v = matmul(text, params.w_v)
    logits = scale(matmul(q, k.T), 1.0 / math.sqrt(params.d_k))
    return matmul(softmax_rows(logits), v)


def nag_extrapolate(z_pos: Tensor, z_neg: Tensor, phi: float) -> Tensor:
    """Push positive features away from negative ones: z_pos + phi * (z_pos - z_neg)."""
    if z_pos.shape != z_neg.shape:
        raise DimensionError(f"feature shapes differ: {z_pos.shape} vs {z_neg.shape}")
    phi = float(phi)
    if phi == 0.0:
        return z_pos.copy()
    return z_pos + phi * (z_pos - z_neg)


def l1_ratio(z_tilde: Tensor, z_pos: Tensor) -> Tensor:
    """Per-row ratio of L1 norms, ``|z_tilde[i]|_1 / |z_pos[i]|_1``.

    Rows where the positive norm is zero report 0 when the numerator is also
    zero and +inf otherwise; +inf can also arise when the scales differ by
    more than the float range, which callers treat the same way.
    """
    if z_tilde.shape != z_pos.shape:
        raise DimensionError(f"feature shapes differ: {z_tilde.shape} vs {z_pos.shape}")
    n_til = l1_norm_lastdim(z_tilde)
    n_pos = l1_norm_lastdim(z_pos)
    ratio = np.zeros_like(n_pos)
    ok = n_pos > 0.0
    with np.errstate(over="ignore"):
        ratio[ok] = n_til[ok] / n_pos[ok]
    ratio[~ok & (n_til > 0.0)] = np.inf
    return ratio


def nag_normalize(z_tilde: Tensor, z_pos: Tensor, tau: float) -> tuple[Tensor, Tensor]:
    """Clip each row's L1 growth over the positive baseline at ``tau``.

    Rows with ratio <= tau are copied through untouched (bit-for-bit); rows
    above the threshold are rescaled so their L1 norm becomes exactly tau
    times the positive row's.  Returns ``(z_hat, ratio)``.
    """
    tau = float(tau)
    if not (tau > 0.0):
        raise ParameterError(f"tau must be > 0, got {tau}")
    ratio = l1_ratio(z_tilde, z_pos)
    z_hat = z_tilde.copy()
    clipped = ratio > tau  # implies |z_tilde[i]|_1 > 0
    n_pos = l1_norm_lastdim(z_pos)
    n_til = l1_norm_lastdim(z_tilde)
    rescale = clipped & (n_pos > 0.0)
    if np.any(rescale):
        # tau * n_pos / n_til, not tau / ratio: stays finite when the ratio
        # overflowed, and puts the row exactly on the tau * n_pos shell.
        z_hat[rescale] *= (tau * n_pos[rescale] / n_til[rescale])[:, None]
    degenerate = clipped & (n_pos == 0.0)
    if np.any(degenerate):
        # Zero positive norm with non-zero extrapolation: shrink onto a tiny
        # L1 shell instead of dividing by zero.
        z_hat[degenerate] *= (tau * ZERO_NORM_FLOOR / n_til[degenerate])[:, None]
    return z_hat, ratio


def nag_refine(z_hat: Tensor, z_pos: Tensor, alpha: float) -> Tensor:
    """Blend clipped features back toward the positive baseline.

    alpha = 0 returns the baseline unchanged, alpha = 1 the clipped features;
    both endpoints are exact no-op branches.
    """
    if z_hat.shape != z_pos.shape:
        raise DimensionError(f"feature shapes differ: {z_hat.shape} vs {z_pos.shape}")
    alpha = float(alpha)
    if not (0.0 <= alpha <= 1.0):
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return z_pos.copy()
    if alpha == 1.0:
        return z_hat.copy()
    return alpha * z_hat + (1.0 - alpha) * z_pos


def nasa_attention(
    q_in: Tensor, text_pos: Tensor, text_neg: Tensor, params: AttentionParams, phi: float
) -> Tensor:
    """Subtract-scaled-negative attention baseline: Z+ - phi * Z-."""
    phi = float(phi)
    if not (phi >= 0.0):
        raise ParameterError(f"phi must be >= 0, got {phi}")
    z_pos = cross_attention(q_in, text_pos, params)
    z_neg = cross_attention(q_in, text_neg, params)
    return z_pos - phi * z_neg


def nag_attention(
    q_in: Tensor,
    text_pos: Tensor,
    text_neg: Tensor,
    params: AttentionParams,
    cfg: GuidanceConfig,
) -> tuple[Tensor, NagTrace]:
    """Full guided-attention pipeline: extrapolate, clip, refine.

    When the guidance is degenerate (phi = 0, or the two prompts produce
    identical features) the pipeline reduces to the identity; that branch is
    taken explicitly so the output is bit-identical to plain positive
    attention.
    """
    if cfg.strategy != "nag":
        raise ParameterError(f"nag_attention requires strategy 'nag', got {cfg.strategy!r}")
    z_pos = cross_attention(q_in, text_pos, params)
    z_neg = cross_attention(q_in, text_neg, params)

    if cfg.phi == 0.0 or np.array_equal(z_pos, z_neg):
        ratio = np.where(l1_norm_lastdim(z_pos) > 0.0, 1.0, 0.0)
        trace = NagTrace(
            z_pos=z_pos,
            z_neg=z_neg,
            z_tilde=z_pos,
            z_hat=z_pos,
            z_nag=z_pos,
            ratio=ratio,
            clipped_count=0,
        )
        return z_pos, trace

    z_tilde = nag_extrapolate(z_pos, z_neg, cfg.phi)
    if cfg.disable_normalization:
        ratio = l1_ratio(z_tilde, z_pos)
        z_hat = z_tilde
    else:
        z_hat, ratio = nag_normalize(z_tilde, z_pos, cfg.tau)
    z_nag = z_hat if cfg.disable_refinement else nag_refine(z_hat, z_pos, cfg.alpha)
    trace = NagTrace(
        z_pos=z_pos,
        z_neg=z_neg,
        z_tilde=z_tilde,
        z_hat=z_hat,
        z_nag=z_nag,
        ratio=ratio,
        clipped_count=int(np.count_nonzero(ratio > cfg.tau)),
    )
    return z_nag, trace
