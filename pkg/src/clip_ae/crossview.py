"""Cross-view collaboration between the cbp and vlp feature views.

Both views are concatenated along the feature axis into a (T, 2d) matrix M;
queries and keys are projections of M (so each time step sees both views),
values are per-view projections, and a single row-softmax scaled dot-product
attention produces the collaborative features:

    Z_view = rowsoftmax(M Wq (M Wk)^T / sqrt(d_k)) @ (X_view Wv_view)

Segment-major layout throughout (rows = time steps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch


@dataclass
class CcpParams:
    """Projections of the collaborative attention.

    Queries and keys are shared between the two views (both drawn from the
    concatenated matrix); only the value projection is per-view.
    """

    w_query: np.ndarray      # (2d, d_k)
    w_key: np.ndarray        # (2d, d_k)
    w_value_cbp: np.ndarray  # (d, d_v)
    w_value_vlp: np.ndarray  # (d, d_v)

    @property
    def d_k(self) -> int:
        return self.w_query.shape[1]

    @property
    def d_v(self) -> int:
        return self.w_value_cbp.shape[1]

    def copy(self) -> "CcpParams":
        return CcpParams(self.w_query.copy(), self.w_key.copy(),
                         self.w_value_cbp.copy(), self.w_value_vlp.copy())


def init_ccp_params(rng: np.random.Generator, dim: int, d_k: int | None = None,
                    d_v: int | None = None) -> CcpParams:
    """Fan-in scaled uniform init; d_k and d_v default to the view dimension."""
    d_k = dim if d_k is None else d_k
    d_v = dim if d_v is None else d_v
    qk_bound = 1.0 / np.sqrt(2 * dim)
    v_bound = 1.0 / np.sqrt(dim)
    return CcpParams(
        w_query=rng.uniform(-qk_bound, qk_bound, size=(2 * dim, d_k)),
        w_key=rng.uniform(-qk_bound, qk_bound, size=(2 * dim, d_k)),
        w_value_cbp=rng.uniform(-v_bound, v_bound, size=(dim, d_v)),
        w_value_vlp=rng.uniform(-v_bound, v_bound, size=(dim, d_v)),
    )


def concat_views(x_cbp: np.ndarray, x_vlp: np.ndarray) -> np.ndarray:
    """Concatenate (T, d) views along the feature axis: columns 0..d-1 are cbp."""
    if x_cbp.shape != x_vlp.shape:
        raise DimensionMismatch(f"views differ in shape: {x_cbp.shape} vs {x_vlp.shape}")
    return np.concatenate([x_cbp, x_vlp], axis=1)


def _rowsoftmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


@dataclass
class CcpState:
    """Intermediates of one collaborative attention pass, kept for backward."""

    concat: np.ndarray       # (T, 2d)
    queries: np.ndarray      # (T, d_k)
    keys: np.ndarray         # (T, d_k)
    values_cbp: np.ndarray   # (T, d_v)
    values_vlp: np.ndarray
    attn: np.ndarray         # (T, T), row-stochastic


def collaborative_attention(x_cbp: np.ndarray, x_vlp: np.ndarray,
                            params: CcpParams) -> tuple[np.ndarray, np.ndarray, CcpState]:
    """Collaborative features for both views from one shared attention map.

    Returns (z_cbp, z_vlp, state); each row of the attention map sums to 1.
    """
    concat = concat_views(x_cbp, x_vlp)
    if concat.shape[1] != params.w_query.shape[0]:
        raise DimensionMismatch(
            f"query projection expects {params.w_query.shape[0]} features, "
            f"got {concat.shape[1]}"
        )
    if x_cbp.shape[1] != params.w_value_cbp.shape[0]:
        raise DimensionMismatch(
            f"value projection expects {params.w_value_cbp.shape[0]} features, "
            f"got {x_cbp.shape[1]}"
        )
    queries = concat @ params.w_query
    keys = concat @ params.w_key
    values_cbp = x_cbp @ params.w_value_cbp
    values_vlp = x_vlp @ params.w_value_vlp
    attn = _rowsoftmax(queries @ keys.T / np.sqrt(params.d_k))
    z_cbp = attn @ values_cbp
    z_vlp = attn @ values_vlp
    state = CcpState(concat, queries, keys, values_cbp, values_vlp, attn)
    return z_cbp, z_vlp, state


@dataclass
class CcpGrads:
    d_w_query: np.ndarray
    d_w_key: np.ndarray
    d_w_value_cbp: np.ndarray
    d_w_value_vlp: np.ndarray


def _rowsoftmax_backward(attn: np.ndarray, d_attn: np.ndarray) -> np.ndarray:
    return attn * (d_attn - (attn * d_attn).sum(axis=1, keepdims=True))


def ccp_backward(x_cbp: np.ndarray, x_vlp: np.ndarray, params: CcpParams,
                 state: CcpState, d_z_cbp: np.ndarray, d_z_vlp: np.ndarray) -> CcpGrads:
    """Analytic gradients of a scalar loss w.r.t. all four projections.

    The attention map is shared, so its gradient accumulates from both views'
    outputs before the softmax backward.
    """
    d_attn = d_z_cbp @ state.values_cbp.T + d_z_vlp @ state.values_vlp.T
    d_values_cbp = state.attn.T @ d_z_cbp
    d_values_vlp = state.attn.T @ d_z_vlp
    d_scores = _rowsoftmax_backward(state.attn, d_attn) / np.sqrt(params.d_k)
    d_queries = d_scores @ state.keys
    d_keys = d_scores.T @ state.queries
    return CcpGrads(
        d_w_query=state.concat.T @ d_queries,
        d_w_key=state.concat.T @ d_keys,
        d_w_value_cbp=x_cbp.T @ d_values_cbp,
        d_w_value_vlp=x_vlp.T @ d_values_vlp,
    )
