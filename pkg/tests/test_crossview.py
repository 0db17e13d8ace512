"""Cross-view collaborative attention against scalar oracles and properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clip_ae.crossview import CcpParams, collaborative_attention, init_ccp_params
from clip_ae.errors import DimensionMismatch

from oracles import oracle_ccp


def random_params(rng, d, d_k=None, d_v=None):
    d_k = d_k or d
    d_v = d_v or d
    return CcpParams(
        w_query=rng.normal(size=(2 * d, d_k)),
        w_key=rng.normal(size=(2 * d, d_k)),
        w_value_cbp=rng.normal(size=(d, d_v)),
        w_value_vlp=rng.normal(size=(d, d_v)),
    )


class TestAgainstOracle:
    def test_100_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            d = int(rng.integers(2, 5))
            t = int(rng.integers(1, 6))
            d_k = int(rng.integers(2, 5))
            d_v = int(rng.integers(2, 5))
            x_cbp = rng.normal(size=(t, d))
            x_vlp = rng.normal(size=(t, d))
            params = random_params(rng, d, d_k, d_v)
            z_cbp, z_vlp, _ = collaborative_attention(x_cbp, x_vlp, params)
            want_cbp, want_vlp = oracle_ccp(
                x_cbp.tolist(), x_vlp.tolist(), params.w_query.tolist(),
                params.w_key.tolist(), params.w_value_cbp.tolist(),
                params.w_value_vlp.tolist())
            assert np.abs(z_cbp - np.array(want_cbp)).max() < 1e-10
            assert np.abs(z_vlp - np.array(want_vlp)).max() < 1e-10


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(2, 5), t=st.integers(1, 7))
    def test_attention_rows_stochastic(self, seed, d, t):
        rng = np.random.default_rng(seed)
        _, _, state = collaborative_attention(
            rng.normal(size=(t, d)), rng.normal(size=(t, d)),
            random_params(rng, d))
        assert state.attn.shape == (t, t)
        assert (state.attn >= 0).all()
        np.testing.assert_allclose(state.attn.sum(axis=1), 1.0, atol=1e-9)

    def test_single_segment_attention_is_identity(self, rng):
        _, _, state = collaborative_attention(
            rng.normal(size=(1, 3)), rng.normal(size=(1, 3)),
            random_params(rng, 3))
        np.testing.assert_array_equal(state.attn, [[1.0]])

    def test_constant_segments_give_uniform_attention(self, rng):
        t, d = 5, 3
        x_cbp = np.tile(rng.normal(size=(1, d)), (t, 1))
        x_vlp = np.tile(rng.normal(size=(1, d)), (t, 1))
        _, _, state = collaborative_attention(x_cbp, x_vlp,
                                              random_params(rng, d))
        np.testing.assert_allclose(state.attn, np.full((t, t), 1.0 / t),
                                   atol=1e-12)

    def test_view_swap_symmetry(self, rng):
        d, t = 4, 5
        x_cbp = rng.normal(size=(t, d))
        x_vlp = rng.normal(size=(t, d))
        params = random_params(rng, d)
        swapped = CcpParams(
            w_query=np.vstack([params.w_query[d:], params.w_query[:d]]),
            w_key=np.vstack([params.w_key[d:], params.w_key[:d]]),
            w_value_cbp=params.w_value_vlp,
            w_value_vlp=params.w_value_cbp,
        )
        z_cbp, z_vlp, _ = collaborative_attention(x_cbp, x_vlp, params)
        z_vlp_s, z_cbp_s, _ = collaborative_attention(x_vlp, x_cbp, swapped)
        np.testing.assert_allclose(z_cbp_s, z_cbp, atol=1e-12)
        np.testing.assert_allclose(z_vlp_s, z_vlp, atol=1e-12)

    def test_init_defaults_square(self, rng):
        params = init_ccp_params(rng, 6)
        assert params.w_query.shape == (12, 6)
        assert params.w_key.shape == (12, 6)
        assert params.w_value_cbp.shape == (6, 6)
        assert params.d_k == 6 and params.d_v == 6


class TestErrors:
    def test_query_width_mismatch(self, rng):
        params = random_params(rng, 3)
        with pytest.raises(DimensionMismatch):
            collaborative_attention(rng.normal(size=(4, 2)),
                                    rng.normal(size=(4, 2)), params)

    def test_value_width_mismatch(self, rng):
        params = random_params(rng, 3)
        params.w_value_cbp = rng.normal(size=(5, 3))
        with pytest.raises(DimensionMismatch):
            collaborative_attention(rng.normal(size=(4, 3)),
                                    rng.normal(size=(4, 3)), params)
