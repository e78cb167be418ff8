from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL, condition_for_gradcheck, expand_to_dense, random_batch, small_model
from dinmp import nn
from dinmp.ingest import CAT_COL
from dinmp.model import (
    VARIANTS,
    FactorTables,
    InterestModel,
    ModelConfig,
    base_attention,
    bce_loss,
    bce_with_logits,
    combine_attention,
    compute_factors,
    partition_pool,
    weighted_pool,
)
from dinmp.nn import ShapeError


def copy_shared(src: InterestModel, dst: InterestModel) -> None:
    for name in src.store:
        if name in dst.store and src.store[name].shape == dst.store[name].shape:
            dst.store.set_value(name, src.store[name])


class TestOps:
    def test_base_attention_matches_loop(self, rng):
        d, h = 3, 5
        e = rng.normal(size=(4, d))
        q = rng.normal(size=(4, d))
        W0, b0 = rng.normal(size=(4 * d, h)), rng.normal(size=h)
        W1, b1 = rng.normal(size=(h, 1)), rng.normal(size=1)
        got, _ = base_attention(e, q, [(W0, b0, "relu"), (W1, b1, "identity")])
        for j in range(4):
            x = np.concatenate([e[j], q[j], e[j] * q[j], e[j] - q[j]])
            expect = np.maximum(x @ W0 + b0, 0) @ W1 + b1
            assert got[j, 0] == pytest.approx(expect[0], abs=1e-12)

    def test_factors_match_loop(self, rng):
        d, k = 4, 3
        e = rng.normal(size=(6, d))
        P = rng.normal(size=(d, k))
        tt, tc, tk = rng.normal(size=(10, k)), rng.normal(size=(6, k)), rng.normal(size=(5, k))
        buckets = np.stack([rng.integers(10, size=6), rng.integers(6, size=6), rng.integers(5, size=6)], axis=1)
        (p_t, p_c, p_cat), _ = compute_factors(e, buckets, FactorTables(P, tt, tc, tk))
        for j in range(6):
            theta = e[j] @ P
            assert p_t[j, 0] == pytest.approx(theta @ tt[buckets[j, 0]], abs=1e-12)
            assert p_c[j, 0] == pytest.approx(theta @ tc[buckets[j, 1]], abs=1e-12)
            assert p_cat[j, 0] == pytest.approx(theta @ tk[buckets[j, 2]], abs=1e-12)

    def test_disabled_factor_is_one(self, rng):
        e = rng.normal(size=(3, 4))
        (p_t, p_c, p_cat), _ = compute_factors(e, np.zeros((3, 3), dtype=np.int64), FactorTables(rng.normal(size=(4, 2)), count=rng.normal(size=(6, 2))))
        np.testing.assert_array_equal(p_t, 1.0)
        np.testing.assert_array_equal(p_cat, 1.0)
        assert not np.all(p_c == 1.0)

    def test_embedding_and_scalar_time_modes(self, rng):
        e = rng.normal(size=(3, 4))
        b = np.array([[0, 0, 0], [2, 0, 0], [2, 0, 0]])
        (p_t, _, _), _ = compute_factors(e, b, FactorTables(rng.normal(size=(4, 2)), time=(tt := rng.normal(size=(3, 4))), time_mode="embedding"))
        np.testing.assert_allclose(p_t[:, 0], np.sum(e * tt[b[:, 0]], axis=1), atol=1e-14)
        (p_t, _, _), _ = compute_factors(e, b, FactorTables(rng.normal(size=(4, 2)), time=np.array([[3.0], [4.0], [5.0]]), time_mode="scalar"))
        np.testing.assert_array_equal(p_t[:, 0], [3.0, 5.0, 5.0])

    def test_bucket_out_of_range(self, rng):
        with pytest.raises(IndexError):
            compute_factors(rng.normal(size=(1, 2)), np.array([[10, 0, 0]]), FactorTables(np.eye(2), time=np.zeros((10, 2))))

    def test_combiner_initial_weights_pass_base_score(self, rng):
        p = [rng.normal(size=(5, 1)) for _ in range(4)]
        np.testing.assert_array_equal(combine_attention(*p, [1, 0, 0, 0, 0, 0]), p[0])

    def test_combiner_hand_example(self):
        a = combine_attention(np.array([[2.0]]), np.array([[3.0]]), np.array([[5.0]]), np.array([[7.0]]), [1, 2, 3, 4, 5, 6])
        # 2 + 6 + 15 + 28 + 5*105 + 6*210
        assert a[0, 0] == 2 + 6 + 15 + 28 + 525 + 1260

    def test_combiner_needs_six(self):
        with pytest.raises(ShapeError):
            combine_attention(*(np.ones((1, 1)),) * 4, [1, 0, 0])

    def test_weighted_pool_matches_loop(self, rng):
        e = rng.normal(size=(5, 3))
        a = rng.normal(size=(5, 1))
        m = np.array([1, 4, 2, 1, 3])
        offsets = np.array([0, 2, 2, 5])
        got = weighted_pool(e, a, m, offsets)
        for i in range(3):
            exp = sum((m[j] * a[j, 0] * e[j] for j in range(offsets[i], offsets[i + 1])), np.zeros(3))
            np.testing.assert_allclose(got[i], exp, atol=1e-13)

    def test_cold_start_pools_to_zero(self, rng):
        got = weighted_pool(rng.normal(size=(2, 3)), np.ones((2, 1)), None, np.array([0, 0, 2]))
        np.testing.assert_array_equal(got[0], 0.0)

    def test_partition_hand_example(self):
        w = np.array([[1.0, 0], [0, 2.0], [3.0, 3.0]])
        E, Et, Ec = partition_pool(w, np.array([0, 1, 1]), np.array([1, 1, 0]), np.array([0, 2, 3]), 2, 2)
        np.testing.assert_array_equal(E, [[1, 2], [3, 3]])
        np.testing.assert_array_equal(Et[0], [[1, 0], [0, 2]])
        np.testing.assert_array_equal(Et[1], [[0, 0], [3, 3]])
        np.testing.assert_array_equal(Ec[0], [[0, 0], [1, 2]])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 6), min_size=1, max_size=6), st.integers(0, 2**31))
    def test_partition_conserves_total(self, lens, seed):
        rng = np.random.default_rng(seed)
        offsets = np.concatenate([[0], np.cumsum(lens)])
        n = offsets[-1]
        w = rng.normal(size=(n, 4))
        E, Et, Ec = partition_pool(w, rng.integers(10, size=n), rng.integers(3, size=n), offsets, 10, 3)
        np.testing.assert_allclose(Et.sum(axis=1), E, atol=1e-12)
        np.testing.assert_allclose(Ec.sum(axis=1), E, atol=1e-12)

    def test_bce(self):
        z = np.array([-3.0, 0.0, 2.0])
        y = np.array([0.0, 1.0, 1.0])
        assert bce_with_logits(z, y) == pytest.approx(bce_loss(nn.sigmoid(z), y), abs=1e-12)
        assert np.isfinite(bce_with_logits(np.array([1e4]), np.array([0.0])))


class TestConfig:
    def test_variant_defaults(self):
        flags = {v: ModelConfig(variant=v) for v in VARIANTS}
        assert flags["DIN"].dense_input and not flags["DINSKV"].dense_input
        assert flags["DINSKV"].multiplier_on and not flags["EDIN"].multiplier_on
        assert not flags["DINSKV"].uses_factors and flags["EDIN"].uses_factors
        assert flags["DINTP"].time_partition_on and not flags["DINTP"].category_partition_on
        assert flags["DINMP"].time_partition_on and flags["DINMP"].category_partition_on

    def test_rejects_unknown(self):
        with pytest.raises(ValueError):
            ModelConfig(variant="XYZ")
        with pytest.raises(ValueError):
            ModelConfig(interaction="sum")
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"variant": "DIN", "bogus": 1})

    def test_dict_round_trip(self):
        c = ModelConfig(variant="DINTP", interaction="self_attention", other_vocab=(3, 4))
        assert ModelConfig.from_dict(c.to_dict()) == c

    def test_mlp_input_dim(self):
        m = small_model("DINMP")
        d = m.config.emb_dim
        assert m.mlp_input_dim() == d + 10 * d + 5 * d + d + 4

    def test_batch_type_checked(self):
        b = random_batch(0)
        with pytest.raises(TypeError):
            small_model("DIN").forward(b)
        with pytest.raises(TypeError):
            small_model("DINSKV").forward(expand_to_dense(b))


class TestEquivalences:
    def test_dinskv_equals_din_on_expanded_sequence(self):
        din = small_model("DIN")
        skv = small_model("DINSKV")
        copy_shared(din, skv)
        b = random_batch(7, n=12)
        np.testing.assert_allclose(skv.forward(b)[0], din.forward(expand_to_dense(b))[0], rtol=0, atol=1e-10)

    def test_edin_with_initial_combiner_and_multiplier_equals_dinskv(self):
        skv = small_model("DINSKV")
        edin = small_model("EDIN", count_multiplier=True)
        copy_shared(skv, edin)
        b = random_batch(8, n=10)
        np.testing.assert_allclose(edin.forward(b)[0], skv.forward(b)[0], rtol=0, atol=1e-12)

    @pytest.mark.parametrize("coarse,fine", [("EDIN", "DINTP"), ("DINTP", "DINMP")])
    def test_partition_with_zeroed_weights_reduces(self, coarse, fine):
        a = small_model(coarse)
        b = small_model(fine)
        copy_shared(a, b)
        d = a.config.emb_dim
        extra = b.mlp_input_dim() - a.mlp_input_dim()
        W = a.store["mlp.W0"]
        # the new partition block sits right before the target embedding
        start = a.mlp_input_dim() - d - 4
        b.store.set_value("mlp.W0", np.concatenate([W[:start], np.zeros((extra, W.shape[1])), W[start:]]))
        batch = random_batch(9, n=10)
        np.testing.assert_allclose(b.forward(batch)[0], a.forward(batch)[0], rtol=0, atol=1e-12)

    def test_attention_scaling_changes_pool(self):
        m = small_model("DINSKV")
        b = random_batch(3, n=5)
        _, cache = m.forward(b)
        np.testing.assert_allclose(cache["weights"][:, 0], cache["att"][2][-1][3][:, 0] * b.counts, atol=1e-14)

    def test_self_attention_interaction_runs(self):
        m = small_model("DINMP", interaction="self_attention")
        logits, _ = m.forward(random_batch(2, n=6))
        assert logits.shape == (6,) and np.all(np.isfinite(logits))


class TestGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_finite_difference(self, variant):
        m = small_model(variant)
        condition_for_gradcheck(m)
        b = random_batch(11)
        if m.config.dense_input:
            b = expand_to_dense(b)
        rep = nn.finite_diff_check(m.loss, m.store, b, pattern_fn=m.relu_pattern)
        assert rep.worst() < 1e-4, {k: v for k, v in rep.max_rel_error.items() if v > 1e-4}
        assert min(rep.checked.values()) >= 1

    @pytest.mark.parametrize("overrides", [dict(interaction="self_attention"), dict(time_factor_mode="embedding"), dict(time_factor_mode="scalar")])
    def test_finite_difference_options(self, overrides):
        m = small_model("DINMP", **overrides)
        condition_for_gradcheck(m)
        rep = nn.finite_diff_check(m.loss, m.store, random_batch(12), pattern_fn=m.relu_pattern)
        assert rep.worst() < 1e-4, rep.max_rel_error


class TestTimeFactors:
    def test_shape_and_order(self):
        m = small_model("DINMP")
        tf = m.time_factors(random_batch(1, n=20))
        assert tf.shape == (10,)

    def test_scalar_mode_is_table(self):
        m = small_model("EDIN", time_factor_mode="scalar")
        np.testing.assert_array_equal(m.time_factors(), np.ones(10))

    def test_no_time_factor(self):
        with pytest.raises(ValueError):
            small_model("DINSKV").time_factors(random_batch(1))

    def test_averaged_value_matches_loop(self):
        m = small_model("EDIN")
        b = random_batch(4, n=8)
        tf = m.time_factors(b, max_entries=10**6)
        e = m.embed_behaviors(b.keys, b.values[:, CAT_COL])
        theta = e @ m.store["factor.proj"]
        expect = (theta @ m.store["factor.time"].T).mean(axis=0)
        np.testing.assert_allclose(tf, expect, atol=1e-13)


def test_determinism():
    a, b = small_model("DINMP"), small_model("DINMP")
    for name in a.store:
        np.testing.assert_array_equal(a.store[name], b.store[name])
    batch = random_batch(5)
    np.testing.assert_array_equal(a.forward(batch)[0], b.forward(batch)[0])
    c = InterestModel(ModelConfig(variant="DINMP", seed=1, **SMALL))
    assert not np.array_equal(a.store["emb.key"], c.store["emb.key"])
