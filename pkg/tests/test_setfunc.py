import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metainterp import autodiff as ad
from metainterp import setfunc as sf


def random_simple(d, rng, zero_qk=False):
    p = sf.init_simple(d, rng)
    if zero_qk:
        zero_m, zero_r = np.zeros((d, d)), np.zeros((1, d))
        p.w1q = p.w1k = p.w2q = p.w2k = zero_m
        p.b1q = p.b1k = p.b2q = p.b2k = zero_r
        p.seed = zero_r
    else:
        for name in ("b1q", "b1k", "b1v", "b2q", "b2k", "b2v"):
            setattr(p, name, rng.standard_normal((1, d)) * 0.3)
    return p


class TestSimpleForm:
    def test_singleton_is_affine(self, rng):
        # stated closed form: singleton softmaxes collapse to weight one
        for _ in range(30):
            d = int(rng.integers(2, 9))
            p = random_simple(d, rng)
            h = rng.standard_normal((1, d))
            M, b = sf.effective_affine(p)
            got = sf.simple_forward(p, [h]).data
            assert np.max(np.abs(got - (h @ M + b))) <= 1e-12

    def test_pair_uniform_attention_with_zero_qk(self, rng):
        d = 5
        p = random_simple(d, rng, zero_qk=True)
        h, hp = rng.standard_normal((1, d)), rng.standard_normal((1, d))
        alpha, p1, p1t, p2 = sf.alpha_pair(p, h, hp)
        assert (alpha, p1, p1t, p2) == (0.5, 0.5, 0.5, 0.5)
        M, b = sf.effective_affine(p)
        got = sf.simple_forward(p, [h, hp]).data
        np.testing.assert_allclose(got, (h + hp) / 2 @ M + b, atol=1e-12)

    def test_pair_closed_form_100_draws(self, rng):
        # direct attention forward vs W(h + a(h'-h)) + b
        for _ in range(100):
            d = int(rng.integers(2, 9))
            p = random_simple(d, rng)
            h, hp = rng.standard_normal((1, d)), rng.standard_normal((1, d))
            alpha, *_ = sf.alpha_pair(p, h, hp)
            M, b = sf.effective_affine(p)
            want = (h + alpha * (hp - h)) @ M + b
            got = sf.simple_forward(p, [h, hp]).data
            assert np.max(np.abs(got - want)) <= 1e-9

    def test_alpha_identical_elements(self, rng):
        d = 4
        p = random_simple(d, rng)
        h = rng.standard_normal((1, d))
        alpha, p1, p1t, p2 = sf.alpha_pair(p, h, h)
        assert p1 == pytest.approx(p1t, abs=1e-15)
        pbar = p2 * p1 + (1 - p2) * p1t
        assert alpha == pytest.approx(1 - pbar, abs=1e-12)

    def test_alpha_complements_pbar(self, rng):
        # recompute pbar from the raw softmax matrices independently
        for _ in range(25):
            d = int(rng.integers(2, 7))
            p = random_simple(d, rng)
            h, hp = rng.standard_normal((1, d)), rng.standard_normal((1, d))
            alpha, p1, p1t, p2 = sf.alpha_pair(p, h, hp)
            pbar = p2 * p1 + (1 - p2) * p1t
            assert abs((1 - alpha) - pbar) <= 1e-12
            assert 0.0 <= alpha <= 1.0
            for prob in (p1, p1t, p2):
                assert 0.0 < prob < 1.0

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 5))
    def test_permutation_invariance_property(self, seed, n):
        rng = np.random.default_rng(seed)
        d = 4
        p = random_simple(d, rng)
        elems = [rng.standard_normal((1, d)) for _ in range(n)]
        perm = rng.permutation(n)
        a = sf.simple_forward(p, elems).data
        b = sf.simple_forward(p, [elems[i] for i in perm]).data
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_empty_set_rejected(self, rng):
        p = random_simple(3, rng)
        with pytest.raises(sf.CardinalityError):
            sf.simple_forward(p, [])

    def test_singleton_batch_matches_per_element(self, rng):
        d = 5
        p = random_simple(d, rng)
        H = rng.standard_normal((7, d))
        batch = sf.singleton_batch(p, H).data
        per = np.vstack([sf.simple_forward(p, [H[i : i + 1]]).data for i in range(7)])
        # same arithmetic, but BLAS vectorizes the batch differently
        np.testing.assert_allclose(batch, per, atol=1e-12)


class TestFullSetTransformer:
    def params(self, rng, d=6, dh=16, rate=0.1):
        return sf.init_full(d, dh, rng, dropout_rate=rate)

    def test_permutation_invariance(self, rng):
        p = self.params(rng)
        elems = [rng.standard_normal((1, 6)) for _ in range(2)]
        a = sf.full_forward(p, elems).data
        b = sf.full_forward(p, elems[::-1]).data
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_eval_mode_deterministic(self, rng):
        p = self.params(rng)
        elems = [rng.standard_normal((1, 6)) for _ in range(3)]
        a = sf.full_forward(p, elems).data
        b = sf.full_forward(p, elems).data
        np.testing.assert_array_equal(a, b)

    def test_mask_draws_give_distinct_outputs(self, rng):
        # 20 independent mask draws: at least 19 distinct outputs
        p = self.params(rng)
        elems = [rng.standard_normal((1, 6)) for _ in range(2)]
        outs = set()
        for t in range(20):
            masks = sf.make_full_masks(p, 2, np.random.default_rng([3, t]))
            outs.add(sf.full_forward(p, elems, masks).data.tobytes())
        assert len(outs) >= 19

    def test_mask_shape_mismatch_rejected(self, rng):
        p = self.params(rng)
        elems = [rng.standard_normal((1, 6)) for _ in range(2)]
        bad = (np.ones((1, p.hidden)), np.ones((1, p.hidden)))
        with pytest.raises(ad.ShapeError):
            sf.full_forward(p, elems, bad)

    def test_output_width_matches_input(self, rng):
        p = self.params(rng)
        out = sf.full_forward(p, [rng.standard_normal((1, 6))])
        assert out.shape == (1, 6)

    def test_singleton_batch_matches_per_element(self, rng):
        p = self.params(rng)
        H = rng.standard_normal((4, 6))
        batch = sf.singleton_batch(p, H).data
        per = np.vstack([sf.full_forward(p, [H[i : i + 1]]).data for i in range(4)])
        np.testing.assert_allclose(batch, per, atol=1e-12)

    def test_singleton_batch_with_masks(self, rng):
        p = self.params(rng)
        H = rng.standard_normal((4, 6))
        m2, m3 = sf.make_singleton_masks(p, 4, np.random.default_rng(9))
        batch = sf.singleton_batch(p, H, (m2, m3)).data
        per = np.vstack(
            [
                sf.full_forward(p, [H[i : i + 1]], (m2[i : i + 1], m3[i : i + 1])).data
                for i in range(4)
            ]
        )
        np.testing.assert_allclose(batch, per, atol=1e-12)

    def test_hidden_width_must_split_into_heads(self, rng):
        with pytest.raises(ValueError):
            sf.init_full(6, 10, rng)


class TestDeepSets:
    def test_identity_stacks_mean_pool(self, rng):
        p = sf.DeepSetsParams(pre=[], post=[])
        a, b = rng.standard_normal((1, 5)), rng.standard_normal((1, 5))
        out = sf.deepsets_forward(p, [a, b]).data
        np.testing.assert_array_equal(out, (a + b) / 2)

    def test_permutation_invariance(self, rng):
        p = sf.init_deepsets(5, (7,), rng)
        elems = [rng.standard_normal((1, 5)) for _ in range(4)]
        a = sf.deepsets_forward(p, elems).data
        b = sf.deepsets_forward(p, [elems[i] for i in (2, 0, 3, 1)]).data
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_duplicate_equals_singleton(self, rng):
        p = sf.init_deepsets(5, (7,), rng)
        h = rng.standard_normal((1, 5))
        a = sf.deepsets_forward(p, [h, h]).data
        b = sf.deepsets_forward(p, [h]).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_empty_set_rejected(self):
        with pytest.raises(sf.CardinalityError):
            sf.deepsets_forward(sf.DeepSetsParams([], []), [])


class TestDispatch:
    def test_identity_singleton_only(self, rng):
        h = rng.standard_normal((1, 3))
        out = sf.set_forward(sf.IdentitySet(), [h])
        np.testing.assert_array_equal(out.data, h)
        with pytest.raises(sf.CardinalityError):
            sf.set_forward(sf.IdentitySet(), [h, h])

    def test_gradients_flow_through_simple(self, rng):
        from conftest import fd_grad, rel_err

        d = 4
        p = random_simple(d, rng)
        h, hp = rng.standard_normal((1, d)), rng.standard_normal((1, d))

        def loss_given(w1q):
            q = sf.SimpleSetParams(**{**p.__dict__, "w1q": w1q})
            return ad.sum_all(sf.simple_forward(q, [h, hp])).item()

        tape = ad.Tape()
        live = sf.SimpleSetParams(**{**p.__dict__, "w1q": tape.param(p.w1q)})
        out = ad.sum_all(sf.simple_forward(live, [h, hp]))
        (g,) = ad.grad(out, [live.w1q])
        want = fd_grad(loss_given, p.w1q)
        assert rel_err(g.data, want) <= 1e-5
