import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mlpheat.random_kernels import (
    BLOCK,
    EPS,
    TERMINAL,
    RandomStream,
    RvCounter,
    arcsine_from_uniform,
    derive_child,
    gaussian_increment,
    sample_arcsine,
)


def batch(seed, size, level=0, role=BLOCK):
    return RandomStream.root(seed).spawn(level, np.arange(1, size + 1), role)


class TestArcsine:
    def test_midpoint(self):
        assert arcsine_from_uniform(0.5) == pytest.approx(0.5, abs=1e-15)

    def test_endpoint_clamp(self):
        r = arcsine_from_uniform(np.array([0.0, 1e-300, 1.0]))
        assert r[0] == EPS and r[1] == EPS
        assert r[2] == 1.0 - EPS
        assert np.all((r > 0) & (r < 1))

    def test_cdf_at_quarter(self):
        r = sample_arcsine(batch(11, 100_000))
        assert np.mean(r <= 0.25) == pytest.approx(1 / 3, abs=0.005)

    def test_ks_and_mean(self):
        r = sample_arcsine(batch(12, 100_000))
        ks = stats.kstest(r, lambda b: 2 / np.pi * np.arcsin(np.sqrt(b))).statistic
        assert ks < 0.006
        assert r.mean() == pytest.approx(0.5, abs=0.005)

    @given(st.floats(0.0, 1.0))
    def test_range_and_monotone(self, u):
        r = arcsine_from_uniform(u)
        assert 0 < r < 1
        assert arcsine_from_uniform(min(1.0, u + 1e-3)) >= r


class TestGaussianIncrement:
    def test_zero_dt(self):
        dw = gaussian_increment(RandomStream.root(1), 3, 0.0)
        assert dw.shape == (1, 3)
        assert np.all(dw == 0)

    def test_moments(self):
        dw = gaussian_increment(batch(3, 100_000), 1, 1.0)[:, 0]
        assert dw.mean() == pytest.approx(0.0, abs=0.01)
        assert dw.var() == pytest.approx(1.0, abs=0.02)

    def test_scaling_per_member(self):
        s = batch(4, 3)
        z = s.with_counter(None)
        dw = gaussian_increment(s, 2, np.array([1.0, 4.0, 0.25]))
        base = gaussian_increment(RandomStream(z.keys), 2, 1.0)
        assert np.allclose(dw, base * np.array([[1.0], [2.0], [0.5]]))

    def test_counter(self):
        c = RvCounter()
        gaussian_increment(RandomStream.root(0, c), 100, 1.0)
        assert c.count == 100

    def test_negative_dt(self):
        with pytest.raises(ValueError):
            gaussian_increment(RandomStream.root(0), 2, -1.0)


class TestDerivation:
    def test_child_deterministic(self):
        root = RandomStream.root(7)
        a = derive_child(root, 0, -3, TERMINAL)
        b = derive_child(root, 0, -3, TERMINAL)
        assert np.array_equal(a.keys, b.keys)
        assert np.array_equal(a.uniforms(5), b.uniforms(5))

    def test_path_encoding_injective(self):
        root = RandomStream.root(7)
        a = derive_child(root, 1, 2, BLOCK)
        b = derive_child(root, 2, 1, BLOCK)
        assert not np.array_equal(a.keys, b.keys)

    def test_role_and_sign_separate(self):
        root = RandomStream.root(0)
        keys = {tuple(root.child(0, br, role).keys[0]) for br in (-1, 1) for role in (TERMINAL, BLOCK)}
        assert len(keys) == 4

    def test_sibling_cross_correlation(self):
        root = RandomStream.root(5)
        a = root.child(0, 1, BLOCK).uniforms(100_000)[0]
        b = root.child(0, 2, BLOCK).uniforms(100_000)[0]
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.01

    def test_spawn_matches_child(self):
        root = RandomStream.root(9)
        batch_ = root.spawn(2, [-1, 4, 7], BLOCK)
        for j, br in enumerate([-1, 4, 7]):
            assert np.array_equal(batch_.keys[j], root.child(2, br, BLOCK).keys[0])

    def test_spawn_of_batch_is_batch_major(self):
        parents = RandomStream.root(1).spawn(0, [1, 2], BLOCK)
        kids = parents.spawn(1, [5, 6, 7], TERMINAL)
        for j in range(2):
            single = RandomStream(parents.keys[j:j + 1])
            for b, br in enumerate([5, 6, 7]):
                assert np.array_equal(kids.keys[3 * j + b], single.child(1, br, TERMINAL).keys[0])

    def test_from_path(self):
        path = [(0, 3, BLOCK), (2, -1, TERMINAL)]
        s = RandomStream.from_path(42, path)
        t = RandomStream.root(42).child(0, 3, BLOCK).child(2, -1, TERMINAL)
        assert np.array_equal(s.keys, t.keys)
        assert s.path == tuple(path)

    def test_draws_do_not_depend_on_batching(self):
        # drawing in one call or in two calls gives the same sequence
        s1, s2 = RandomStream.root(3), RandomStream.root(3)
        whole = s1.uniforms(6)
        parts = np.concatenate([s2.uniforms(2), s2.uniforms(4)], axis=1)
        assert np.array_equal(whole, parts)

    @settings(max_examples=50)
    @given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
    def test_distinct_seeds_distinct_keys(self, s1, s2):
        if s1 != s2:
            assert not np.array_equal(RandomStream.root(s1).keys, RandomStream.root(s2).keys)

    def test_no_key_collisions_in_large_family(self):
        keys = RandomStream.root(0).spawn(3, np.arange(-50_000, 50_001), BLOCK).keys
        assert len({(int(a), int(b)) for a, b in keys}) == keys.shape[0]

    @pytest.mark.parametrize("level,branch,role", [(-1, 0, 0), (1 << 16, 0, 0), (0, 1 << 40, 0), (0, 0, 300)])
    def test_tag_range(self, level, branch, role):
        with pytest.raises(ValueError):
            RandomStream.root(0).child(level, branch, role)

    def test_uniforms_open_interval(self):
        u = batch(0, 1000).uniforms(100)
        assert np.all((u > 0) & (u < 1))


def test_counter_merge():
    assert (RvCounter(3) + RvCounter(4)).count == 7
