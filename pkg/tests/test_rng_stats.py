import numpy as np
from scipy import stats as sps

from pathdep import rng
from pathdep.stats import Moments, bonferroni_z, binomial_se, z_score


def test_uniforms_in_open_unit_interval_and_uniform():
    keys = rng.path_keys(123, np.arange(20000))
    u = rng.uniforms(keys, 5, 2)
    assert u.shape == (20000, 2)
    assert np.all((u > 0) & (u < 1))
    assert sps.kstest(u[:, 0], "uniform").pvalue > 1e-3


def test_draws_do_not_depend_on_batching():
    keys = rng.path_keys(9, np.arange(100))
    whole = rng.uniforms(keys, 3, 4)
    parts = np.concatenate([rng.uniforms(rng.path_keys(9, np.arange(a, a + 25)), 3, 4)
                            for a in range(0, 100, 25)])
    assert np.array_equal(whole, parts)


def test_derive_seed_separates_streams():
    assert rng.derive_seed(1, 2) != rng.derive_seed(1, 3)
    assert rng.derive_seed(1, 2) == rng.derive_seed(1, 2)
    a = rng.uniforms(rng.path_keys(rng.derive_seed(1, 2), np.arange(1000)), 0, 1)
    b = rng.uniforms(rng.path_keys(rng.derive_seed(1, 3), np.arange(1000)), 0, 1)
    assert abs(np.corrcoef(a[:, 0], b[:, 0])[0, 1]) < 0.1


def test_normals_and_poisson_counts_match_their_laws():
    tables = [rng.PoissonTable(0.7)]
    xi, n = rng.normals_and_counts(rng.path_keys(5, np.arange(50000)), 0, 2, tables)
    assert xi.shape == (50000, 2) and n.shape == (50000, 1)
    assert abs(xi.mean()) < 0.02 and abs(xi.var() - 1) < 0.02
    assert abs(n.mean() - 0.7) < 0.02 and abs(n.var() - 0.7) < 0.03


def test_moments_merge_matches_numpy():
    x = np.random.default_rng(0).standard_normal((1000, 3))
    m = Moments()
    for chunk in np.array_split(x, 7):
        m.add(chunk)
    assert m.n == 1000
    np.testing.assert_allclose(m.mean, x.mean(0), rtol=1e-12)
    np.testing.assert_allclose(m.var, x.var(0, ddof=1), rtol=1e-10)
    np.testing.assert_allclose(m.se, x.std(0, ddof=1) / np.sqrt(1000), rtol=1e-10)


def test_z_and_bonferroni():
    assert z_score(0.0, 0.0) == 0.0
    assert np.isinf(z_score(1.0, 0.0))
    # the family-wise level of a single two-sided 3-sigma test, split over 384 cells
    assert abs(bonferroni_z(3.0, 384) - 4.4928) < 1e-3
    assert bonferroni_z(3.0, 1) == 3.0 or abs(bonferroni_z(3.0, 1) - 3.0) < 1e-9
    assert binomial_se(0.5, 100) == 0.05
