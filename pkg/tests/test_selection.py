import numpy as np
import pytest

from mixreg.core import InvalidInputError, MixtureParams, ModelSpec, SparsityPattern
from mixreg.evalsim import ConditionalTruth, kl_mc
from mixreg.selection import (
    EmptyCollectionError,
    InsufficientCollectionError,
    ModelCollection,
    bic_select,
    lad_fit,
    oracle_select,
    slope_select,
)

N = 100


def make_spec(i, dim, loglik, K=1):
    """Synthetic model with a unique key (its support encodes ``i``)."""
    J = SparsityPattern([(0, j) for j in range(i)], 1, 256)
    params = MixtureParams(np.full(K, 1 / K), np.zeros((K, 1, 1)), np.ones((K, 1)))
    return ModelSpec(K=K, J=J, params=params, loglik=loglik, dim=dim)


def ramp(kappa=2.0, a=-3.0, dims=range(5, 41, 5)):
    """Models whose log-likelihood per n is exactly a + kappa D / n."""
    return [make_spec(i, d, N * (a + kappa * d / N)) for i, d in enumerate(dims)]


class TestCollection:
    def test_keep_higher_loglik(self):
        c = ModelCollection()
        assert c.add(make_spec(1, 5, -10.0))
        assert not c.add(make_spec(1, 5, -12.0))
        assert c.add(make_spec(1, 5, -8.0))
        assert len(c) == 1 and c.entries[0].loglik == -8.0
        with pytest.raises(InvalidInputError):
            c.add(make_spec(1, 5, -1.0), keep="error")

    def test_provenance(self):
        spec = make_spec(2, 5, -1.0)
        spec.lam, spec.procedure = 0.3, "lasso-mle"
        assert ModelCollection([spec]).provenance == [
            {"procedure": "lasso-mle", "K": 1, "lambda": 0.3, "R": None}]

    def test_empty(self):
        with pytest.raises(EmptyCollectionError):
            bic_select(ModelCollection(), N)


class TestSlope:
    def test_exact_line_selects_smallest_dimension(self):
        chosen, kappa, _ = slope_select(ramp(), N)
        assert kappa == pytest.approx(2.0, abs=1e-10)
        assert chosen.dim == 5

    def test_planted_winner(self):
        # log-likelihood 5 kappa above the line at D=13 beats the smallest
        # ramp dimension D=10, and lies outside the fitted (largest) half
        kappa = 2.0
        entries = ramp(kappa, dims=range(10, 41, 2))
        planted = make_spec(50, 13, N * (-3.0 + kappa * 13 / N) + 5 * kappa)
        entries.append(planted)
        chosen, kappa_hat, diag = slope_select(entries, N)
        assert chosen is planted
        assert kappa_hat == pytest.approx(kappa, abs=1e-6)
        # enumeration oracle of the criterion
        crit = [-s.loglik / N + 2 * kappa * s.dim / N for s in entries]
        assert entries[int(np.argmin(crit))] is planted

    def test_noiseless_slope(self):
        _, kappa, diag = slope_select(ramp(kappa=0.731, a=1.25), N)
        assert kappa == pytest.approx(0.731, abs=1e-10)
        assert diag.intercept == pytest.approx(1.25, abs=1e-10)

    def test_duplicates_and_shift_invariance(self):
        entries = ramp() + [make_spec(60, 20, N * (-3.0 + 2 * 0.2) + 25)]
        chosen, kappa, _ = slope_select(entries, N)
        dup = entries + [make_spec(70, 20, entries[-1].loglik)]
        c2, k2, _ = slope_select(dup, N)
        assert c2.dim == chosen.dim and k2 == pytest.approx(kappa, abs=1e-12)
        shifted = [make_spec(i, s.dim, s.loglik + 123.0) for i, s in enumerate(entries)]
        c3, k3, _ = slope_select(shifted, N)
        assert c3.dim == chosen.dim and k3 == pytest.approx(kappa, abs=1e-9)

    def test_insufficient(self):
        with pytest.raises(InsufficientCollectionError):
            slope_select(ramp(dims=[5, 10, 15, 20]), N)

    def test_non_positive_slope_falls_back_to_bic(self):
        entries = ramp(kappa=-1.0)
        with pytest.warns(RuntimeWarning):
            chosen, kappa, diag = slope_select(entries, N)
        assert kappa < 0 and diag.fallback == "bic"
        assert chosen is bic_select(entries, N)

    def test_window_is_largest_half(self):
        _, _, diag = slope_select(ramp(dims=range(5, 61, 5)), N)
        assert diag.fit_mask.sum() == 6
        assert diag.fit_mask[-6:].all()
        table = diag.table()
        assert len(table) == 12 and table[0]["D_over_n"] == pytest.approx(0.05)

    def test_lad_ignores_outlier(self):
        x = np.arange(10.0)
        y = 1.0 + 0.5 * x
        y[3] += 40.0
        a, b = lad_fit(x, y)
        assert b == pytest.approx(0.5, abs=1e-6) and a == pytest.approx(1.0, abs=1e-5)


class TestBic:
    def test_singleton(self):
        spec = make_spec(1, 7, -5.0)
        assert bic_select([spec], N) is spec

    def test_tie_goes_to_smaller_dimension(self):
        a, b = make_spec(1, 5, -50.0), make_spec(2, 9, -50.0)
        assert bic_select([b, a], N) is a

    def test_permutation_invariance(self, rng):
        entries = [make_spec(i, int(d), float(l)) for i, (d, l) in
                   enumerate(zip(rng.integers(3, 40, 15), rng.normal(-100, 10, 15)))]
        chosen = bic_select(entries, N)
        for _ in range(5):
            assert bic_select([entries[i] for i in rng.permutation(15)], N) is chosen


class TestOracle:
    def test_true_model_wins(self):
        truth = MixtureParams([1.0], [[[1.0]]], [[1.0]])
        other = MixtureParams([1.0], [[[0.0]]], [[1.0]])
        specs = [ModelSpec(K=1, J=SparsityPattern([(0, 0)], 1, 1), params=truth, loglik=0, dim=3),
                 ModelSpec(K=1, J=SparsityPattern([], 1, 1), params=other, loglik=0, dim=2)]
        sampler = ConditionalTruth(truth)
        chosen = oracle_select(specs, lambda s: kl_mc(sampler, s.params, 5000, seed=1)[0])
        assert chosen is specs[0]

    def test_oracle_never_worse_than_slope(self):
        entries = ramp()
        score = {id(s): abs(s.dim - 20) for s in entries}
        best = oracle_select(entries, lambda s: score[id(s)])
        chosen, _, _ = slope_select(entries, N)
        assert score[id(best)] <= score[id(chosen)]
        assert best.dim == 20
