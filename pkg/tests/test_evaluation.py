import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifcomp.curvature import fit_ekfac
from ifcomp.data import blob_splits
from ifcomp.errors import ConfigurationError, DimensionError
from ifcomp.evaluation import ScoringInputs, auroc, bin_table, ece, pearson_r, spearman_r, time_scoring
from ifcomp.pnml import PnmlConfig
from ifcomp.train import BpboConfig, TrainConfig, train_base


def brute_force_ece(conf, correct, bins):
    """Two passes: assign bin ids by sorted position, then accumulate."""
    n = len(conf)
    order = sorted(range(n), key=lambda i: (conf[i], i))
    base, extra = divmod(n, bins)
    bin_of = {}
    pos = 0
    for b in range(bins):
        size = base + (1 if b < extra else 0)
        for i in order[pos:pos + size]:
            bin_of[i] = b
        pos += size
    total = 0.0
    for b in range(bins):
        members = [i for i in range(n) if bin_of[i] == b]
        if members:
            c = sum(conf[i] for i in members) / len(members)
            a = sum(correct[i] for i in members) / len(members)
            total += len(members) * abs(c - a)
    return total / n


def pair_count_auroc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


class TestEce:
    def test_perfect_calibration(self):
        assert ece(np.ones(40), np.ones(40)) == 0.0

    def test_always_wrong(self):
        assert ece(np.ones(40), np.zeros(40)) == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        conf = rng.uniform(0, 1, size=40)
        correct = rng.uniform(size=40) < conf
        assert ece(conf, correct) == pytest.approx(brute_force_ece(list(conf), list(correct), 20), abs=1e-12)

    def test_uneven_sizes(self):
        rng = np.random.default_rng(7)
        conf = rng.uniform(size=47)
        correct = rng.integers(0, 2, size=47)
        t = bin_table(conf, correct)
        assert t.count.sum() == 47
        assert list(t.count[:7]) == [3] * 7 and set(t.count[7:]) == {2}
        assert ece(conf, correct) == pytest.approx(brute_force_ece(list(conf), list(correct), 20), abs=1e-12)

    def test_fewer_points_than_bins(self):
        t = bin_table([0.2, 0.9, 0.5], [1, 1, 0])
        assert list(t.count) == [1, 1, 1]

    def test_bounded(self):
        rng = np.random.default_rng(3)
        assert 0 <= ece(rng.uniform(size=100), rng.integers(0, 2, 100)) <= 1

    def test_permutation_invariant(self):
        rng = np.random.default_rng(11)
        conf = np.round(rng.uniform(size=60), 2)
        correct = rng.integers(0, 2, 60)
        perm = rng.permutation(60)
        # ties broken by position can change bin membership, but only among equal confidences
        assert ece(conf[perm], correct[perm]) == pytest.approx(ece(conf, correct), abs=0.05)
        unique = rng.uniform(size=60)
        assert ece(unique[perm], correct[perm]) == pytest.approx(ece(unique, correct), abs=1e-15)

    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigurationError):
            ece([1.2], [1])
        with pytest.raises(DimensionError):
            ece([0.2, 0.3], [1])

    def test_csv(self, tmp_path):
        t = bin_table(np.linspace(0.05, 0.95, 40), np.arange(40) % 2)
        t.write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "bin,mean_conf,acc,count" and len(lines) == 21


class TestAuroc:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pair_count(self, seed):
        rng = np.random.default_rng(seed)
        s = np.round(rng.normal(size=12), 1)
        l = np.array([1, 0] * 6)
        assert auroc(s, l) == pytest.approx(pair_count_auroc(list(s), list(l)), abs=1e-12)

    def test_separated(self):
        assert auroc([5, 6, 7, 1, 2], [1, 1, 1, 0, 0]) == 1.0

    def test_all_tied(self):
        assert auroc(np.zeros(8), [1, 0] * 4) == 0.5

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=30))
    def test_negation_complements(self, s):
        s = np.array(s)
        l = np.arange(len(s)) % 2
        assert auroc(s, l) + auroc(-s, l) == pytest.approx(1.0, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigurationError):
            auroc([0.1, 0.2], [1, 1])


class TestCorrelation:
    def test_direct_formula(self, rng):
        a, b = rng.normal(size=30), rng.normal(size=30)
        num = sum((x - a.mean()) * (y - b.mean()) for x, y in zip(a, b))
        den = np.sqrt(sum((x - a.mean()) ** 2 for x in a) * sum((y - b.mean()) ** 2 for y in b))
        assert pearson_r(a, b) == pytest.approx(num / den, abs=1e-12)

    def test_extremes_and_affine(self, rng):
        a = rng.normal(size=20)
        assert pearson_r(a, 3 * a + 1) == pytest.approx(1.0)
        assert pearson_r(a, -2 * a) == pytest.approx(-1.0)
        b = rng.normal(size=20)
        assert pearson_r(5 * a - 2, 0.1 * b + 7) == pytest.approx(pearson_r(a, b), abs=1e-12)

    def test_spearman_monotone(self, rng):
        a = rng.normal(size=25)
        assert spearman_r(a, np.exp(a)) == pytest.approx(1.0)

    def test_joint_permutation(self, rng):
        a, b = rng.normal(size=25), rng.normal(size=25)
        p = rng.permutation(25)
        assert pearson_r(a[p], b[p]) == pytest.approx(pearson_r(a, b), abs=1e-12)
        assert spearman_r(a[p], b[p]) == pytest.approx(spearman_r(a, b), abs=1e-12)

    def test_degenerate(self):
        with pytest.raises(ConfigurationError):
            pearson_r([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(ConfigurationError):
            pearson_r([1.0], [2.0])


@pytest.fixture(scope="module")
def scoring_inputs():
    sp = blob_splits(3, 4, {"train": 20, "test": 40}, 1.5, seed=2)
    params = train_base(sp["train"], TrainConfig(epochs=10, hidden=(8,), seed=0))
    curv = fit_ekfac(params, sp["train"], 1.0, delta=1e-3)
    return ScoringInputs(params, curv, sp["train"], sp["test"].features, PnmlConfig(1.0, 1.0, 60),
                         BpboConfig(steps=3))


class TestTiming:
    def test_grad_norm_not_slower_than_ifcomp(self, scoring_inputs):
        fast = time_scoring("grad_norm", scoring_inputs, reps=5)
        slow = time_scoring("ifcomp", scoring_inputs, reps=5)
        assert fast <= slow

    def test_oracle_slower(self, scoring_inputs):
        inp = ScoringInputs(**{**scoring_inputs.__dict__, "x": scoring_inputs.x[:2]})
        assert time_scoring("bpbo_oracle", inp, reps=1) > time_scoring("ifcomp", inp, reps=3)

    def test_reps_stable(self, scoring_inputs):
        one = time_scoring("ifcomp", scoring_inputs, reps=1, warmup=2)
        nine = time_scoring("ifcomp", scoring_inputs, reps=9, warmup=2)
        assert abs(one - nine) <= 0.5 * nine

    def test_unknown_method(self, scoring_inputs):
        with pytest.raises(ConfigurationError, match="grad_norm"):
            time_scoring("magic", scoring_inputs)
        with pytest.raises(ConfigurationError):
            time_scoring("ifcomp", scoring_inputs, reps=0)
