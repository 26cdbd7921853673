import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ifcomp.curvature import fit_ekfac
from ifcomp.errors import ConfigurationError, DimensionError
from ifcomp.influence import BifVector, bif_batch
from ifcomp.pnml import (
    PnmlConfig,
    ScoreRecord,
    boltzmann_pnml_exact,
    full_complexity,
    parametric_complexity,
    parametric_complexity_log,
    pnml_distribution,
    read_jsonl,
    score_arrays,
    score_dataset,
    to_bits,
    write_csv,
    write_jsonl,
)


def hand_pnml(p, b, alpha, n):
    a = alpha / n
    num = [p[y] + a * p[y] * b[y] for y in range(len(p))]
    den = 1.0 + a * sum(p[y] * b[y] for y in range(len(p)))
    return np.array([v / den for v in num])


prob_vectors = st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6).map(lambda v: np.array(v) / np.sum(v))


class TestParametricComplexity:
    def test_zero(self):
        assert parametric_complexity(np.zeros(3), np.full(3, 1 / 3)) == 0.0

    def test_constant(self):
        assert parametric_complexity(np.full(4, 2.5), np.array([0.1, 0.2, 0.3, 0.4])) == pytest.approx(2.5)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            parametric_complexity(np.ones(3), np.ones(2) / 2)

    def test_accepts_bif_vector(self):
        assert parametric_complexity(BifVector(np.array([1.0, 3.0]), 1.0), [0.5, 0.5]) == 2.0

    @pytest.mark.parametrize("seed", range(5))
    def test_first_order_log_form(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(4))
        b = rng.gamma(2.0, 5.0, size=4)
        n = 500
        lin = parametric_complexity(b, p)
        log_form = parametric_complexity_log(b, p, n)
        # n log(1 + x/n) vs x: the gap is bounded by (x/n)^2 / 2 * n
        assert abs(lin - log_form) <= (lin / n) ** 2 / 2 * n
        assert log_form <= lin


class TestFullComplexity:
    def test_zero_parametric(self):
        assert full_complexity(1.7, 0.0, 10) == 1.7

    def test_arithmetic(self):
        assert full_complexity(0.0, 50.0, 50) == 1.0

    def test_bad_n(self):
        with pytest.raises(ConfigurationError):
            full_complexity(1.0, 1.0, 0)


class TestPnmlDistribution:
    def test_alpha_zero_identity(self):
        p = np.array([0.2, 0.5, 0.3])
        out = pnml_distribution(p, np.array([1.0, 9.0, 4.0]), PnmlConfig(0.0, 1.0, 10))
        np.testing.assert_array_equal(out, p)

    def test_constant_bif_identity(self):
        p = np.array([0.2, 0.5, 0.3])
        out = pnml_distribution(p, np.full(3, 7.0), PnmlConfig(3.0, 1.0, 10))
        np.testing.assert_allclose(out, p, rtol=1e-15)

    def test_hand_evaluation(self):
        p = np.array([0.6, 0.3, 0.1])
        b = np.array([2.0, 10.0, 40.0])
        out = pnml_distribution(p, b, PnmlConfig(5.0, 1.0, 20))
        np.testing.assert_allclose(out, hand_pnml(p, b, 5.0, 20), rtol=1e-14)
        assert abs(out.sum() - 1) <= 1e-10

    def test_batch(self):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(3), size=5)
        b = rng.gamma(1.0, 3.0, size=(5, 3))
        out = pnml_distribution(p, b, PnmlConfig(2.0, 1.0, 4))
        for i in range(5):
            np.testing.assert_allclose(out[i], hand_pnml(p[i], b[i], 2.0, 4), rtol=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            pnml_distribution(np.ones(3) / 3, np.ones(2), PnmlConfig(1.0, 1.0, 1))

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            PnmlConfig(-1.0, 1.0, 1)
        with pytest.raises(ConfigurationError):
            PnmlConfig(1.0, 0.0, 1)
        with pytest.raises(ConfigurationError):
            PnmlConfig(1.0, 1.0, 0)

    @settings(max_examples=200, deadline=None)
    @given(p=prob_vectors, alpha=st.floats(0.0, 1e4), n=st.integers(1, 10000), data=st.data())
    def test_valid_distribution(self, p, alpha, n, data):
        b = np.array(data.draw(st.lists(st.floats(0.0, 1e6), min_size=len(p), max_size=len(p))))
        out = pnml_distribution(p, b, PnmlConfig(alpha, 1.0, n))
        assert np.all(out >= 0)
        assert abs(out.sum() - 1) <= 1e-10

    @settings(max_examples=100, deadline=None)
    @given(alpha=st.floats(1e-3, 1e3), lo=st.floats(0.0, 100.0), gap=st.floats(1e-3, 100.0))
    def test_higher_bif_wins_at_equal_base(self, alpha, lo, gap):
        p = np.array([0.4, 0.4, 0.2])
        out = pnml_distribution(p, np.array([lo, lo + gap, 1.0]), PnmlConfig(alpha, 1.0, 10))
        assert out[1] > out[0]

    def test_continuous_in_alpha(self):
        p = np.array([0.7, 0.2, 0.1])
        b = np.array([1.0, 50.0, 5.0])
        near = pnml_distribution(p, b, PnmlConfig(1e-9, 1.0, 10))
        np.testing.assert_allclose(near, p, atol=1e-8)


class TestExactBoltzmann:
    def test_memorization_gives_uniform(self):
        dist, comp = boltzmann_pnml_exact([1.0, 1.0, 1.0, 1.0])
        np.testing.assert_allclose(dist, 0.25)
        assert comp == pytest.approx(np.log(4))

    def test_one_hot(self):
        dist, comp = boltzmann_pnml_exact([1.0, 1e-300, 1e-300], y=0)
        np.testing.assert_allclose(dist, [1, 0, 0], atol=1e-12)
        assert comp == pytest.approx(0.0, abs=1e-12)

    def test_labelled_complexity(self):
        q = np.array([0.9, 0.5, 0.2])
        _, comp = boltzmann_pnml_exact(q, y=1)
        assert comp == pytest.approx(-np.log(0.5) + np.log(1.6), rel=1e-14)

    def test_scale_invariance(self):
        q = np.array([0.3, 0.6, 0.05])
        np.testing.assert_allclose(boltzmann_pnml_exact(q)[0], boltzmann_pnml_exact(0.37 * q)[0], rtol=1e-14)

    def test_rejects_zero(self):
        with pytest.raises(ConfigurationError):
            boltzmann_pnml_exact([0.0, 0.0])
        with pytest.raises(ConfigurationError):
            boltzmann_pnml_exact([0.5, -0.1])


class TestRecords:
    @pytest.fixture
    def scored(self, rng, small_net):
        x = rng.normal(size=(6, 5))
        y = rng.integers(0, 3, size=6)
        st_ = fit_ekfac(small_net, x, 1.0, delta=1e-3)
        cfg = PnmlConfig(2.0, 1.0, 6)
        return small_net, st_, x, y, cfg

    def test_score_dataset_fields(self, scored):
        params, curv, x, y, cfg = scored
        records = score_dataset(curv, params, x, y, cfg)
        bifs, probs = bif_batch(curv, params, x, 1.0)
        for i, r in enumerate(records):
            assert r.id == i
            assert r.error == pytest.approx(-np.log(probs[i, y[i]]), rel=1e-14)
            assert r.par_comp == pytest.approx(parametric_complexity(bifs[i], probs[i]), rel=1e-14)
            assert r.total == pytest.approx(full_complexity(r.error, r.par_comp, 6), rel=1e-14)
            assert abs(r.pnml.sum() - 1) <= 1e-10

    def test_unlabelled(self, scored):
        params, curv, x, _, cfg = scored
        records = score_dataset(curv, params, x, None, cfg, ids=range(10, 16))
        assert [r.id for r in records] == list(range(10, 16))
        assert all(r.error is None and r.total is None for r in records)

    def test_score_arrays_nonnegative(self, scored):
        params, curv, x, y, cfg = scored
        bifs, probs = bif_batch(curv, params, x, 1.0)
        s = score_arrays(bifs, probs, y, cfg)
        assert np.all(s["par_comp"] >= 0) and np.all(s["total"] >= 0)

    def test_jsonl_and_csv(self, scored, tmp_path):
        params, curv, x, y, cfg = scored
        records = score_dataset(curv, params, x, y, cfg)
        write_jsonl(records, tmp_path / "s.jsonl")
        rows = read_jsonl(tmp_path / "s.jsonl")
        assert list(rows[0]) == ["id", "error", "par_comp", "total", "bif_0", "bif_1", "bif_2",
                                 "pnml_0", "pnml_1", "pnml_2"]
        assert rows[3]["bif_1"] == float(records[3].bif[1])
        write_csv(records, tmp_path / "s.csv")
        header = (tmp_path / "s.csv").read_text().splitlines()[0]
        assert header == ",".join(rows[0])

    def test_record_without_pnml(self):
        d = ScoreRecord(0, None, 1.0, None, np.array([1.0, 2.0])).to_dict()
        assert "pnml_0" not in d and d["bif_1"] == 2.0


def test_bits():
    assert to_bits(np.log(8.0)) == pytest.approx(3.0)
