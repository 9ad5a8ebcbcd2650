import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from churnlab.dataset import (
    MONTHS,
    GeneratorConfig,
    Panel,
    PanelFormatError,
    apply_standardizer,
    fit_standardizer,
    generate_synthetic,
    load_csv,
    round_half_up,
    save_csv,
    stratified_kfold,
    undersample,
)


def _panel(n_pos, n_neg, p=2, seed=0):
    rng = np.random.default_rng(seed)
    n = n_pos + n_neg
    return Panel(
        ids=np.arange(100, 100 + n),
        static=rng.uniform(size=(n, p)),
        rfm=rng.uniform(0, 5, size=(n, MONTHS, 3)),
        churned=np.r_[np.ones(n_pos, bool), np.zeros(n_neg, bool)],
        static_names=tuple(f"s{j}" for j in range(p)),
    )


def _last6_slopes(panel):
    x = np.arange(6) - 2.5
    f = panel.rfm[:, -6:, 1]
    return (f - f.mean(axis=1, keepdims=True)) @ x / (x @ x)


class TestGenerator:
    def test_deterministic(self, tmp_path):
        cfg = GeneratorConfig(n_customers=500, churn_rate=0.05, seed=11)
        a, b = generate_synthetic(cfg), generate_synthetic(cfg)
        assert a == b
        save_csv(a, tmp_path / "a.csv")
        save_csv(b, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_low_prevalence_count(self):
        panel = generate_synthetic(GeneratorConfig(n_customers=10000, churn_rate=0.00243, seed=1))
        assert panel.n_churners == 24
        assert len(panel) == 10000

    def test_invariants(self):
        panel = generate_synthetic(GeneratorConfig(n_customers=300, churn_rate=0.1, n_static=4, seed=2))
        assert panel.rfm.shape == (300, 36, 3)
        assert panel.static.min() >= 0 and panel.static.max() <= 1
        assert panel.rfm.min() >= 0 and np.isfinite(panel.rfm).all()
        assert 0 < panel.churn_rate < 1

    def test_churner_directions(self):
        panel = generate_synthetic(GeneratorConfig(n_customers=4000, churn_rate=0.05, signal_strength=1.0, seed=3))
        slopes = _last6_slopes(panel)
        assert slopes[panel.churned].mean() < 0
        rec = panel.rfm[:, :, 0].mean(axis=1)
        assert rec[panel.churned].mean() < rec[~panel.churned].mean()

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_null_signal_slopes_indistinguishable(self, seed):
        panel = generate_synthetic(GeneratorConfig(n_customers=4000, churn_rate=0.05, signal_strength=0.0,
                                                   seed=seed))
        s = _last6_slopes(panel)
        a, b = s[panel.churned], s[~panel.churned]
        se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
        assert abs(a.mean() - b.mean()) < 3 * se

    @pytest.mark.parametrize("kwargs", [dict(n_customers=0), dict(churn_rate=0.0), dict(churn_rate=1.0),
                                        dict(churn_rate=-0.1)])
    def test_rejects_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            generate_synthetic(GeneratorConfig(**kwargs))

    def test_round_half_up(self):
        assert round_half_up(24.3) == 24
        assert round_half_up(2.5) == 3
        assert round_half_up(0.1 * 25) == 3


class TestCsv:
    def test_round_trip(self, tmp_path):
        panel = generate_synthetic(GeneratorConfig(n_customers=200, churn_rate=0.1, n_static=3, seed=5))
        save_csv(panel, tmp_path / "p.csv")
        assert load_csv(tmp_path / "p.csv") == panel

    def test_empty_round_trip(self, tmp_path):
        empty = Panel.empty(n_static=3)
        save_csv(empty, tmp_path / "e.csv")
        back = load_csv(tmp_path / "e.csv")
        assert len(back) == 0 and back == empty

    def test_handwritten_file(self, tmp_path):
        header = "id,churned,s0," + ",".join(f"{c}_{t}" for c in "rfm" for t in range(1, 37))
        rows = []
        for cid, lab, s0, base in [(3, 1, 0.25, 1.0), (7, 0, 0.5, 2.0), (9, 0, 1.0, 0.0)]:
            vals = [base + t for t in range(36)] + [2 * base] * 36 + [0.5] * 36
            rows.append(",".join([str(cid), str(lab), str(s0)] + [repr(float(v)) for v in vals]))
        path = tmp_path / "h.csv"
        path.write_text("# churnlab-panel v1\n" + header + "\n" + "\n".join(rows) + "\n")
        panel = load_csv(path)
        assert panel.ids.tolist() == [3, 7, 9]
        assert panel.churned.tolist() == [True, False, False]
        assert panel.static[:, 0].tolist() == [0.25, 0.5, 1.0]
        assert panel.rfm[1, :, 0].tolist() == [2.0 + t for t in range(36)]
        assert panel.rfm[0, :, 1].tolist() == [2.0] * 36
        assert panel.rfm[2, 5, 2] == 0.5

    def test_short_series_names_the_customer(self, tmp_path):
        panel = _panel(2, 2, p=1)
        save_csv(panel, tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        fields = lines[3].split(",")
        del fields[-1]  # customer 101 loses its 36th monetary month
        lines[3] = ",".join(fields)
        (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(PanelFormatError, match="customer 101") as err:
            load_csv(tmp_path / "p.csv")
        assert err.value.line == 4

    @pytest.mark.parametrize("bad,msg", [("nan", "non-finite"), ("inf", "non-finite"), ("abc", "customer")])
    def test_bad_values(self, tmp_path, bad, msg):
        save_csv(_panel(2, 2, p=1), tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        fields = lines[2].split(",")
        fields[10] = bad
        lines[2] = ",".join(fields)
        (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(PanelFormatError, match=msg) as err:
            load_csv(tmp_path / "p.csv")
        assert err.value.line == 3

    def test_missing_version_tag(self, tmp_path):
        (tmp_path / "x.csv").write_text("id,churned\n")
        with pytest.raises(PanelFormatError, match="version"):
            load_csv(tmp_path / "x.csv")


class TestFolds:
    def test_exact_division(self):
        folds = stratified_kfold(_panel(6, 6), 3, seed=0)
        panel = _panel(6, 6)
        for f in range(3):
            _, test = folds.split(panel, f)
            assert test.n_churners == 2 and len(test) - test.n_churners == 2

    def test_pigeonhole(self):
        panel = _panel(7, 20)
        folds = stratified_kfold(panel, 3, seed=4)
        counts = sorted(folds.split(panel, f)[1].n_churners for f in range(3))
        assert counts == [2, 2, 3]

    def test_deterministic(self):
        panel = _panel(9, 30)
        assert stratified_kfold(panel, 4, seed=8) == stratified_kfold(panel, 4, seed=8)

    def test_too_few_churners(self):
        with pytest.raises(ValueError, match="churners"):
            stratified_kfold(_panel(2, 30), 3, seed=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 30), st.integers(3, 60), st.integers(2, 3), st.integers(0, 2**32 - 1))
    def test_partition_property(self, n_pos, n_neg, k, seed):
        panel = _panel(n_pos, n_neg)
        folds = stratified_kfold(panel, k, seed)
        assert set(folds.fold_of) == set(panel.ids.tolist())
        tests = [folds.split(panel, f)[1] for f in range(k)]
        assert sum(len(t) for t in tests) == len(panel)
        pos = [t.n_churners for t in tests]
        assert max(pos) - min(pos) <= 1
        sizes = [len(t) for t in tests]
        assert max(sizes) - min(sizes) <= 1


class TestUndersample:
    def test_ratio_two(self):
        panel = _panel(10, 100)
        out = undersample(panel, 2, seed=1)
        assert out.n_churners == 10 and len(out) == 30
        assert set(out.ids[~out.churned]) <= set(panel.ids[~panel.churned])

    def test_ratio_one_equal_classes(self):
        panel = _panel(8, 8)
        assert undersample(panel, 1, seed=3) == panel

    def test_insufficient(self):
        with pytest.raises(ValueError, match="non-churners"):
            undersample(_panel(10, 15), 2, seed=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 15), st.integers(1, 3), st.integers(0, 2**32 - 1))
    def test_keeps_churners(self, n_pos, ratio, seed):
        panel = _panel(n_pos, n_pos * ratio + 7)
        out = undersample(panel, ratio, seed)
        assert set(out.ids[out.churned]) == set(panel.ids[panel.churned])
        assert int((~out.churned).sum()) == ratio * n_pos
        assert undersample(panel, ratio, seed) == out


class TestStandardizer:
    def test_fit_apply_same_data(self):
        panel = _panel(5, 40, p=3)
        z = apply_standardizer(fit_standardizer(panel), panel)
        assert np.abs(z.static.mean(axis=0)).max() < 1e-9
        assert np.allclose(z.static.std(axis=0), 1.0)
        assert np.abs(z.rfm.mean(axis=(0, 1))).max() < 1e-9
        assert np.allclose(z.rfm.std(axis=(0, 1)), 1.0)

    def test_constant_column(self):
        panel = _panel(3, 3, p=2)
        static = panel.static.copy()
        static[:, 1] = 0.7
        panel = Panel(panel.ids, static, panel.rfm, panel.churned, panel.static_names)
        std = fit_standardizer(panel)
        assert std.static_constant.tolist() == [False, True]
        assert std.static_stds[1] == 1.0
        assert (apply_standardizer(std, panel).static[:, 1] == 0).all()

    def test_applies_training_parameters(self):
        train = _panel(2, 2, p=1)
        static = np.array([[3.0], [7.0], [3.0], [7.0]]) / 10
        train = Panel(train.ids, static, train.rfm, train.churned, train.static_names)
        std = fit_standardizer(train)  # mean 0.5, std 0.2
        test = Panel(np.array([1]), np.array([[0.9]]), np.ones((1, 36, 3)), np.array([False]), ("s0",))
        assert apply_standardizer(std, test).static[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_panel_immutable(self):
        panel = _panel(2, 2)
        with pytest.raises(ValueError):
            panel.rfm[0, 0, 0] = 1.0
