import numpy as np
import pytest

from churnlab import pipeline as P
from churnlab.dataset import GeneratorConfig, generate_synthetic
from churnlab.lstm import LstmHyper
from churnlab.pipeline import (
    SMOKE_LSTM_GRID,
    SPEC_BY_KEY,
    MODEL_SPECS,
    AuditLog,
    CvConfig,
    LeakageError,
    child_seed,
    improvement,
    oof_lstm_probabilities,
    run_experiment,
    select_reported_model,
    select_specs,
    tune_inner,
)

FAST = LstmHyper(hidden_units=3, epochs=2, batch_size=25)


@pytest.fixture(scope="module")
def panel():
    return generate_synthetic(GeneratorConfig(n_customers=400, churn_rate=0.08, n_static=4, seed=21))


class TestSelection:
    def test_majority(self):
        assert select_reported_model(["A", "A", "B"], [0.6, 0.61, 0.9]) == ("A", "majority")

    def test_all_different_takes_best_auc(self):
        assert select_reported_model(["A", "B", "C"], [0.70, 0.75, 0.72]) == ("B", "best-AUC")

    def test_unanimous(self):
        assert select_reported_model([0.1, 0.1, 0.1], [0.7, 0.8, 0.75]) == (0.1, "majority")

    def test_majority_tie_broken_by_mean_auc(self):
        assert select_reported_model(["A", "B", "A", "B"], [0.6, 0.7, 0.6, 0.7])[0] == "B"

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            select_reported_model(["A"], [0.5, 0.6])

    def test_argmax_first(self):
        assert P.argmax_first([0.5, 0.7, 0.7, 0.1]) == 1


def test_improvement():
    assert improvement(4.211, 3.350) == pytest.approx(0.257, abs=5e-4)


def test_child_seeds_distinct_and_stable():
    seeds = {child_seed(0, st, *path) for st in ("outer_split", "lstm", "undersample")
             for path in [(), (0,), (1,), (0, 1), (1, 0)]}
    assert len(seeds) == 15
    assert child_seed(7, "lstm", 2, 3) == child_seed(7, "lstm", 2, 3)
    assert child_seed(7, "lstm", 2, 3) != child_seed(8, "lstm", 2, 3)


def test_specs_in_table_order():
    assert len(MODEL_SPECS) == 9
    assert [s.key for s in select_specs(["lstm", "static"])] == ["static", "lstm"]
    with pytest.raises(ValueError, match="unknown"):
        select_specs(["nope"])
    assert SPEC_BY_KEY["static_lstm"].uses_lstm and not SPEC_BY_KEY["static_agg"].uses_lstm


class TestTuneInner:
    def test_singleton_grid(self, panel):
        res = tune_inner(panel, SPEC_BY_KEY["static"], [0.05], CvConfig())
        assert res.best == 0.05

    def test_degenerate_penalty_loses(self, panel):
        # C so small that every weight is zero: all scores tie and the inner AUC is 0.5
        res = tune_inner(panel, SPEC_BY_KEY["static"], [1e-9, 1.0], CvConfig())
        assert res.mean_aucs[0] == 0.5
        assert res.best == 1.0

    def test_stacked_spec_needs_lstm_setting(self, panel):
        with pytest.raises(ValueError, match="LSTM"):
            tune_inner(panel, SPEC_BY_KEY["static_lstm"], [0.1, 1.0], CvConfig())

    def test_lstm_grid(self, panel):
        grid = [FAST, LstmHyper(hidden_units=3, epochs=3, batch_size=25)]
        res = tune_inner(panel, SPEC_BY_KEY["lstm"], grid, CvConfig(inner_k=2))
        assert res.best in grid and len(res.mean_aucs) == 2


class TestStacking:
    def test_oof_two_fold_audit(self, panel):
        audit = AuditLog()
        probs = oof_lstm_probabilities(panel, FAST, stack_k=2, seed=3, audit=audit)
        assert set(probs) == set(panel.ids.tolist())
        assert len(audit.trainings) == 2
        scored = {mid: set(ids) for mid, _, ids in audit.predictions}
        for mid, trained in audit.trainings.items():
            assert not trained & scored[mid]
        # each customer is scored exactly once, by a model that never saw it
        all_scored = [i for _, _, ids in audit.predictions for i in ids]
        assert sorted(all_scored) == sorted(panel.ids.tolist())
        audit.check()

    def test_test_probabilities_cover_test_only(self, panel):
        idx = np.arange(len(panel))
        train, test = panel.subset(idx % 4 != 0), panel.subset(idx % 4 == 0)
        audit = AuditLog()
        probs = P.test_probabilities(train, test, FAST, seed=1, audit=audit)
        assert set(probs) == set(test.ids.tolist())
        (trained,) = audit.trainings.values()
        assert trained <= set(train.ids.tolist())
        assert all(0 < p < 1 for p in probs.values())

    def test_oof_deterministic(self, panel):
        a = oof_lstm_probabilities(panel, FAST, 2, seed=5)
        assert a == oof_lstm_probabilities(panel, FAST, 2, seed=5)


class TestAudit:
    def test_detects_leak(self):
        audit = AuditLog()
        audit.record_training("m", [1, 2, 3])
        audit.record_prediction("m", "test", [4, 3])
        assert audit.violations() == [("m", "test", 3)]
        with pytest.raises(LeakageError, match="customer 3"):
            audit.check()

    def test_duplicate_model_id(self):
        audit = AuditLog()
        audit.record_training("m", [1])
        with pytest.raises(ValueError):
            audit.record_training("m", [2])


@pytest.fixture(scope="module")
def result(panel):
    specs = select_specs(["static", "static_lstm", "lstm"])
    return run_experiment(panel, specs, c_grid=[0.01, 1.0], lstm_grid=[FAST], config=CvConfig(stack_k=2))


class TestExperiment:
    def test_shape(self, result):
        assert [r.spec.key for r in result.results] == ["static", "static_lstm", "lstm"]
        for r in result.results:
            assert len(r.fold_reports) == 3 and 0 <= r.mean.auc <= 1
            assert r.mean.auc == pytest.approx(np.mean([f.auc for f in r.fold_reports]))

    def test_no_leakage(self, result):
        assert result.audit.violations() == []
        purposes = {p for _, p, _ in result.audit.predictions}
        assert purposes == {"test", "stacked", "inner-validation"}

    def test_written_outputs(self, result, tmp_path):
        result.write(tmp_path)
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert lines[0] == "model,key,AUC,Lift,EMPC,hyperparameters,selection"
        assert len(lines) == 4
        for k in (1, 2, 3):
            assert (tmp_path / "lift_curves" / f"outer_fold_{k}.csv").exists()
        assert (tmp_path / "audit_trainings.csv").exists()

    def test_deterministic(self, result, panel, tmp_path):
        again = run_experiment(panel, select_specs(["static", "static_lstm", "lstm"]), c_grid=[0.01, 1.0],
                               lstm_grid=[FAST], config=CvConfig(stack_k=2))
        result.write(tmp_path / "a")
        again.write(tmp_path / "b")
        assert (tmp_path / "a/report.csv").read_bytes() == (tmp_path / "b/report.csv").read_bytes()

    def test_too_few_churners(self):
        tiny = generate_synthetic(GeneratorConfig(n_customers=3000, churn_rate=0.00243, seed=0))
        with pytest.raises(ValueError, match="7 churners"):
            run_experiment(tiny, select_specs(["static"]))

    def test_empty_specs_rejected(self, panel):
        with pytest.raises(ValueError):
            run_experiment(panel, [])

    def test_smoke_grid_is_small(self):
        assert len(SMOKE_LSTM_GRID) == 2
