"""Nested cross-validation experiment over the nine model specifications.

Per outer fold:

1. the LSTM hyperparameters are tuned on the inner folds (LSTM-only model);
2. for every logistic specification, ``C`` is tuned on the same inner folds,
   building stacked LSTM probabilities inside each inner training split with
   the LSTM setting from step 1;
3. the tuned models are refit on the outer training split and scored on the
   untouched outer test split.

Standardizers are always fit on a training split before under-sampling.
Every LSTM fit and every LSTM prediction is written to an :class:`AuditLog`,
which :meth:`AuditLog.violations` checks for a customer scored by a model
that saw it during training.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from . import lstm as lstm_mod
from .dataset import (
    FoldAssignment,
    Panel,
    apply_standardizer,
    fit_standardizer,
    stratified_kfold,
    undersample,
)
from .features import FeatureSpec, build_feature_matrix, fit_column_scaler, rows_for
from .logit import C_GRID, fit_l1_logistic, predict_proba as logit_proba
from .lstm import LstmHyper
from .metrics import EmpcParams, MetricReport, auc, evaluate, mean_report

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSpec:
    key: str
    label: str
    learner: str  # "logit" or "lstm"
    features: FeatureSpec | None = None

    @property
    def uses_lstm(self) -> bool:
        return self.learner == "lstm" or bool(self.features and self.features.use_lstm_prob)


def _logit_spec(key, label, agg=False, lagged=False, prob=False) -> ModelSpec:
    return ModelSpec(key, label, "logit", FeatureSpec(True, agg, lagged, prob))


MODEL_SPECS: tuple[ModelSpec, ...] = (
    _logit_spec("static", "Only static"),
    _logit_spec("static_agg", "Static + agg. RFM", agg=True),
    _logit_spec("static_lagged", "Static + norm. lagged RFM", lagged=True),
    _logit_spec("static_agg_lagged", "Static + agg. RFM + norm. lagged RFM", agg=True, lagged=True),
    _logit_spec("static_lstm", "Static + LSTM prob.", prob=True),
    _logit_spec("static_lstm_lagged", "Static + LSTM prob. + norm. lagged RFM", lagged=True, prob=True),
    _logit_spec("static_lstm_agg", "Static + LSTM prob. + agg. RFM", agg=True, prob=True),
    _logit_spec("static_lstm_agg_lagged", "Static + LSTM prob. + agg. RFM + norm. lagged RFM",
                agg=True, lagged=True, prob=True),
    ModelSpec("lstm", "LSTM Neural network", "lstm"),
)
SPEC_BY_KEY = {s.key: s for s in MODEL_SPECS}

# reduced LSTM grid for desk-scale runs; the full grid is lstm.lstm_grid()
SMOKE_LSTM_GRID: tuple[LstmHyper, ...] = (
    LstmHyper(hidden_units=5, epochs=25, batch_size=10),
    LstmHyper(hidden_units=10, epochs=25, batch_size=25),
)


def select_specs(keys: Iterable[str] | None) -> tuple[ModelSpec, ...]:
    if keys is None:
        return MODEL_SPECS
    wanted = list(keys)
    unknown = [k for k in wanted if k not in SPEC_BY_KEY]
    if unknown:
        raise ValueError(f"unknown model spec(s) {unknown}; choose from {list(SPEC_BY_KEY)}")
    # keep table order regardless of the order asked for
    return tuple(s for s in MODEL_SPECS if s.key in wanted)


MIN_CV_CHURNERS = 10


@dataclass(frozen=True)
class CvConfig:
    outer_k: int = 3
    inner_k: int = 4
    stack_k: int = 4
    undersample_ratio: int = 2
    master_seed: int = 0
    quarter: str = "preceding"
    agg_with_diff: bool = True

    def __post_init__(self):
        if min(self.outer_k, self.inner_k, self.stack_k) < 2:
            raise ValueError("fold counts must be >= 2")
        if self.undersample_ratio < 1:
            raise ValueError("undersample_ratio must be >= 1")


# stage tags mixed into child seeds
_STAGE = {"outer_split": 1, "inner_split": 2, "stack_split": 3, "undersample": 4, "lstm": 5,
          "lstm_undersample": 6}


def child_seed(master_seed: int, stage: str, *path: int) -> int:
    """Seed for one task: SeedSequence(master_seed) keyed by (stage, *path)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(_STAGE[stage], *[int(p) + 1 for p in path]))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------
# audit


class LeakageError(RuntimeError):
    pass


@dataclass
class AuditLog:
    """Training-id sets of every LSTM fit and the ids each one scored."""

    trainings: dict[str, frozenset[int]] = field(default_factory=dict)
    predictions: list[tuple[str, str, tuple[int, ...]]] = field(default_factory=list)

    def record_training(self, model_id: str, ids: Iterable[int]) -> None:
        if model_id in self.trainings:
            raise ValueError(f"model id {model_id} logged twice")
        self.trainings[model_id] = frozenset(int(i) for i in ids)

    def record_prediction(self, model_id: str, purpose: str, ids: Iterable[int]) -> None:
        self.predictions.append((model_id, purpose, tuple(int(i) for i in ids)))

    def violations(self) -> list[tuple[str, str, int]]:
        bad = []
        for model_id, purpose, ids in self.predictions:
            seen = self.trainings[model_id]
            bad.extend((model_id, purpose, i) for i in ids if i in seen)
        return bad

    def check(self) -> None:
        bad = self.violations()
        if bad:
            model_id, purpose, cid = bad[0]
            raise LeakageError(f"customer {cid} scored ({purpose}) by model {model_id} "
                               f"that was trained on it ({len(bad)} violations)")

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        with open(directory / "audit_trainings.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_id", "n_train", "train_ids"])
            for model_id, ids in self.trainings.items():
                w.writerow([model_id, len(ids), " ".join(map(str, sorted(ids)))])
        with open(directory / "audit_predictions.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model_id", "purpose", "id"])
            for model_id, purpose, ids in self.predictions:
                for i in ids:
                    w.writerow([model_id, purpose, i])


# --------------------------------------------------------------------------
# building blocks


def fit_predict_lstm(train: Panel, target: Panel, hyper: LstmHyper, seed: int, ratio: int,
                     audit: AuditLog | None = None, model_id: str = "", purpose: str = "") -> dict[int, float]:
    """Standardize on ``train``, under-sample it, fit one LSTM and score ``target``."""
    std = fit_standardizer(train)
    tr = undersample(apply_standardizer(std, train), ratio, child_seed(seed, "lstm_undersample"))
    model = lstm_mod.train_lstm(tr.rfm, tr.labels(), replace(hyper, seed=child_seed(seed, "lstm")))
    tgt = apply_standardizer(std, target)
    if audit is not None:
        audit.record_training(model_id, tr.ids)
        audit.record_prediction(model_id, purpose, tgt.ids)
    probs = lstm_mod.predict_proba(model, tgt.rfm)
    return {int(i): float(p) for i, p in zip(tgt.ids, probs)}


def oof_lstm_probabilities(train_split: Panel, hyper: LstmHyper, stack_k: int, seed: int,
                           ratio: int = 2, audit: AuditLog | None = None,
                           tag: str = "oof") -> dict[int, float]:
    """Out-of-fold LSTM probability for every customer of ``train_split``.

    Each held-out stratified fold is scored by an LSTM fit on the other
    ``stack_k - 1`` folds only.
    """
    folds = stratified_kfold(train_split, stack_k, child_seed(seed, "stack_split"))
    out: dict[int, float] = {}
    for j in range(stack_k):
        tr, ho = folds.split(train_split, j)
        if ho.n_churners == 0:
            raise ValueError(f"stacking fold {j} has no churners")
        out.update(fit_predict_lstm(tr, ho, hyper, child_seed(seed, "lstm", j), ratio, audit,
                                    f"{tag}/stack{j}", "stacked"))
    return out


def test_probabilities(train_split: Panel, test_split: Panel, hyper: LstmHyper, seed: int,
                       ratio: int = 2, audit: AuditLog | None = None, tag: str = "test") -> dict[int, float]:
    """Score ``test_split`` with one LSTM fit on the whole (under-sampled) training split."""
    return fit_predict_lstm(train_split, test_split, hyper, child_seed(seed, "lstm", 999), ratio, audit,
                            f"{tag}/full", "test")


test_probabilities.__test__ = False  # not a pytest test despite the name


def _labels_for(panel: Panel, ids: Sequence[int]) -> np.ndarray:
    lab = dict(zip(panel.ids.tolist(), panel.labels().tolist()))
    return np.array([lab[int(i)] for i in ids])


def logit_scores(train: Panel, target: Panel, features: FeatureSpec, c_values: Sequence[float],
                 seed: int, config: CvConfig, train_probs: Mapping[int, float] | None = None,
                 target_probs: Mapping[int, float] | None = None) -> dict[float, np.ndarray]:
    """Scores of ``target`` rows (panel order) for a logistic fit per ``C``.

    Feature scaling is fit on the full training split; the fit itself uses
    the under-sampled rows.
    """
    ftr = build_feature_matrix(train, features, train_probs, config.quarter)
    scaler = fit_column_scaler(ftr)
    ftr = scaler.apply(ftr)
    ftg = scaler.apply(build_feature_matrix(target, features, target_probs, config.quarter))
    kept = undersample(train, config.undersample_ratio, child_seed(seed, "undersample")).ids
    xs = rows_for(ftr, kept)
    ys = _labels_for(train, kept)
    out = {}
    for C in c_values:
        model = fit_l1_logistic(xs, ys, C)
        out[C] = logit_proba(model, ftg)
    return out


def _with_agg_option(spec: FeatureSpec, config: CvConfig) -> FeatureSpec:
    return replace(spec, agg_with_diff=config.agg_with_diff)


# --------------------------------------------------------------------------
# selection rules


@dataclass(frozen=True)
class TuneResult:
    best: Hashable
    mean_aucs: tuple[float, ...]
    grid: tuple


def argmax_first(values: Sequence[float]) -> int:
    """Index of the largest value; the earliest one wins ties."""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def select_reported_model(chosen: Sequence[Hashable], aucs: Sequence[float]) -> tuple[Hashable, str]:
    """Pick the hyperparameter set to report across outer folds.

    The most frequent set wins (ties: higher mean AUC over the folds that
    chose it); when every fold chose a different set, the one with the
    highest outer AUC wins.  Returns ``(set, "majority" | "best-AUC")``.
    """
    if len(chosen) != len(aucs) or not chosen:
        raise ValueError("need one AUC per chosen set")
    counts = Counter(chosen)
    distinct = list(dict.fromkeys(chosen))
    mean_auc = {h: float(np.mean([a for c, a in zip(chosen, aucs) if c == h])) for h in distinct}
    scores = [(counts[h], mean_auc[h]) for h in distinct]
    best = distinct[max(range(len(distinct)), key=lambda i: (scores[i], -i))]
    return best, ("majority" if counts[best] > 1 else "best-AUC")


# --------------------------------------------------------------------------
# experiment


@dataclass(frozen=True)
class SpecResult:
    spec: ModelSpec
    fold_reports: tuple[MetricReport, ...]
    mean: MetricReport
    chosen: tuple[str, ...]          # per outer fold, as labels
    tuned_aucs: tuple[float, ...]    # outer AUC of each fold's own choice
    reported: str
    reason: str


@dataclass
class ExperimentResult:
    results: list[SpecResult]
    config: CvConfig
    audit: AuditLog

    def by_key(self, key: str) -> SpecResult:
        for r in self.results:
            if r.spec.key == key:
                return r
        raise KeyError(key)

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "report.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "key", "AUC", "Lift", "EMPC", "hyperparameters", "selection"])
            for r in self.results:
                w.writerow([r.spec.label, r.spec.key, repr(r.mean.auc), repr(r.mean.lift10),
                            repr(r.mean.empc), r.reported, r.reason])
        with open(directory / "folds.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["key", "outer_fold", "chosen", "chosen_auc", "reported", "AUC", "Lift", "EMPC"])
            for r in self.results:
                for k, rep in enumerate(r.fold_reports):
                    w.writerow([r.spec.key, k + 1, r.chosen[k], repr(r.tuned_aucs[k]), r.reported,
                                repr(rep.auc), repr(rep.lift10), repr(rep.empc)])
        curves_dir = directory / "lift_curves"
        curves_dir.mkdir(exist_ok=True)
        from .metrics import write_lift_curve_csv
        for k in range(self.config.outer_k):
            write_lift_curve_csv(curves_dir / f"outer_fold_{k + 1}.csv",
                                 {r.spec.label: r.fold_reports[k].lift_curve for r in self.results})
        self.audit.write(directory)


def _c_label(C: float) -> str:
    return f"C={C:g}"


class _Experiment:
    """State for one run: grids, seeds, audit log and caches of LSTM outputs."""

    def __init__(self, panel: Panel, specs, c_grid, lstm_grid, config: CvConfig, empc_params: EmpcParams):
        self.panel = panel
        self.specs = specs
        self.c_grid = tuple(c_grid)
        self.lstm_grid = tuple(lstm_grid)
        self.config = config
        self.empc_params = empc_params
        self.audit = AuditLog()
        self.ratio = config.undersample_ratio
        self._lstm_probs: dict[tuple, dict[int, float]] = {}

    def seed(self, stage: str, *path: int) -> int:
        return child_seed(self.config.master_seed, stage, *path)

    def _full_probs(self, o: int, i: int, g: int, train: Panel, target: Panel) -> dict[int, float]:
        """LSTM (grid point ``g``) fit on ``train`` scoring ``target``; ``i = -1`` is the outer level.

        Cached, so the LSTM-only model, the inner tuning and the stacked
        specs share one fit per (split, grid point).
        """
        key = (o, i, g)
        if key not in self._lstm_probs:
            purpose = "test" if i < 0 else "inner-validation"
            self._lstm_probs[key] = fit_predict_lstm(
                train, target, self.lstm_grid[g], self.seed("lstm", o, i, g), self.ratio, self.audit,
                f"outer{o + 1}/" + ("full" if i < 0 else f"inner{i + 1}") + f"/grid{g}", purpose)
        return self._lstm_probs[key]

    def _stack(self, o: int, i: int, g: int, train: Panel, target: Panel):
        """(OOF probabilities for ``train``, probabilities for ``target``)."""
        key = (o, i, g, "oof")
        if key not in self._lstm_probs:
            tag = f"outer{o + 1}/" + ("full" if i < 0 else f"inner{i + 1}") + f"/grid{g}"
            self._lstm_probs[key] = oof_lstm_probabilities(
                train, self.lstm_grid[g], self.config.stack_k, self.seed("stack_split", o, i, g),
                self.ratio, self.audit, tag)
        return self._lstm_probs[key], self._full_probs(o, i, g, train, target)

    def run(self) -> ExperimentResult:
        cfg = self.config
        outer = stratified_kfold(self.panel, cfg.outer_k, self.seed("outer_split"))
        per_spec: dict[str, dict] = {s.key: {"chosen": [], "scores": [], "labels": []} for s in self.specs}
        need_lstm = any(s.uses_lstm for s in self.specs)

        for o in range(cfg.outer_k):
            train, test = outer.split(self.panel, o)
            inner = stratified_kfold(train, cfg.inner_k, self.seed("inner_split", o))
            y_test = test.labels()
            log.info("outer fold %d: %d train / %d test", o + 1, len(train), len(test))

            lstm_choice = None
            lstm_test_by_grid: dict[int, np.ndarray] = {}
            if need_lstm:
                lstm_choice, lstm_aucs = self.tune_lstm(o, train, inner)
                g = lstm_choice
                lstm_test_by_grid[g] = self._lstm_test(o, g, train, test)
            for spec in self.specs:
                rec = per_spec[spec.key]
                rec["labels"].append(y_test)
                if spec.learner == "lstm":
                    rec["chosen"].append(lstm_choice)
                    rec["scores"].append(lstm_test_by_grid)
                    rec["tune"] = lstm_aucs
                    continue
                feats = _with_agg_option(spec.features, cfg)
                best_c, _ = self.tune_logit(o, train, inner, feats, lstm_choice)
                tr_p = te_p = None
                if feats.use_lstm_prob:
                    tr_p, te_p = self._stack(o, -1, lstm_choice, train, test)
                scores = logit_scores(train, test, feats, self.c_grid, self.seed("undersample", o),
                                      cfg, tr_p, te_p)
                rec["chosen"].append(best_c)
                rec["scores"].append(scores)

        results = []
        for spec in self.specs:
            rec = per_spec[spec.key]
            chosen = rec["chosen"]
            tuned_aucs = [auc(rec["scores"][o][chosen[o]], rec["labels"][o]) for o in range(cfg.outer_k)]
            reported, reason = select_reported_model(chosen, tuned_aucs)
            reports = []
            for o in range(cfg.outer_k):
                if spec.learner == "lstm" and reported not in rec["scores"][o]:
                    train, test = outer.split(self.panel, o)
                    rec["scores"][o][reported] = self._lstm_test(o, reported, train, test)
                reports.append(evaluate(rec["scores"][o][reported], rec["labels"][o], self.empc_params))
            label = (self.lstm_grid[reported].label() if spec.learner == "lstm" else _c_label(reported))
            chosen_labels = tuple(self.lstm_grid[c].label() if spec.learner == "lstm" else _c_label(c)
                                  for c in chosen)
            results.append(SpecResult(spec, tuple(reports), mean_report(reports), chosen_labels,
                                      tuple(tuned_aucs), label, reason))
        return ExperimentResult(results, cfg, self.audit)

    def _lstm_test(self, o: int, g: int, train: Panel, test: Panel) -> np.ndarray:
        probs = self._full_probs(o, -1, g, train, test)
        return np.array([probs[int(i)] for i in test.ids])

    def tune_lstm(self, o: int, train: Panel, inner: FoldAssignment) -> tuple[int, tuple[float, ...]]:
        if len(self.lstm_grid) == 1:
            return 0, (float("nan"),)
        aucs = []
        for g in range(len(self.lstm_grid)):
            fold_aucs = []
            for i in range(self.config.inner_k):
                itr, iva = inner.split(train, i)
                probs = self._full_probs(o, i, g, itr, iva)
                fold_aucs.append(auc([probs[int(c)] for c in iva.ids], iva.labels()))
            aucs.append(float(np.mean(fold_aucs)))
        return argmax_first(aucs), tuple(aucs)

    def tune_logit(self, o: int, train: Panel, inner: FoldAssignment, feats: FeatureSpec,
                   lstm_choice: int | None) -> tuple[float, tuple[float, ...]]:
        if len(self.c_grid) == 1:
            return self.c_grid[0], (float("nan"),)
        per_c = np.zeros((self.config.inner_k, len(self.c_grid)))
        for i in range(self.config.inner_k):
            itr, iva = inner.split(train, i)
            tr_p = va_p = None
            if feats.use_lstm_prob:
                tr_p, va_p = self._stack(o, i, lstm_choice, itr, iva)
            scores = logit_scores(itr, iva, feats, self.c_grid, self.seed("undersample", o, i),
                                  self.config, tr_p, va_p)
            y = iva.labels()
            per_c[i] = [auc(scores[C], y) for C in self.c_grid]
        means = per_c.mean(axis=0)
        return self.c_grid[argmax_first(list(means))], tuple(float(m) for m in means)


def tune_inner(train_split: Panel, spec: ModelSpec, grid: Sequence, config: CvConfig,
               outer_index: int = 0, lstm_hyper: LstmHyper | None = None) -> TuneResult:
    """Grid point with the best mean inner-validation AUC (first one on ties).

    ``grid`` holds ``C`` values for logistic specs and :class:`LstmHyper`
    points for the LSTM spec; ``lstm_hyper`` is the frozen LSTM setting used
    to build stacked probabilities.
    """
    exp = _Experiment(train_split, (spec,), grid if spec.learner == "logit" else C_GRID,
                      grid if spec.learner == "lstm" else ([lstm_hyper] if lstm_hyper else []),
                      config, EmpcParams())
    inner = stratified_kfold(train_split, config.inner_k, exp.seed("inner_split", outer_index))
    if spec.learner == "lstm":
        g, aucs = exp.tune_lstm(outer_index, train_split, inner)
        return TuneResult(grid[g], aucs, tuple(grid))
    feats = _with_agg_option(spec.features, config)
    if feats.use_lstm_prob and lstm_hyper is None:
        raise ValueError("stacked specs need the tuned LSTM hyperparameters")
    best, aucs = exp.tune_logit(outer_index, train_split, inner, feats, 0 if lstm_hyper else None)
    return TuneResult(best, aucs, tuple(grid))


def run_experiment(panel: Panel, specs: Sequence[ModelSpec] = MODEL_SPECS, c_grid=C_GRID,
                   lstm_grid: Sequence[LstmHyper] = SMOKE_LSTM_GRID, config: CvConfig = CvConfig(),
                   empc_params: EmpcParams = EmpcParams()) -> ExperimentResult:
    specs = tuple(specs)
    if not specs:
        raise ValueError("no model specs selected")
    if panel.n_churners < MIN_CV_CHURNERS:
        raise ValueError(f"panel has {panel.n_churners} churners; nested cross-validation needs at least "
                         f"{MIN_CV_CHURNERS} (raise the customer count or the churn rate)")
    if any(s.uses_lstm for s in specs) and not lstm_grid:
        raise ValueError("LSTM specs selected but the LSTM grid is empty")
    exp = _Experiment(panel, specs, c_grid, lstm_grid, config, empc_params)
    result = exp.run()
    result.audit.check()
    return result


def improvement(new: float, base: float) -> float:
    """Relative gain of ``new`` over ``base``."""
    return (new - base) / base


def config_dict(config: CvConfig) -> dict:
    return asdict(config)


def write_json(path: str | Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
