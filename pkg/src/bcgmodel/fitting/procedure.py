"""The three-step, k-fold fitting procedure and its report.

Per fold: (1) per-group gradient descent on the train set; (2) kNN-gated
synthetic augmentation followed by a warm-started refit, kept only when a
paired one-tailed t-test on the test set says it helps; (3) a residual
pipeline chosen on the validate set after merging train, synthetic and test
records. The personalized predictor averages the folds.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..demographics import CELL_VOLUME_MM3, N_GROUPS, CapacityCalibration, GroupId
from ..errors import BCGError, DomainError, NumericalError
from ..model import EFFECTOR0, MU_B
from ..records import PatientRecord, outcomes
from ..solver import SolverConfig
from .gd import (
    FIT_SOLVER,
    FitContext,
    GDSettings,
    ParameterBounds,
    ThetaTable,
    gd_fit,
    simulate_outcomes,
)
from .kfold import VALIDATE_FRACTION, kfold_split
from .knn import DEFAULT_K_GRID
from .pipelines import DEFAULT_CANDIDATES, Identity, Pipeline, pipeline_from_dict, select_pipeline
from .stats import paired_ttest_onetail, relative_errors, rmae
from .synth import synthesize_samples

MODEL_PERSONALIZED = "personalized"
MODEL_POOLED = "non-personalized"
MODEL_ORIGINAL = "original-4eq"


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters of :func:`fit_full`.

    ``augment=False`` skips steps 2 and 3, leaving plain per-fold gradient
    descent with an identity pipeline. ``n_synthetic=None`` draws
    ``synthetic_fraction`` times the fold's train size.
    """

    k: int = 5
    seed: int = 0
    gd: GDSettings = field(default_factory=GDSettings)
    bound_factor: float = 10.0
    refit_iters: int = 20
    n_synthetic: int | None = None
    synthetic_fraction: float = 0.25
    significance: float = 0.05
    retry_cap: int = 5
    k_grid: tuple = DEFAULT_K_GRID
    candidates: tuple = DEFAULT_CANDIDATES
    validate_fraction: float = VALIDATE_FRACTION
    augment: bool = True
    baselines: bool = True
    effector0: float = EFFECTOR0
    mu_B: float = MU_B
    solver: SolverConfig = FIT_SOLVER
    calibration: CapacityCalibration = field(default_factory=CapacityCalibration)
    cell_volume: float = CELL_VOLUME_MM3

    def __post_init__(self):
        if self.k < 2:
            raise DomainError(f"k must be >= 2, got {self.k}")
        if not 0 < self.significance < 1:
            raise DomainError("significance level must lie in (0, 1)")
        if self.retry_cap < 1 or self.refit_iters < 0:
            raise DomainError("retry cap must be >= 1 and refit iterations >= 0")
        if self.n_synthetic is not None and self.n_synthetic < 0:
            raise DomainError("n_synthetic must be >= 0")
        if not self.synthetic_fraction >= 0:
            raise DomainError("synthetic fraction must be >= 0")
        if not self.candidates:
            raise DomainError("at least one pipeline candidate is required")

    def context(self, model: str = "bcg6") -> FitContext:
        return FitContext(self.effector0, self.mu_B, self.solver, model)

    def bounds(self) -> ParameterBounds:
        return ParameterBounds.around(factor=self.bound_factor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k_grid"] = list(self.k_grid)
        d["candidates"] = list(self.candidates)
        return d


def _sub_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class RefitAttempt:
    synthesis: dict
    groups: list[int]
    t: float
    p: float
    test_rmae: float
    accepted: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class FoldResult:
    index: int
    theta: ThetaTable
    pipeline: Pipeline
    trained_groups: list[int]
    step1: dict
    step1_test_rmae: float
    attempts: list[RefitAttempt]
    kept: str
    n_synthetic: int
    selection: dict
    test_rmae: float
    validate_rmae: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "theta": self.theta.to_dict(),
            "pipeline": self.pipeline.to_dict(),
            "pipeline_spec": self.pipeline.spec,
            "trained_groups": self.trained_groups,
            "step1": {str(g): v for g, v in sorted(self.step1.items())},
            "step1_test_rmae": self.step1_test_rmae,
            "refit_attempts": [a.to_dict() for a in self.attempts],
            "kept": self.kept,
            "n_synthetic": self.n_synthetic,
            "selection": self.selection,
            "test_rmae": self.test_rmae,
            "validate_rmae": self.validate_rmae,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldResult":
        return cls(
            index=int(d["index"]), theta=ThetaTable.from_dict(d["theta"]),
            pipeline=pipeline_from_dict(d["pipeline"]), trained_groups=[int(g) for g in d["trained_groups"]],
            step1={int(g): v for g, v in d["step1"].items()}, step1_test_rmae=float(d["step1_test_rmae"]),
            attempts=[RefitAttempt(**a) for a in d["refit_attempts"]], kept=d["kept"],
            n_synthetic=int(d["n_synthetic"]), selection=d["selection"], test_rmae=float(d["test_rmae"]),
            validate_rmae=float(d["validate_rmae"]),
        )


@dataclass
class FitReport:
    folds: list[FoldResult]
    k: int
    seed: int
    n_records: int
    context: FitContext
    config: dict = field(default_factory=dict)
    group_test_rmae: list = field(default_factory=list)
    group_test_counts: list = field(default_factory=list)
    cv_test_rmae: float = float("nan")
    baselines: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.folds) != self.k:
            raise DomainError(f"report has {len(self.folds)} folds but k = {self.k}")

    def to_dict(self) -> dict:
        ctx = self.context
        return {
            "k": self.k,
            "seed": self.seed,
            "n_records": self.n_records,
            "context": {"effector0": ctx.effector0, "mu_B": ctx.mu_B, "model": ctx.model,
                        "solver": asdict(ctx.solver)},
            "config": self.config,
            "folds": [f.to_dict() for f in self.folds],
            "group_test_rmae": self.group_test_rmae,
            "group_test_counts": self.group_test_counts,
            "cv_test_rmae": self.cv_test_rmae,
            "baselines": {name: {"model": b["model"], "theta": b["theta"].to_dict(), "fit": b["fit"]}
                          for name, b in sorted(self.baselines.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        c = d["context"]
        ctx = FitContext(float(c["effector0"]), float(c["mu_B"]), SolverConfig(**c["solver"]), c["model"])
        return cls(
            folds=[FoldResult.from_dict(f) for f in d["folds"]], k=int(d["k"]), seed=int(d["seed"]),
            n_records=int(d["n_records"]), context=ctx, config=d.get("config", {}),
            group_test_rmae=d.get("group_test_rmae", []), group_test_counts=d.get("group_test_counts", []),
            cv_test_rmae=float(d.get("cv_test_rmae", float("nan"))),
            baselines={name: {"model": b["model"], "theta": ThetaTable.from_dict(b["theta"]), "fit": b["fit"]}
                       for name, b in d.get("baselines", {}).items()},
        )


def _fold_predict(theta: ThetaTable, pipeline: Pipeline, records, ctx: FitContext) -> np.ndarray:
    ode = simulate_outcomes(theta, records, ctx)
    return pipeline.correct(records, ode)


def _fit_fold(fi, fold, records, config: FitConfig, ctx: FitContext) -> FoldResult:
    bounds = config.bounds()
    train = [records[i] for i in fold.train]
    test = [records[i] for i in fold.test]
    validate = [records[i] for i in fold.validate]
    theta0 = ThetaTable.uniform(bounds.midpoint())
    theta1, rep1 = gd_fit(train, theta0, bounds, config.gd, ctx)
    step1 = {g: r.to_dict() for g, r in rep1.items()}
    trained = sorted(rep1)
    obs_test = outcomes(test)
    err1 = relative_errors(simulate_outcomes(theta1, test, ctx), obs_test) if test else np.zeros(0)
    step1_rmae = float(err1.mean()) if err1.size else float("nan")

    if not config.augment:
        return FoldResult(fi, theta1, Identity(), trained, step1, step1_rmae, [], "step1", 0,
                          {"selected": "identity", "validate_rmae": {}, "failures": {}},
                          step1_rmae, _safe_rmae(theta1, Identity(), validate, ctx))

    n_syn = config.n_synthetic if config.n_synthetic is not None else int(
        round(config.synthetic_fraction * len(train)))
    refit_settings = replace(config.gd, max_iters=config.refit_iters)
    attempts: list[RefitAttempt] = []
    best_refit = None  # (mean test error, theta, synthetic records)
    kept_theta, kept_syn, kept = theta1, [], "step1"
    for a in range(config.retry_cap):
        syn = synthesize_samples(train, theta1, n_syn, _sub_seed(config.seed, fi, a, 0x5359), ctx,
                                 config.k_grid, config.calibration, config.cell_volume)
        if not syn.records or len(test) < 2:
            attempts.append(RefitAttempt(syn.summary(), [], 0.0, 1.0, step1_rmae, False))
            break
        groups = sorted({r.group.index for r in syn.records})
        theta2, _ = gd_fit(train + syn.records, theta1, bounds, refit_settings, ctx, groups=groups)
        err2 = relative_errors(simulate_outcomes(theta2, test, ctx), obs_test)
        tt = paired_ttest_onetail(err1, err2, on_degenerate="guard")
        ok = tt.p < config.significance
        attempts.append(RefitAttempt(syn.summary(), groups, float(tt.t), float(tt.p), float(err2.mean()), ok))
        if best_refit is None or err2.mean() < best_refit[0]:
            best_refit = (float(err2.mean()), theta2, syn.records)
        if ok:
            kept_theta, kept_syn, kept = theta2, syn.records, "refit"
            break
    if kept == "step1" and best_refit is not None:
        # No significant refit within the cap: keep whichever did better on test.
        if best_refit[0] < step1_rmae:
            kept_theta, kept = best_refit[1], "refit-best"
        kept_syn = best_refit[2]

    merged = train + list(kept_syn) + test
    sel = select_pipeline(config.candidates, merged, simulate_outcomes(kept_theta, merged, ctx),
                          validate, simulate_outcomes(kept_theta, validate, ctx))
    pipe = sel.pipeline
    test_rmae = rmae(_fold_predict(kept_theta, pipe, test, ctx), obs_test) if test else float("nan")
    return FoldResult(fi, kept_theta, pipe, trained, step1, step1_rmae, attempts, kept, len(kept_syn),
                      sel.summary(), float(test_rmae), float(sel.scores[sel.spec]))


def _safe_rmae(theta, pipe, recs, ctx) -> float:
    if not recs:
        return float("nan")
    return float(rmae(_fold_predict(theta, pipe, recs, ctx), outcomes(recs)))


def _with_fold(exc: BCGError, fold: int) -> BCGError:
    msg = f"fold {fold}: {exc}"
    try:
        return type(exc)(msg)
    except TypeError:
        # Subclasses with extra constructor arguments fall back to their base.
        base = NumericalError if isinstance(exc, NumericalError) else BCGError
        return base(msg)


def fit_baselines(records, config: FitConfig) -> dict:
    """Pooled (non-personalized) six-population and original four-population fits."""
    bounds = config.bounds()
    out = {}
    for name, model in ((MODEL_POOLED, "bcg6"), (MODEL_ORIGINAL, "original4")):
        ctx = config.context(model)
        theta, rep = gd_fit(records, ThetaTable.uniform(bounds.midpoint(), pooled=True), bounds, config.gd, ctx)
        out[name] = {"model": model, "theta": theta, "fit": rep[0].to_dict()}
    return out


def fit_full(records, config: FitConfig | None = None) -> FitReport:
    config = config or FitConfig()
    records = list(records)
    if len(records) < 3 * config.k:
        raise DomainError(f"need at least {3 * config.k} records for k = {config.k}, got {len(records)}")
    ctx = config.context()
    split = kfold_split(records, config.k, config.seed, config.validate_fraction)
    folds = []
    for fi, fold in enumerate(split.folds):
        try:
            folds.append(_fit_fold(fi, fold, records, config, ctx))
        except BCGError as exc:
            raise _with_fold(exc, fi) from exc

    err = np.full(len(records), np.nan)
    for f, fold in zip(folds, split.folds):
        test = [records[i] for i in fold.test]
        if test:
            err[fold.test] = relative_errors(_fold_predict(f.theta, f.pipeline, test, ctx), outcomes(test))
    groups = np.array([r.group.index for r in records])
    g_rmae, g_n = [], []
    for g in range(N_GROUPS):
        m = groups == g
        g_n.append(int(m.sum()))
        g_rmae.append(float(err[m].mean()) if m.any() else None)
    report = FitReport(folds, config.k, config.seed, len(records), ctx, config.to_dict(),
                       g_rmae, g_n, float(np.nanmean(err)))
    if config.baselines:
        report.baselines = fit_baselines(records, config)
    return report


@dataclass
class Prediction:
    values: np.ndarray
    per_fold: np.ndarray
    low_confidence: np.ndarray


def predict(report: FitReport, records) -> Prediction:
    """Fold-averaged personalized prediction of ``T(t_f)``.

    A record whose group was absent from every fold's training data is still
    predicted (its group keeps the starting rates and the pipeline
    extrapolates) but is flagged low-confidence.
    """
    records = list(records)
    if not report.folds:
        raise DomainError("report has no folds")
    per = np.array([_fold_predict(f.theta, f.pipeline, records, report.context) for f in report.folds])
    seen = set()
    for f in report.folds:
        seen.update(f.trained_groups)
    low = np.array([r.group.index not in seen for r in records], dtype=bool)
    return Prediction(per.mean(axis=0), per, low)


def predict_baseline(report: FitReport, name: str, records) -> np.ndarray:
    if name not in report.baselines:
        raise DomainError(f"report has no {name!r} baseline; refit with baselines enabled")
    b = report.baselines[name]
    ctx = replace(report.context, model=b["model"])
    return simulate_outcomes(b["theta"], list(records), ctx)


@dataclass
class Comparison:
    rmae: dict
    errors: dict
    tests: dict
    n: int

    def to_dict(self) -> dict:
        return {"n": self.n, "rmae": self.rmae, "tests": self.tests}

    def table(self) -> str:
        lines = ["model,rmae,sd"]
        for name in (MODEL_PERSONALIZED, MODEL_POOLED, MODEL_ORIGINAL):
            e = self.errors[name]
            lines.append(f"{name},{float(np.mean(e))!r},{float(np.std(e, ddof=1)) if e.size > 1 else 0.0!r}")
        lines.append("")
        lines.append("better,worse,t,p")
        for key, t in self.tests.items():
            a, b = key.split(" < ")
            lines.append(f"{a},{b},{t['t']!r},{t['p']!r}")
        return "\n".join(lines) + "\n"


def evaluate(report: FitReport, records) -> Comparison:
    """Personalized vs non-personalized vs original four-population model.

    Each pairwise test is the paired one-tailed test that the better-ranked
    model has smaller per-patient relative error.
    """
    records = list(records)
    if len(records) < 2:
        raise DomainError("evaluation needs at least two records")
    obs = outcomes(records)
    errs = {
        MODEL_PERSONALIZED: relative_errors(predict(report, records).values, obs),
        MODEL_POOLED: relative_errors(predict_baseline(report, MODEL_POOLED, records), obs),
        MODEL_ORIGINAL: relative_errors(predict_baseline(report, MODEL_ORIGINAL, records), obs),
    }
    tests = {}
    for better, worse in ((MODEL_PERSONALIZED, MODEL_POOLED), (MODEL_POOLED, MODEL_ORIGINAL),
                          (MODEL_PERSONALIZED, MODEL_ORIGINAL)):
        tt = paired_ttest_onetail(errs[worse], errs[better], on_degenerate="guard")
        tests[f"{better} < {worse}"] = {"t": float(tt.t), "p": float(tt.p), "df": float(tt.df)}
    return Comparison({k: float(np.mean(v)) for k, v in errs.items()}, errs, tests, len(records))


def group_error_table(report: FitReport) -> str:
    """Per-group cross-validated test RMAE laid out age band x gender by smoking x weight."""
    from ..demographics import AGE_LABELS, Gender, Smoking, WeightClass

    cols = [(s, w) for s in Smoking for w in WeightClass]
    header = ["age_band", "gender"] + [f"{s.label}/{w.label}" for s, w in cols]
    lines = [",".join(header)]
    for a in range(len(AGE_LABELS)):
        for g in Gender:
            row = [AGE_LABELS[a], g.label]
            for s, w in cols:
                v = report.group_test_rmae[GroupId(a, g, s, w).index] if report.group_test_rmae else None
                row.append("NA" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v)))
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def recovered_rates(report: FitReport) -> np.ndarray:
    """Geometric mean over folds of each group's fitted rates, ``(72, 12)``."""
    logs = np.array([np.log(f.theta.rates) for f in report.folds])
    return np.exp(logs.mean(axis=0))


__all__ = [
    "Comparison", "FitConfig", "FitReport", "FoldResult", "Prediction", "PatientRecord",
    "evaluate", "fit_baselines", "fit_full", "group_error_table", "predict", "predict_baseline",
    "recovered_rates",
]
