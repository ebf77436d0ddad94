"""Parameter fitting: per-group gradient descent, augmentation and pipelines."""

from .gd import FitContext, GDSettings, ParameterBounds, ThetaTable, gd_fit, simulate_outcomes
from .kfold import FoldSplit, kfold_split
from .knn import knn_predict
from .pipelines import select_pipeline
from .procedure import FitConfig, FitReport, evaluate, fit_full, predict
from .stats import paired_ttest_onetail, rmae, welch_ttest_twotail
from .synth import synthesize_samples

__all__ = [
    "FitConfig", "FitContext", "FitReport", "FoldSplit", "GDSettings", "ParameterBounds", "ThetaTable",
    "evaluate", "fit_full", "gd_fit", "kfold_split", "knn_predict", "paired_ttest_onetail", "predict",
    "rmae", "select_pipeline", "simulate_outcomes", "synthesize_samples", "welch_ttest_twotail",
]
