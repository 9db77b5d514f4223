"""Change-point detection and localization for conditional outcome models.

The package tests whether the conditional law of an outcome given
high-dimensional covariates changes across discrete time, using a
conditional randomization test over time labels: counterfeit labels are
resampled from a learned p(R|X), a divergence statistic is recomputed per
resample, and the observed statistic is ranked among the counterfeits.
The distilled variants replace per-resample high-dimensional refits with
cheap contrasts of a label-masked mixture model fitted once.
"""

from .crt import StatisticFn, TestResult, localize, run_crt
from .dataset import (
    CandidateTau,
    LabeledDataset,
    UnlabeledDataset,
    cumulative_counts,
    load_labeled_csv,
    load_unlabeled_csv,
    split_at,
    write_labeled_csv,
    write_unlabeled_csv,
)
from .glm import (
    LinearFit,
    MultinomialFit,
    fit_lasso,
    fit_logistic,
    fit_multinomial,
    fit_ols_ridge,
)
from .mixture import (
    Distillation,
    MixtureFit,
    distill_mean,
    distill_repr,
    fit_lmm,
    mixture_loglik,
    swap_components,
)
from .rx import TimeLabelModel, class_probs, learn_rx, sample_labels
from .simlab import (
    ExperimentReport,
    MethodParams,
    ScenarioConfig,
    gen_pseudo,
    gen_scenario1,
    gen_scenario2,
    gen_scenario3,
    make_config,
    run_experiment,
    runtime_comparison,
)
from .statistics import (
    LadMeanConfig,
    MendConfig,
    STATISTIC_NAMES,
    lad_mean_statistic,
    lad_mixing_coefficient,
    lad_repr_statistic,
    mend_statistic,
    ols_cusum,
)

__version__ = "0.1.0"
