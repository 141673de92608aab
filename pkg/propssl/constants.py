# tolerances
SIMPLEX_ATOL = 1e-9
PROPORTION_EPSILON = 1e-8
ROUND_HALF_UP_SLACK = 1e-9

# published (gamma, beta, n_max) cells, the minor class keeps 9 samples in each
LONGTAIL_GRID = (
    (10.0, 0.02, 90),
    (20.0, 0.04, 180),
    (50.0, 0.10, 450),
    (100.0, 0.20, 900),
)

UNLABELED_PROFILES = ("matched", "uniform", "reversed")
PROPORTION_BRANCHES = ("weak", "strong")
DATA_SOURCES = ("synthetic", "csv", "split")

# method variants: (lambda_prop is used, target is perturbed)
METHODS = {
    "baseline": (False, False),
    "prop": (True, False),
    "prop_hg": (True, True),
}

# rng streams, one per consumer so that switching a feature on
# does not shift the random numbers drawn by the others
STREAM_POOL = 1
STREAM_SPLIT = 2
STREAM_INIT = 3
STREAM_BATCH = 4
STREAM_AUGMENT = 5
STREAM_PROPORTION = 6

ENCODING = "utf-8"
CSV_LINETERMINATOR = "\n"

PARTITIONS = ("labeled", "unlabeled", "validation", "test")
SPLIT_MANIFEST_FILE = "split_manifest.txt"
RESOLVED_CONFIG_FILE = "resolved_config.txt"
METRICS_FILE = "metrics.csv"
ITERATIONS_FILE = "iterations.csv"
SUMMARY_FILE = "summary.txt"
FAILURE_FILE = "numerical_failure.txt"
CHECKPOINT_BEST = "checkpoint_best"
CHECKPOINT_FINAL = "checkpoint_final"
PARAMS_SUFFIX = ".params.txt"
MANIFEST_SUFFIX = ".manifest.txt"
TEMPFILE_SUFFIX = ".tmp"

METRICS_BASE_COLUMNS = (
    "epoch",
    "loss_sup",
    "loss_cons",
    "loss_prop",
    "mask_rate",
    "lr",
    "val_bal_acc",
    "test_bal_acc",
)
# per class columns, suffixed with the 1-based class number
METRICS_CLASS_PREFIXES = ("est_prop", "pl_recall", "argmax_prop", "test_recall")
ITERATION_COLUMNS = (
    "epoch",
    "step",
    "lr",
    "loss_sup",
    "loss_cons",
    "loss_prop",
    "loss_total",
    "mask_rate",
)
# sampled proportion target of the iteration, one column per class
ITERATION_TARGET_PREFIX = "target"
SUMMARY_METRICS = (
    "best_epoch",
    "best_val_bal_acc",
    "test_bal_acc",
    "final_test_bal_acc",
    "deviation_l1",
    "deviation_minor",
    "pl_recall_major",
    "pl_recall_minor",
)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4
