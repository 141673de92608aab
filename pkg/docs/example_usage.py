from tempfile import TemporaryDirectory

from propssl import SplitSpec, TrainConfig, run_seeds
from propssl.trainer import method_config

# a small long-tailed cell: 3 classes, 40 samples in the largest one
spec = SplitSpec(
    n_classes=3, n_max=40, gamma=4, beta=0.25, val_per_class=5, test_per_class=5
)
config = TrainConfig(epochs=2, iters_per_epoch=5, labeled_batch=4, mu=2)

# labeled proportions perturbed by a hypergeometric draw each iteration
config = method_config(config, "prop_hg", lambda_prop=1.0)

results, summary = run_seeds(
    spec, config, seeds=[1, 2], source_options={"n_features": 4}
)
mean, std = summary["test_bal_acc"]
assert 0 <= mean <= 1
assert results[0].best_epoch <= config.epochs

# the same through the command line functions, written to a directory
with TemporaryDirectory() as tmpdir:
    from propssl.cli import cmd_sample_hg
    from propssl.config import parse_config

    experiment = parse_config(out=tmpdir, overrides=["sample_hg.draws=100"])
    written = cmd_sample_hg(experiment)
    assert any(path.endswith("pmf.csv") for path in written)
