"""Experiment commands behind the ``propssl`` command line.

Each command takes a resolved :class:`~propssl.config.ExperimentConfig`,
writes its results below ``config.output_dir`` and returns the paths it
wrote. Reruns with the same config overwrite their outputs with identical
bytes.
"""

import logging
import os
import posixpath
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import charts, hypergeom
from .config import ExperimentConfig
from .constants import (
    CHECKPOINT_BEST,
    CHECKPOINT_FINAL,
    FAILURE_FILE,
    ITERATIONS_FILE,
    METHODS,
    METRICS_BASE_COLUMNS,
    METRICS_FILE,
    RESOLVED_CONFIG_FILE,
    SUMMARY_FILE,
)
from .exceptions import ConfigError, DataError, NumericalError
from .hypergeom import ClassCounts
from .ltdata import AbstractDataSource, export_split
from .nn import save_params
from .storage import Storage
from .trainer import (
    RunJob,
    RunResult,
    aggregate,
    execute_jobs,
    iteration_columns,
    method_config,
    metrics_columns,
    seed_jobs,
)
from .utils import make_rng, mean_std, parse_floats

STD_DDOF = 0


def prepare_output(config: ExperimentConfig) -> Storage:
    storage = Storage(config.output_dir)
    storage.write_text(RESOLVED_CONFIG_FILE, config.dumps())
    return storage


def _percent(mean: float, std: float) -> str:
    if not np.isfinite(mean):
        return "n/a"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def cmd_split(config: ExperimentConfig) -> List[str]:
    """Write the partitions of every cell and seed to ``split/<cell>/seed_<s>``."""
    storage = prepare_output(config)
    source = AbstractDataSource.get_instance(
        config.data.source, **config.data.source_options()
    )
    written = []
    for cell, spec in config.cells():
        for seed in config.sweep.seeds:
            split = source.build_split(replace(spec, seed=seed))
            target = storage.sub(f"split/{cell}/seed_{seed}")
            written += export_split(split, target)
            logging.info(
                "split %s seed %d: labeled=%s unlabeled=%s",
                cell,
                seed,
                split.class_counts_labeled.as_tuple(),
                split.class_counts_unlabeled.as_tuple(),
            )
    return written


def write_run(
    storage: Storage, result: RunResult, info: Dict[str, object], checkpoints: bool
) -> List[str]:
    """Metrics, per-iteration log, summary and checkpoints of one run."""
    K = len(result.true_unlabeled)
    seed = result.config.seed
    written = [
        storage.write_csv(
            METRICS_FILE,
            [m.as_row() for m in result.metrics],
            columns=metrics_columns(K),
        ),
        storage.write_csv(
            ITERATIONS_FILE, result.iterations, columns=iteration_columns(K)
        ),
    ]
    summary = dict(info)
    summary["seed"] = seed
    summary.update(result.summary())
    summary.update({f"config.{k}": v for k, v in result.config.as_dict().items()})
    written.append(storage.write_key_values(SUMMARY_FILE, summary))
    if checkpoints:
        iters = result.config.iters_per_epoch
        save_params(
            result.best_params,
            storage,
            CHECKPOINT_BEST,
            seed,
            result.best_epoch * iters,
        )
        save_params(
            result.final_params, storage, CHECKPOINT_FINAL, seed, result.final_step
        )
    return written


def _run_jobs(
    config: ExperimentConfig, storage: Storage, jobs: Sequence[RunJob]
) -> List[RunResult]:
    try:
        return execute_jobs(jobs, config.sweep.workers)
    except NumericalError as exc:
        run = exc.state.get("run")
        if run:
            failure = storage.sub(run).write_key_values(FAILURE_FILE, exc.state)
            logging.error("state of the failed step written to %s", failure)
        raise


def _jobs_for(
    config: ExperimentConfig, prefix: str, candidates: Dict[str, Sequence[float]]
) -> List[Tuple[dict, RunJob]]:
    """``(info, job)`` for every method, cell, lambda and seed."""
    result = []
    for method, lambdas in candidates.items():
        for cell, spec in config.cells():
            for lam in lambdas:
                train_config = method_config(config.train, method, lam)
                run_dir = f"{prefix}/{method}/{cell}"
                if prefix == "sweep":
                    run_dir += f"/lambda_{lam:g}"
                jobs = seed_jobs(
                    spec,
                    train_config,
                    config.sweep.seeds,
                    config.data.source,
                    config.data.source_options(),
                )
                for job in jobs:
                    info = {
                        "method": method,
                        "cell": cell,
                        "lambda_prop": train_config.lambda_prop,
                    }
                    tag = f"{run_dir}/seed_{job.config.seed}"
                    result.append((info, replace(job, tag=tag)))
    return result


def _execute(
    config: ExperimentConfig, storage: Storage, prefix: str, candidates: dict
) -> Tuple[List[Tuple[dict, RunResult]], List[str]]:
    pairs = _jobs_for(config, prefix, candidates)
    results = _run_jobs(config, storage, [job for _info, job in pairs])
    written = []
    for (info, job), result in zip(pairs, results):
        written += write_run(storage.sub(job.tag), result, info, config.checkpoints)
    return list(zip([info for info, _job in pairs], results)), written


def _group(runs: Sequence[Tuple[dict, RunResult]], *keys: str) -> Dict[tuple, list]:
    groups = {}
    for info, result in runs:
        groups.setdefault(tuple(info[k] for k in keys), []).append(result)
    return groups


def _accuracy_table(
    storage: Storage, name: str, cells: Sequence[str], cell_values: dict, title: str
) -> List[str]:
    """Rows are methods, columns are cells, entries mean ± std in percent."""
    methods = list(dict.fromkeys(method for method, _cell in cell_values))
    rows = []
    for method in methods:
        row = {"method": method}
        for cell in cells:
            mean, std = cell_values.get((method, cell), (float("nan"), float("nan")))
            row[cell] = _percent(mean, std)
        rows.append(row)
    columns = ["method"] + list(cells)
    svg = charts.table_svg(
        columns, [[row[c] for c in columns] for row in rows], title
    )
    return [
        storage.write_csv(f"{name}.csv", rows, columns=columns),
        storage.write_text(f"{name}.svg", svg),
    ]


def cmd_train(config: ExperimentConfig) -> List[str]:
    """Train every method on every cell and seed, then aggregate over seeds."""
    storage = prepare_output(config)
    candidates = {m: [config.train.lambda_prop] for m in config.sweep.methods}
    runs, written = _execute(config, storage, "runs", candidates)

    specs = dict(config.cells())
    rows, table = [], {}
    for (method, cell), results in _group(runs, "method", "cell").items():
        spec = specs[cell]
        for metric, (mean, std) in aggregate(results).items():
            rows.append(
                {
                    "method": method,
                    "cell": cell,
                    "gamma": spec.gamma,
                    "beta": spec.beta,
                    "n_max": spec.n_max,
                    "metric": metric,
                    "mean": mean,
                    "std": std,
                    "std_ddof": STD_DDOF,
                    "n_seeds": len(results),
                }
            )
        table[(method, cell)] = aggregate(results)["test_bal_acc"]
        logging.info(
            "%s %s: test balanced accuracy %s",
            method,
            cell,
            _percent(*table[(method, cell)]),
        )
    written.append(storage.write_csv("aggregate.csv", rows))
    written += _accuracy_table(
        storage,
        "accuracy_table",
        list(specs),
        table,
        "balanced test accuracy (%)",
    )
    return written


def select_lambda(
    lambdas: Sequence[float], val_means: Sequence[float]
) -> Optional[int]:
    """Index of the highest mean validation accuracy, first listed on ties.

    >>> select_lambda([0.25, 0.5, 1.0], [0.7, 0.8, 0.8])
    1
    """
    best = None
    for i, value in enumerate(val_means):
        if not np.isfinite(value):
            continue
        if best is None or value > val_means[best]:
            best = i
    return best


def cmd_sweep(config: ExperimentConfig) -> List[str]:
    """Tune lambda on validation accuracy, report test accuracy at the choice."""
    storage = prepare_output(config)
    candidates = {
        m: list(config.sweep.lambdas) if METHODS[m][0] else [0.0]
        for m in config.sweep.methods
    }
    runs, written = _execute(config, storage, "sweep", candidates)
    groups = _group(runs, "method", "cell", "lambda_prop")

    sweep_rows, selection_rows, table = [], [], {}
    cells = [cell for cell, _spec in config.cells()]
    for method, lambdas in candidates.items():
        for cell in cells:
            stats = [
                mean_std(
                    r.best_validation_accuracy for r in groups[(method, cell, lam)]
                )
                for lam in lambdas
            ]
            chosen = select_lambda(lambdas, [mean for mean, _std in stats])
            if chosen is None:
                logging.warning(
                    "%s %s: no validation accuracy, taking the first lambda",
                    method,
                    cell,
                )
                chosen = 0
            for i, (lam, (mean, std)) in enumerate(zip(lambdas, stats)):
                sweep_rows.append(
                    {
                        "method": method,
                        "cell": cell,
                        "lambda_prop": lam,
                        "val_mean": mean,
                        "val_std": std,
                        "std_ddof": STD_DDOF,
                        "n_seeds": len(groups[(method, cell, lam)]),
                        "selected": i == chosen,
                    }
                )
            lam = lambdas[chosen]
            results = groups[(method, cell, lam)]
            test = mean_std(r.test_accuracy_at_best for r in results)
            table[(method, cell)] = test
            selection_rows.append(
                {
                    "method": method,
                    "cell": cell,
                    "lambda_prop": lam,
                    "val_mean": stats[chosen][0],
                    "val_std": stats[chosen][1],
                    "test_mean": test[0],
                    "test_std": test[1],
                    "std_ddof": STD_DDOF,
                    "n_seeds": len(results),
                }
            )
            logging.info(
                "%s %s: lambda*=%g validation %s test %s",
                method,
                cell,
                lam,
                _percent(*stats[chosen]),
                _percent(*test),
            )
    written.append(storage.write_csv("sweep.csv", sweep_rows))
    written.append(storage.write_csv("selection.csv", selection_rows))
    written += _accuracy_table(
        storage,
        "sweep_accuracy_table",
        cells,
        table,
        "balanced test accuracy at selected lambda (%)",
    )
    return written


class RunRecord:
    """Metrics and summary of one run directory.

    ``group`` is the directory above ``seed_<s>``; runs of one group differ
    in their seed only.
    """

    def __init__(self, storage: Storage, group: str) -> None:
        self.storage = storage
        self.group = group
        summary = storage.read_key_values(SUMMARY_FILE)
        required = (
            "method",
            "cell",
            "best_epoch",
            "major_class",
            "minor_class",
            "true_unlabeled_prop",
        )
        for key in required:
            if key not in summary:
                raise DataError(f"{storage.path(SUMMARY_FILE)}: missing key {key!r}")
        try:
            self.method = summary["method"]
            self.cell = summary["cell"]
            self.best_epoch = int(summary["best_epoch"])
            self.major = int(summary["major_class"])
            self.minor = int(summary["minor_class"])
            self.true_prop = np.array(parse_floats(summary["true_unlabeled_prop"]))
        except ValueError as exc:
            raise DataError(f"{storage.path(SUMMARY_FILE)}: {exc}")
        K = len(self.true_prop)
        columns = list(METRICS_BASE_COLUMNS)
        columns += [f"est_prop_{k + 1}" for k in range(K)]
        columns += [f"pl_recall_{k + 1}" for k in range(K)]
        self.metrics = storage.read_csv(METRICS_FILE, columns)
        best = self.metrics[self.metrics["epoch"] == self.best_epoch]
        if best.empty:
            raise DataError(
                f"{storage.path(METRICS_FILE)}: no row for best epoch {self.best_epoch}"
            )
        self.best = best.iloc[0]

    @property
    def n_classes(self) -> int:
        return len(self.true_prop)

    def deviation(self) -> np.ndarray:
        est = np.array([self.best[f"est_prop_{k + 1}"] for k in range(self.n_classes)])
        return est - self.true_prop

    def recall(self, k: int) -> pd.Series:
        """Pseudo-label recall of 1-based class ``k`` per epoch."""
        return self.metrics.set_index("epoch")[f"pl_recall_{k}"]


def find_runs(roots: Sequence[str]) -> List[RunRecord]:
    records = []
    for root in roots:
        storage = Storage(root)
        found = storage.find(METRICS_FILE)
        if not found:
            raise DataError(f"{storage}: no {METRICS_FILE} found")
        for rel in found:
            group = posixpath.dirname(rel) or os.path.basename(str(storage))
            records.append(RunRecord(storage.sub(rel) if rel else storage, group))
    return records


def _slug(group: str) -> str:
    return group.replace("/", "_") or "run"


def cmd_report(config: ExperimentConfig, run_dirs: Sequence[str] = ()) -> List[str]:
    """Deviation bars, recall curves and an accuracy table from run directories."""
    roots = list(run_dirs) or list(config.report_runs) or [config.output_dir]
    records = find_runs(roots)
    storage = prepare_output(config).sub("report")

    sizes = {r.n_classes for r in records}
    if len(sizes) != 1:
        raise DataError(f"runs disagree on the number of classes: {sorted(sizes)}")
    labels = [str(k + 1) for k in range(sizes.pop())]
    groups: Dict[str, List[RunRecord]] = {}
    for record in records:
        groups.setdefault(record.group, []).append(record)

    written = []
    deviation_rows, accuracy_rows = [], []
    recall_series = {"major": [], "minor": []}
    for name, group in groups.items():
        first = group[0]
        info = {"group": name, "method": first.method, "cell": first.cell}
        deviation = np.mean([r.deviation() for r in group], axis=0)
        for k, value in enumerate(deviation):
            deviation_rows.append(
                dict(info, **{"class": k + 1, "deviation": value, "n_runs": len(group)})
            )
        svg = charts.deviation_bar_chart(
            deviation, labels, f"estimated - true unlabeled proportion: {name}"
        )
        written.append(storage.write_text(f"deviation_{_slug(name)}.svg", svg))

        mean, std = mean_std(r.best["test_bal_acc"] for r in group)
        accuracy_rows.append(
            dict(
                info,
                test_bal_acc_mean=mean,
                test_bal_acc_std=std,
                std_ddof=STD_DDOF,
                n_runs=len(group),
            )
        )
        for which in recall_series:
            k = getattr(first, which)
            curve = pd.concat([r.recall(k) for r in group], axis=1).mean(axis=1)
            recall_series[which].append((f"{name} (class {k})", curve))

    written.append(storage.write_csv("deviation.csv", deviation_rows))
    for which, series in recall_series.items():
        frame = pd.concat([curve.rename(label) for label, curve in series], axis=1)
        frame = frame.sort_index()
        frame.index.name = "epoch"
        frame = frame.reset_index()
        columns = list(frame.columns)
        written.append(storage.write_csv(f"recall_{which}.csv", frame, columns=columns))
        svg = charts.line_chart(
            frame["epoch"].tolist(),
            [(label, frame[label].tolist()) for label, _curve in series],
            f"pseudo-label recall, most {which} class",
        )
        written.append(storage.write_text(f"recall_{which}.svg", svg))

    written.append(storage.write_csv("accuracy.csv", accuracy_rows))
    table = [
        [
            r["group"],
            _percent(r["test_bal_acc_mean"], r["test_bal_acc_std"]),
            str(r["n_runs"]),
        ]
        for r in accuracy_rows
    ]
    svg = charts.table_svg(
        ["runs", "balanced test accuracy (%)", "seeds"],
        table,
        "accuracy at the best validation epoch",
    )
    written.append(storage.write_text("accuracy.svg", svg))
    return written


def cmd_sample_hg(config: ExperimentConfig) -> List[str]:
    """Draws of the exact sampler next to the exact moments and probabilities."""
    storage = prepare_output(config).sub("sample_hg")
    settings = config.sample_hg
    population = ClassCounts(settings.population)
    if settings.n > population.total():
        raise ConfigError(
            f"sample_hg.n = {settings.n} exceeds the population size "
            f"{population.total()}"
        )
    K = len(population)
    count_columns = [f"count_{k + 1}" for k in range(K)]
    rng = make_rng(settings.seed)
    draws = hypergeom.sample_many(population, settings.n, settings.draws, rng)
    written = [storage.write_csv("draws.csv", draws, columns=count_columns)]

    mean, cov = hypergeom.mean_and_covariance(population, settings.n)
    nan = np.full(K, np.nan)
    empirical_mean = draws.mean(axis=0) if len(draws) else nan
    empirical_var = draws.var(axis=0, ddof=STD_DDOF) if len(draws) else nan
    moments = {
        "class": np.arange(1, K + 1),
        "exact_mean": mean,
        "empirical_mean": empirical_mean,
        "exact_var": np.diag(cov),
        "empirical_var": empirical_var,
    }
    written.append(storage.write_csv("moments.csv", moments, columns=list(moments)))

    observed = {}
    if len(draws):
        unique, counts = np.unique(draws, axis=0, return_counts=True)
        observed = {
            tuple(int(v) for v in row): int(c) for row, c in zip(unique, counts)
        }
    rows = []
    for draw in hypergeom.enumerate_draws(population, settings.n):
        if len(rows) >= settings.max_pmf_rows:
            logging.warning("pmf table truncated at %d rows", settings.max_pmf_rows)
            break
        row = dict(zip(count_columns, draw.as_tuple()))
        row["exact_pmf"] = hypergeom.pmf(population, draw)
        row["empirical_freq"] = (
            observed.get(draw.as_tuple(), 0) / len(draws) if len(draws) else np.nan
        )
        rows.append(row)
    columns = count_columns + ["exact_pmf", "empirical_freq"]
    written.append(storage.write_csv("pmf.csv", rows, columns=columns))
    logging.info(
        "%d draws of %d from %s", settings.draws, settings.n, population.as_tuple()
    )
    return written
