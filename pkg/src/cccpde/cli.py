"""Command-line entry point.

Subcommands cover the full pipeline: synthetic data generation, training
(baseline or density estimator), uncertainty-filtered evaluation with CSV
artifacts, generative sampling, density-grid export, and the 1-D
heteroscedastic regression demo.

Settings resolve in three layers: built-in defaults, then a flat
`key = value` config file (`#` starts a comment), then explicit flags.
Every run writes its fully resolved configuration next to its outputs.
All randomness flows from one root seed, split per subsystem by fixed
labels (data/init/shuffle/sampling). Exit codes: 0 success, 2 usage
error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .bayes import BetaPosterior, base_rate_prior, posterior_reports
from .data import (
    PRESETS,
    Dataset,
    Standardizer,
    gen_regression_1d,
    load_csv,
    preset_datasets,
    regression_true_mean,
    save_csv,
)
from .errors import DomainError
from .model import (
    CccpDeModel,
    FfnnModel,
    TrainConfig,
    load_model,
    save_model,
    train,
    glm_fit_and_predict,
)
from .numerics import Rng, derive_seed

_BOOL_STRINGS = {"true": True, "1": True, "yes": True,
                 "false": False, "0": False, "no": False}


def _parse_config_file(path: str) -> dict[str, str]:
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _convert(key: str, value: str, kind):
    if kind is bool:
        if value.lower() not in _BOOL_STRINGS:
            raise DomainError(f"config key {key!r} needs true/false, got {value!r}")
        return _BOOL_STRINGS[value.lower()]
    try:
        return kind(value)
    except ValueError:
        raise DomainError(
            f"config key {key!r} needs a {kind.__name__}, got {value!r}") from None


def _resolve(args, defaults: dict, types: dict) -> dict:
    """Defaults, overridden by config file, overridden by explicit flags."""
    file_cfg = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    resolved = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_cfg:
            resolved[key] = _convert(key, file_cfg[key], types[key])
        else:
            resolved[key] = default
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise DomainError(f"unknown config keys: {sorted(unknown)}")
    return resolved


def _write_config_log(path, resolved: dict, extra: dict | None = None) -> None:
    entries = dict(resolved)
    if extra:
        entries.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key in sorted(entries):
            fh.write(f"{key} = {entries[key]}\n")


def _chunked_forward(model: CccpDeModel, x: np.ndarray, threads: int):
    """Per-class log-densities and sigmoid scores, optionally fanned out.

    Forward passes cache intermediates on the model, so each worker gets
    its own frozen copy; results merge in input order.
    """
    if threads <= 1 or x.shape[0] < 2 * threads:
        return model.forward(x)
    chunks = np.array_split(np.arange(x.shape[0]), threads)
    clones = [copy.deepcopy(model) for _ in range(threads)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda payload: payload[0].forward(x[payload[1]]),
            zip(clones, chunks)))
    log_d = np.vstack([p[0] for p in parts])
    scores = np.concatenate([p[1] for p in parts])
    return log_d, scores


# -- subcommands ---------------------------------------------------------------

_GEN_DEFAULTS = {"seed": 0, "train_size": 4000, "test_size": 4000}
_GEN_TYPES = {"seed": int, "train_size": int, "test_size": int}


def _cmd_gen_data(args) -> int:
    cfg = _resolve(args, _GEN_DEFAULTS, _GEN_TYPES)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets = preset_datasets(args.preset, cfg["seed"],
                               cfg["train_size"], cfg["test_size"])
    for name, ds in datasets.items():
        save_csv(ds, out / f"{name}.csv")
    _write_config_log(out / "config_used.txt", cfg,
                      {"preset": args.preset, "out": out})
    print(f"wrote {', '.join(sorted(datasets))} under {out}")
    return 0


_TRAIN_DEFAULTS = {
    "seed": 0, "epochs": 30, "batch_size": 128, "learning_rate": 1e-3,
    "hidden": 64, "base_depth": 3, "head_depth": 1, "disc_blocks": 3,
    "ffnn_blocks": 4, "dropout": 0.05, "flow_weight": 1.0,
    "disc_weight": 1.0, "standardize": True,
}
_TRAIN_TYPES = {
    "seed": int, "epochs": int, "batch_size": int, "learning_rate": float,
    "hidden": int, "base_depth": int, "head_depth": int, "disc_blocks": int,
    "ffnn_blocks": int, "dropout": float, "flow_weight": float,
    "disc_weight": float, "standardize": bool,
}


def _cmd_train(args) -> int:
    cfg = _resolve(args, _TRAIN_DEFAULTS, _TRAIN_TYPES)
    dataset = load_csv(args.data)
    config = TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], seed=cfg["seed"],
        hidden=cfg["hidden"], base_depth=cfg["base_depth"],
        head_depth=cfg["head_depth"], disc_blocks=cfg["disc_blocks"],
        ffnn_blocks=cfg["ffnn_blocks"], dropout=cfg["dropout"],
        flow_weight=cfg["flow_weight"], disc_weight=cfg["disc_weight"])
    init_rng = Rng(derive_seed(cfg["seed"], "init"))
    if args.model == "ffnn":
        model = FfnnModel(dataset.dim, config.hidden, config.ffnn_blocks,
                          config.dropout, init_rng)
    else:
        n_classes = max(dataset.n_classes, 2)
        model = CccpDeModel(dataset.dim, n_classes, config.hidden,
                            config.base_depth, config.head_depth,
                            config.disc_blocks, config.dropout, init_rng)
    if cfg["standardize"]:
        model.standardizer = Standardizer.fit(dataset.features)
    trace = train(model, dataset, config, Rng(derive_seed(cfg["seed"], "shuffle")))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    with open(out.with_suffix(".trace.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(trace, 1):
            fh.write(f"{epoch},{loss!r}\n")
    _write_config_log(out.with_suffix(".config.txt"), cfg,
                      {"model": args.model, "data": args.data, "out": out})
    print(f"trained {args.model} on {dataset.n_rows} rows; "
          f"final loss {trace[-1]:.6f}; model at {out}")
    return 0


_EVAL_DEFAULTS = {
    "seed": 0, "threshold": 0.1, "mass": 0.95, "prior_a": 1.0, "prior_b": 1.0,
    "base_rate": None, "prior_strength": 2.0, "volume": None, "threads": 1,
}
_EVAL_TYPES = {
    "seed": int, "threshold": float, "mass": float, "prior_a": float,
    "prior_b": float, "base_rate": float, "prior_strength": float,
    "volume": float, "threads": int,
}


def _default_volume(model: CccpDeModel) -> float:
    # a (0.05 * per-dimension training std) hypercube
    if model.standardizer is not None:
        return float(np.prod(0.05 * model.standardizer.std))
    return 0.05 ** model.dim


def _cmd_eval(args) -> int:
    cfg = _resolve(args, _EVAL_DEFAULTS, _EVAL_TYPES)
    model = load_model(args.model)
    if not isinstance(model, CccpDeModel):
        raise DomainError(f"{args.model} is not a density-estimator model")
    dataset = load_csv(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log_d, sigmoid_scores = _chunked_forward(model, dataset.features,
                                             cfg["threads"])
    with np.errstate(divide="ignore"):
        log_priors = np.log(model.class_priors)
    _, ratio_scores = ev.ratio_test_classify(log_d, log_priors)

    volume = cfg["volume"] if cfg["volume"] is not None else _default_volume(model)
    if cfg["base_rate"] is not None:
        prior = base_rate_prior(cfg["base_rate"], cfg["prior_strength"])
    else:
        prior = BetaPosterior(cfg["prior_a"], cfg["prior_b"])
    reports = posterior_reports(log_d, model.class_counts, prior, volume,
                                cfg["threshold"], cfg["mass"])

    scorers = {"sigmoid": sigmoid_scores, "ratio": ratio_scores}
    ffnn_scores = np.full(dataset.n_rows, np.nan)
    if args.ffnn:
        baseline = load_model(args.ffnn)
        if not isinstance(baseline, FfnnModel):
            raise DomainError(f"{args.ffnn} is not a feed-forward baseline model")
        ffnn_scores = baseline.score(dataset.features)
        scorers["ffnn"] = ffnn_scores

    retained, rejected = ev.filter_by_uncertainty(reports, cfg["threshold"])
    kept_labels = set(dataset.labels[retained].tolist())
    filterable = kept_labels >= {0, 1}
    suffix = {"sigmoid": "", "ratio": "_ratio", "ffnn": "_ffnn"}
    if filterable:
        curves, retained, rejected = ev.filtered_roc_comparison(
            dataset.labels, scorers, reports, cfg["threshold"])
    else:
        print("warning: retained set lacks a class; emitting unfiltered "
              "curves only (raise --volume or --threshold)", file=sys.stderr)
        curves = {name: (ev.roc_auc(np.asarray(s, dtype=np.float64),
                                    dataset.labels), None)
                  for name, s in scorers.items()}

    ev.write_reports_csv(out / "reports.csv", dataset.labels, ffnn_scores,
                         sigmoid_scores, log_d, reports)
    for name, (full, filtered) in curves.items():
        ev.write_roc_csv(full, out / f"roc{suffix[name]}.csv")
        if filtered is not None:
            ev.write_roc_csv(filtered, out / f"roc{suffix[name]}_filtered.csv")
    _write_config_log(out / "config_used.txt", cfg, {
        "model": args.model, "ffnn": args.ffnn, "data": args.data,
        "out": out, "resolved_volume": volume,
        "prior": f"Beta({prior.a}, {prior.b})",
    })
    for name, (full, filtered) in sorted(curves.items()):
        if filtered is not None:
            print(f"{name}: auc {full.auc:.4f} -> retained auc {filtered.auc:.4f}")
        else:
            print(f"{name}: auc {full.auc:.4f}")
    print(f"retained {retained.size}, rejected {rejected.size} "
          f"of {dataset.n_rows} (threshold {cfg['threshold']})")
    return 0


_SAMPLE_DEFAULTS = {"seed": 0, "count": 10, "class_index": 0}
_SAMPLE_TYPES = {"seed": int, "count": int, "class_index": int}


def _cmd_sample(args) -> int:
    cfg = _resolve(args, _SAMPLE_DEFAULTS, _SAMPLE_TYPES)
    model = load_model(args.model)
    if not isinstance(model, CccpDeModel):
        raise DomainError(f"{args.model} is not a density-estimator model")
    rng = Rng(derive_seed(cfg["seed"], "sampling"))
    samples = model.sample_class(cfg["class_index"], rng, cfg["count"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    labels = np.full(cfg["count"], cfg["class_index"], dtype=np.int64)
    save_csv(Dataset(samples, labels, name="samples"), out)
    _write_config_log(out.with_suffix(".config.txt"), cfg,
                      {"model": args.model, "out": out})
    print(f"wrote {cfg['count']} class-{cfg['class_index']} samples to {out}")
    return 0


_GRID_DEFAULTS = {"resolution": 100}
_GRID_TYPES = {"resolution": int}


def _cmd_density_grid(args) -> int:
    cfg = _resolve(args, _GRID_DEFAULTS, _GRID_TYPES)
    model = load_model(args.model)
    if not isinstance(model, CccpDeModel):
        raise DomainError(f"{args.model} is not a density-estimator model")
    if args.bounds is not None:
        bounds = tuple(args.bounds)
    elif model.standardizer is not None:
        mean, std = model.standardizer.mean, model.standardizer.std
        bounds = (mean[0] - 6 * std[0], mean[0] + 6 * std[0],
                  mean[1] - 6 * std[1], mean[1] + 6 * std[1])
    else:
        bounds = (-6.0, 6.0, -6.0, 6.0)
    xs, ys, _, log_d, total = ev.density_grid(model, bounds, cfg["resolution"])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.write_density_grid_csv(out, xs, ys, log_d, total)
    _write_config_log(out.with_suffix(".config.txt"), cfg, {
        "model": args.model, "out": out,
        "bounds": ",".join(repr(float(b)) for b in bounds),
    })
    print(f"wrote {cfg['resolution'] ** 2} grid rows to {out}")
    return 0


_GLM_DEFAULTS = {"seed": 0, "train_size": 2000, "epochs": 150,
                 "batch_size": 128, "learning_rate": 1e-3, "hidden": 64,
                 "grid_size": 200}
_GLM_TYPES = {"seed": int, "train_size": int, "epochs": int,
              "batch_size": int, "learning_rate": float, "hidden": int,
              "grid_size": int}


def _cmd_glm_demo(args) -> int:
    cfg = _resolve(args, _GLM_DEFAULTS, _GLM_TYPES)
    x, y = gen_regression_1d(cfg["train_size"], derive_seed(cfg["seed"], "data"))
    config = TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                         learning_rate=cfg["learning_rate"], hidden=cfg["hidden"])
    init_rng = Rng(derive_seed(cfg["seed"], "init"))
    _, _, model = glm_fit_and_predict(x, y, config, init_rng)
    grid = np.linspace(-3.0, 3.0, cfg["grid_size"])
    mu, sigma = model.predict(grid)
    truth = regression_true_mean(grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "glm_demo.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,mu,sigma,y_true\n")
        for i in range(grid.size):
            fh.write(f"{float(grid[i])!r},{float(mu[i])!r},"
                     f"{float(sigma[i])!r},{float(truth[i])!r}\n")
    _write_config_log(out / "config_used.txt", cfg, {"out": out})
    print(f"wrote regression demo ({cfg['grid_size']} grid rows) under {out}")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cccpde",
        description="Class-conditional density estimation with "
                    "credible-interval uncertainty and abstention.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic preset dataset")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-size", type=int, dest="train_size")
    p.add_argument("--test-size", type=int, dest="test_size")
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset CSV")
    p.add_argument("--model", required=True, choices=("ffnn", "cccpde"))
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--hidden", type=int)
    p.add_argument("--base-depth", type=int, dest="base_depth")
    p.add_argument("--head-depth", type=int, dest="head_depth")
    p.add_argument("--disc-blocks", type=int, dest="disc_blocks")
    p.add_argument("--ffnn-blocks", type=int, dest="ffnn_blocks")
    p.add_argument("--dropout", type=float)
    p.add_argument("--flow-weight", type=float, dest="flow_weight")
    p.add_argument("--disc-weight", type=float, dest="disc_weight")
    p.add_argument("--no-standardize", action="store_const", const=False,
                   dest="standardize")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="uncertainty-filtered evaluation")
    p.add_argument("--model", required=True, help="density-estimator model file")
    p.add_argument("--ffnn", help="optional baseline model file")
    p.add_argument("--data", required=True, help="test CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--mass", type=float)
    p.add_argument("--prior-a", type=float, dest="prior_a")
    p.add_argument("--prior-b", type=float, dest="prior_b")
    p.add_argument("--base-rate", type=float, dest="base_rate")
    p.add_argument("--prior-strength", type=float, dest="prior_strength")
    p.add_argument("--volume", type=float)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sample", help="draw samples from one class head")
    p.add_argument("--model", required=True)
    p.add_argument("--class-index", type=int, dest="class_index")
    p.add_argument("--count", type=int)
    p.add_argument("--out", required=True, help="samples CSV to write")
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("density-grid", help="export 2-D log-density grid")
    p.add_argument("--model", required=True)
    p.add_argument("--bounds", type=float, nargs=4,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--out", required=True, help="grid CSV to write")
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=_cmd_density_grid)

    p = sub.add_parser("glm-demo", help="heteroscedastic 1-D regression demo")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-size", type=int, dest="train_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--hidden", type=int)
    p.add_argument("--grid-size", type=int, dest="grid_size")
    p.add_argument("--config", help="key = value config file")
    p.set_defaults(func=_cmd_glm_demo)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures exit 1; argparse exits 2 itself
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
