"""Command-line entry point: ``carlab <subcommand> [options]``.

Configuration precedence is command-line flag > ``--set`` override > config
file > built-in default. The resolved configuration is written to
``<out>/config.json`` by every subcommand.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from carlab import car_model, classifier, harness
from carlab.car_model import CarConfig
from carlab.channel_sim import SceneConfig, generate_dataset, load_dataset
from carlab.classifier import ClassifierConfig
from carlab.errors import CarLabError, ConfigInvalid
from carlab.harness import ExperimentConfig

log = logging.getLogger("carlab")

GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    car: CarConfig = field(default_factory=CarConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    SECTIONS = ("scene", "car", "classifier", "experiment")

    def to_dict(self) -> dict[str, Any]:
        return {name: getattr(self, name).to_dict() for name in self.SECTIONS}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        unknown = set(d) - set(cls.SECTIONS)
        if unknown:
            raise ConfigInvalid(f"unknown config sections: {sorted(unknown)}")
        return cls(SceneConfig.from_dict(d.get("scene", {})), CarConfig.from_dict(d.get("car", {})),
                   ClassifierConfig.from_dict(d.get("classifier", {})),
                   ExperimentConfig.from_dict(d.get("experiment", {})))


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(tree: dict[str, Any], assignment: str) -> None:
    """Apply one ``section.key=value`` override to a nested config dict."""
    path, sep, raw = assignment.partition("=")
    if not sep or not path:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    parts = path.split(".")
    if len(parts) != 2 or parts[0] not in RunConfig.SECTIONS:
        raise UsageError(f"--set key must be <section>.<field> with section in "
                         f"{RunConfig.SECTIONS}, got {path!r}")
    tree.setdefault(parts[0], {})[parts[1]] = _parse_value(raw)


def resolve_config(config_path: str | None, overrides: list[str]) -> RunConfig:
    tree: dict[str, Any] = {}
    if config_path:
        try:
            tree = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(tree, dict):
            raise UsageError("config file must hold a JSON object")
    for item in overrides:
        apply_override(tree, item)
    try:
        return RunConfig.from_dict(tree)
    except (ConfigInvalid, TypeError) as exc:
        raise UsageError(str(exc)) from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file with scene/car/classifier/experiment sections")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, e.g. car.filters=4 (repeatable)")

    p = _Parser(prog="carlab", description="CNN autoencoder resizer experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common], help="generate a paired dataset")
    for name, helptext in (("train-car", "train a CAR on the training split"),
                           ("sweep-filters", "filter-count sweep over three classifiers"),
                           ("sweep-timelen", "time-filter-length sweep")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--dataset", help="dataset directory (default: experiment.dataset)")
    sp = sub.add_parser("train-clf", parents=[common], help="train one classifier variant")
    sp.add_argument("--dataset")
    sp.add_argument("--variant", choices=harness.VARIANTS, default="high")
    sp.add_argument("--car", help="CAR checkpoint, required for the mapped variant")
    sp = sub.add_parser("eval", parents=[common], help="evaluate a classifier on the test split")
    sp.add_argument("--dataset")
    sp.add_argument("--classifier", required=True, help="classifier checkpoint")
    sp.add_argument("--variant", choices=harness.VARIANTS, default="high")
    sp.add_argument("--car", help="CAR checkpoint, required for the mapped variant")
    sp = sub.add_parser("report", parents=[common], help="re-render figures from results.csv files")
    sp.add_argument("results", nargs="+", help="results.csv files")
    sub.add_parser("grad-check", parents=[common], help="finite-difference check of tiny networks")
    return p


def _dataset_path(args, cfg: RunConfig) -> str:
    path = getattr(args, "dataset", None) or cfg.experiment.dataset
    if not path:
        raise UsageError("no dataset given (use --dataset or experiment.dataset)")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _variant_inputs(ds, idx, variant, car_path):
    if variant == "low":
        return np.asarray(ds.low[idx])
    if variant == "high":
        return np.asarray(ds.high[idx])
    if not car_path:
        raise UsageError("the mapped variant needs --car")
    return car_model.map_low_to_high(car_model.load_weights(car_path), np.asarray(ds.low[idx]))


def cmd_gen_data(args, cfg: RunConfig, out: Path):
    manifest = generate_dataset(cfg.scene, out, jobs=args.jobs)
    log.info("wrote %d samples to %s", manifest.n_samples, out)


def cmd_train_car(args, cfg: RunConfig, out: Path):
    ds = load_dataset(_dataset_path(args, cfg), mmap=True, with_taps=False)
    tr, te = harness.split_dataset(ds, cfg.experiment.split_ratio, cfg.car.seed)
    model = car_model.build_car(cfg.car)
    trace = car_model.train_car(model, np.asarray(ds.low[tr]), np.asarray(ds.high[tr]), log=log)
    car_model.save_weights(model, out / "car.w")
    car_mse, base_mse = car_model.mapping_mse(model, ds.low[te], ds.high[te])
    _write_json(out / "car_metrics.json", {"epoch_losses": trace.epoch_losses,
                                           "test_mapping_mse": car_mse,
                                           "test_baseline_mse": base_mse})


def cmd_train_clf(args, cfg: RunConfig, out: Path):
    ds = load_dataset(_dataset_path(args, cfg), mmap=True, with_taps=False)
    tr, _ = harness.split_dataset(ds, cfg.experiment.split_ratio, cfg.classifier.seed)
    x = _variant_inputs(ds, tr, args.variant, args.car)
    ccfg = replace(cfg.classifier, input_rows=x.shape[1], input_T=x.shape[2])
    model = classifier.build_classifier(ccfg)
    trace = classifier.train_classifier(model, x, ds.labels[tr], log=log)
    classifier.save_weights(model, out / f"clf_{args.variant}.w")
    _write_json(out / f"clf_{args.variant}_trace.json",
                {"epoch_losses": trace.epoch_losses, "epoch_accuracies": trace.epoch_accuracies})


def cmd_eval(args, cfg: RunConfig, out: Path):
    ds = load_dataset(_dataset_path(args, cfg), mmap=True, with_taps=False)
    model = classifier.load_weights(args.classifier)
    _, te = harness.split_dataset(ds, cfg.experiment.split_ratio, model.cfg.seed)
    result = classifier.evaluate(model, _variant_inputs(ds, te, args.variant, args.car), ds.labels[te])
    _write_json(out / f"eval_{args.variant}.json",
                {"accuracy": result.accuracy, "tp": result.tp, "tn": result.tn,
                 "fp": result.fp, "fn": result.fn})
    log.info("%s accuracy %.4f", args.variant, result.accuracy)


def _sweep(args, cfg: RunConfig, out: Path, runner):
    exp = replace(cfg.experiment, dataset=_dataset_path(args, cfg))
    rows = runner(exp, car_cfg=cfg.car, clf_cfg=cfg.classifier, jobs=args.jobs)
    harness.emit_report(rows, out)


def cmd_report(args, cfg: RunConfig, out: Path):
    rows = []
    for path in args.results:
        rows.extend(harness.read_results_csv(path))
    harness.emit_report(rows, out)


def cmd_grad_check(args, cfg: RunConfig, out: Path):
    from carlab.nn.gradcheck import grad_check_report

    seed = cfg.car.seed
    rng = np.random.default_rng([seed, 0x6C])
    tiny_car = car_model.build_car(CarConfig(latent_dim=6, filters=2, n_low=2, n_high=4, time_T=8,
                                             low_stages=1, dtype="float64", seed=seed))
    xl, xh = rng.normal(size=(3, 2, 4, 8)), rng.normal(size=(3, 2, 16, 8))
    car_res = grad_check_report(car_model.CarProbe(tiny_car), (xl, xh), car_model.scalar_objective)
    tiny_clf = classifier.build_classifier(ClassifierConfig(filters=2, hidden=4, input_rows=8,
                                                            input_T=8, dtype="float64", seed=seed))
    labels = rng.integers(0, 2, 4)
    clf_res = grad_check_report(classifier.ClassifierProbe(tiny_clf, labels),
                                rng.normal(size=(4, 2, 8, 8)), car_model.scalar_objective)
    report = {name: {"max_rel_error": r.max_rel_error, "worst_param": r.worst_param,
                     "checked": r.n_checked, "skipped_kinks": r.n_skipped}
              for name, r in (("car", car_res), ("classifier", clf_res))}
    _write_json(out / "gradcheck.json", report)
    worst = max(car_res.max_rel_error, clf_res.max_rel_error)
    log.info("grad-check worst relative error %.3e", worst)
    if worst >= GRAD_TOL:
        raise CarLabError(f"gradient check failed: {worst:.3e} >= {GRAD_TOL}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-car": cmd_train_car,
    "train-clf": cmd_train_clf,
    "eval": cmd_eval,
    "sweep-filters": lambda a, c, o: _sweep(a, c, o, harness.run_three_way),
    "sweep-timelen": lambda a, c, o: _sweep(a, c, o, harness.run_time_length_sweep),
    "report": cmd_report,
    "grad-check": cmd_grad_check,
}


def _apply_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    return replace(cfg, scene=replace(cfg.scene, seed=seed), car=replace(cfg.car, seed=seed),
                   classifier=replace(cfg.classifier, seed=seed),
                   experiment=replace(cfg.experiment, seeds=[seed]))


def _configure_logging() -> None:
    level = os.environ.get("CAR_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("carlab")
    root.handlers[:] = [handler]
    root.setLevel(levels.get(level, logging.INFO))
    root.propagate = False


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _apply_seed(resolve_config(args.config, args.overrides), args.seed)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
    except UsageError as exc:
        print(f"carlab: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        resolved = cfg.to_dict()
        _write_json(out / "config.json", resolved)
        log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
        log.info("seed: %s", args.seed if args.seed is not None else cfg.scene.seed)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(f"carlab: {exc}", file=sys.stderr)
        return 1
    except (CarLabError, OSError, ValueError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
