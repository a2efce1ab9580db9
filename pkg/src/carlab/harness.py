"""Experiment harness: stratified splits, the three-way classifier comparison,
the time-filter-length sweep, k-fold indices and report emission.

Every training cell derives its seeds from ``(seed, sweep_name, sweep_value,
variant)`` alone, so results do not depend on the order or process in which
cells run.
"""

from __future__ import annotations

import csv
import io
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from carlab import car_model, classifier
from carlab.car_model import CarConfig
from carlab.channel_sim import Dataset, load_dataset
from carlab.classifier import ClassifierConfig
from carlab.errors import (
    ConfigInvalid,
    EvenKernelLength,
    InvalidK,
    IoFailure,
    TooFewSamples,
)

log = logging.getLogger(__name__)

VARIANTS = ("low", "mapped", "high")
CSV_HEADER = ["sweep_name", "sweep_value", "variant", "seed", "accuracy", "train_seconds"]
FIGURE_FILES = {"filters": "fig3_filters.svg", "timelen": "fig4_timelen.svg"}
SWEEP_LABELS = {"filters": "filters per convolutional layer",
                "timelen": "filter length along time axis"}


@dataclass
class ExperimentConfig:
    dataset: str = ""
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    filter_sweep: list[int] = field(default_factory=lambda: list(range(1, 21)))
    timelen_sweep: list[int] = field(default_factory=lambda: [3, 5, 7, 9, 11])
    timelen_filters: int = 8
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    split_ratio: float = 0.8
    kfold: int = 5
    out_dir: str = "results"
    record_timing: bool = False

    def validate(self) -> "ExperimentConfig":
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigInvalid(f"split ratio must lie in (0, 1), got {self.split_ratio}")
        if not self.filter_sweep or not self.timelen_sweep or not self.seeds or not self.variants:
            raise ConfigInvalid("sweep lists, variants and seeds must be non-empty")
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigInvalid(f"unknown variants {sorted(unknown)}")
        if min(self.filter_sweep) < 1 or self.timelen_filters < 1:
            raise ConfigInvalid("filter counts must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigInvalid(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ResultRow:
    sweep_name: str
    sweep_value: int
    variant: str
    seed: int
    accuracy: float
    train_seconds: float = 0.0


# -- splitting ---------------------------------------------------------------

def _labels_of(dataset_or_labels) -> np.ndarray:
    if isinstance(dataset_or_labels, Dataset):
        return np.asarray(dataset_or_labels.labels)
    return np.asarray(dataset_or_labels)


def split_dataset(dataset, ratio: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Label-stratified train/test split; returns sorted index arrays.

    Each class contributes ``round(ratio * n_class)`` samples to the training
    side, clamped so both sides keep at least one sample of every class.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigInvalid(f"split ratio must lie in (0, 1), got {ratio}")
    labels = _labels_of(dataset)
    rng = np.random.default_rng([seed, 0x5B1])
    train, test = [], []
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        if members.size < 2:
            raise TooFewSamples(f"class {cls} has {members.size} sample(s); a split needs 2")
        n_train = min(max(int(np.floor(ratio * members.size + 0.5)), 1), members.size - 1)
        train.append(members[:n_train])
        test.append(members[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def kfold_indices(n: int, k: int = 5, seed: int = 0, labels=None) -> list[np.ndarray]:
    """``k`` disjoint folds covering ``range(n)``; stratified when ``labels`` is given.

    Indices are shuffled within each class, classes are laid end to end, and
    the sequence is dealt round-robin so fold sizes differ by at most one.
    """
    if k < 2 or n < k:
        raise InvalidK(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng([seed, 0xF01D])
    if labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise ConfigInvalid("labels must have one entry per index")
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
    return [np.sort(order[i::k]) for i in range(k)]


# -- seeding and audit ---------------------------------------------------------

def cell_seed(seed: int, sweep_name: str, sweep_value: int, variant: str) -> int:
    """A 32-bit seed determined by the cell coordinates only."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(sweep_name.encode()), int(sweep_value),
                                 zlib.crc32(variant.encode())])
    return int(ss.generate_state(1)[0])


@dataclass
class AuditLog:
    """Which sample indices each training or evaluation stage touched."""

    entries: list[tuple[str, str, int, int, tuple[int, ...]]] = field(default_factory=list)

    def record(self, stage: str, variant: str, seed: int, value: int, indices) -> None:
        self.entries.append((stage, variant, seed, value, tuple(int(i) for i in indices)))

    def touched(self, stage: str, seed: int | None = None) -> set[int]:
        out: set[int] = set()
        for st, _, sd, _, idx in self.entries:
            if st == stage and (seed is None or sd == seed):
                out.update(idx)
        return out


# -- cells ---------------------------------------------------------------------

def _timer(enabled: bool):
    return time.process_time if enabled else (lambda: 0.0)


def run_cell(ds: Dataset, train_idx, test_idx, car_cfg: CarConfig, clf_cfg: ClassifierConfig,
             variants: Sequence[str], seed: int, sweep_name: str, sweep_value: int,
             record_timing: bool = False, audit: AuditLog | None = None) -> list[ResultRow]:
    """Train (optionally) a CAR and one classifier per variant, evaluate on the test split."""
    clock = _timer(record_timing)
    labels = np.asarray(ds.labels)
    y_train, y_test = labels[train_idx], labels[test_idx]
    inputs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    car_seconds = 0.0
    if "low" in variants or "mapped" in variants:
        low_train, low_test = np.asarray(ds.low[train_idx]), np.asarray(ds.low[test_idx])
        inputs["low"] = (low_train, low_test)
    if "high" in variants or "mapped" in variants:
        high_train = np.asarray(ds.high[train_idx])
    if "high" in variants:
        inputs["high"] = (high_train, np.asarray(ds.high[test_idx]))
    if "mapped" in variants:
        s = cell_seed(seed, sweep_name, sweep_value, "car")
        t0 = clock()
        car = car_model.build_car(replace(car_cfg, seed=s))
        if audit is not None:
            audit.record("car_train", "car", seed, sweep_value, train_idx)
        car_model.train_car(car, low_train, high_train, rng=np.random.default_rng([s, 1]))
        car_seconds = clock() - t0
        if audit is not None:
            audit.record("car_map", "mapped", seed, sweep_value, test_idx)
        inputs["mapped"] = (car_model.map_low_to_high(car, low_train),
                            car_model.map_low_to_high(car, low_test))
    rows = []
    for variant in VARIANTS:
        if variant not in variants:
            continue
        x_train, x_test = inputs[variant]
        s = cell_seed(seed, sweep_name, sweep_value, variant)
        cfg = replace(clf_cfg, seed=s, input_rows=x_train.shape[1], input_T=x_train.shape[2])
        t0 = clock()
        model = classifier.build_classifier(cfg)
        if audit is not None:
            audit.record("clf_train", variant, seed, sweep_value, train_idx)
        classifier.train_classifier(model, x_train, y_train, rng=np.random.default_rng([s, 1]))
        seconds = clock() - t0 + (car_seconds if variant == "mapped" else 0.0)
        if audit is not None:
            audit.record("clf_eval", variant, seed, sweep_value, test_idx)
        acc = classifier.evaluate(model, x_test, y_test).accuracy
        log.info("%s=%s seed=%s %s accuracy %.4f", sweep_name, sweep_value, seed, variant, acc)
        rows.append(ResultRow(sweep_name, int(sweep_value), variant, int(seed), float(acc),
                              float(seconds) if record_timing else 0.0))
    return rows


_WORKER_DS: Dataset | None = None


def _cell_job(job):
    return run_cell(_WORKER_DS, *job)


def _run_cells(ds: Dataset, jobs_list, jobs: int, audit: AuditLog | None):
    if jobs <= 1 or audit is not None or len(jobs_list) < 2:
        return [run_cell(ds, *job, audit=audit) for job in jobs_list]
    global _WORKER_DS
    import multiprocessing as mp

    _WORKER_DS = ds
    try:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=mp.get_context("fork")) as pool:
            return list(pool.map(_cell_job, jobs_list))
    finally:
        _WORKER_DS = None


def _resolve_dataset(cfg: ExperimentConfig, dataset: Dataset | None) -> Dataset:
    if dataset is not None:
        return dataset
    if not cfg.dataset:
        raise ConfigInvalid("no dataset given")
    return load_dataset(cfg.dataset, mmap=True, with_taps=False)


def run_three_way(cfg: ExperimentConfig, dataset: Dataset | None = None,
                  car_cfg: CarConfig | None = None, clf_cfg: ClassifierConfig | None = None,
                  jobs: int = 1, audit: AuditLog | None = None) -> list[ResultRow]:
    """Filter-count sweep: for each F and seed, CAR plus one classifier per variant, all with F filters."""
    cfg.validate()
    ds = _resolve_dataset(cfg, dataset)
    car_cfg, clf_cfg = car_cfg or CarConfig(), clf_cfg or ClassifierConfig()
    job_list = []
    for seed in cfg.seeds:
        tr, te = split_dataset(ds, cfg.split_ratio, seed)
        for F in cfg.filter_sweep:
            job_list.append((tr, te, replace(car_cfg, filters=F), replace(clf_cfg, filters=F),
                             tuple(cfg.variants), seed, "filters", F, cfg.record_timing))
    rows = [r for cell in _run_cells(ds, job_list, jobs, audit) for r in cell]
    return sorted(rows, key=_row_key)


def run_time_length_sweep(cfg: ExperimentConfig, dataset: Dataset | None = None,
                          car_cfg: CarConfig | None = None, clf_cfg: ClassifierConfig | None = None,
                          jobs: int = 1, audit: AuditLog | None = None) -> list[ResultRow]:
    """Time-kernel-length sweep over ``cfg.timelen_sweep`` for the low and mapped variants."""
    cfg.validate()
    even = [v for v in cfg.timelen_sweep if v % 2 == 0]
    if even:
        raise EvenKernelLength(f"time filter lengths must be odd, got {even}")
    ds = _resolve_dataset(cfg, dataset)
    car_cfg, clf_cfg = car_cfg or CarConfig(), clf_cfg or ClassifierConfig()
    F = cfg.timelen_filters
    job_list = []
    for seed in cfg.seeds:
        tr, te = split_dataset(ds, cfg.split_ratio, seed)
        for L in cfg.timelen_sweep:
            job_list.append((tr, te, replace(car_cfg, filters=F, kernel_t=L),
                             replace(clf_cfg, filters=F, kernel_t=L), ("low", "mapped"), seed,
                             "timelen", L, cfg.record_timing))
    rows = [r for cell in _run_cells(ds, job_list, jobs, audit) for r in cell]
    return sorted(rows, key=_row_key)


def _row_key(r: ResultRow):
    return (r.sweep_name, r.sweep_value, VARIANTS.index(r.variant), r.seed)


def cross_validate(ds: Dataset, variant: str, car_cfg: CarConfig | None = None,
                   clf_cfg: ClassifierConfig | None = None, k: int = 5, seed: int = 0,
                   audit: AuditLog | None = None) -> list[float]:
    """Stratified k-fold accuracies of one variant; each fold retrains everything it needs."""
    if variant not in VARIANTS:
        raise ConfigInvalid(f"unknown variant {variant!r}")
    car_cfg, clf_cfg = car_cfg or CarConfig(), clf_cfg or ClassifierConfig()
    folds = kfold_indices(len(ds), k, seed, labels=ds.labels)
    scores = []
    for i, test in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        rows = run_cell(ds, train, test, car_cfg, clf_cfg, (variant,), seed, "kfold", i,
                        audit=audit)
        scores.append(rows[0].accuracy)
    return scores


# -- reporting -----------------------------------------------------------------

def rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.sweep_name, r.sweep_value, r.variant, r.seed, repr(float(r.accuracy)),
                         repr(float(r.train_seconds))])
    return buf.getvalue()


def read_results_csv(path) -> list[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigInvalid(f"unexpected results header {reader.fieldnames}")
        return [ResultRow(r["sweep_name"], int(r["sweep_value"]), r["variant"], int(r["seed"]),
                          float(r["accuracy"]), float(r["train_seconds"])) for r in reader]


def summarize(rows: Sequence[ResultRow], sweep_name: str):
    """``{variant: (values, mean, min, max)}`` of accuracy over seeds for one sweep."""
    out = {}
    for variant in VARIANTS:
        sel = [r for r in rows if r.sweep_name == sweep_name and r.variant == variant]
        if not sel:
            continue
        values = sorted({r.sweep_value for r in sel})
        acc = [[r.accuracy for r in sel if r.sweep_value == v] for v in values]
        out[variant] = (np.array(values), np.array([np.mean(a) for a in acc]),
                        np.array([min(a) for a in acc]), np.array([max(a) for a in acc]))
    return out


def _render_svg(rows, sweep_name) -> bytes:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "carlab", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for variant, (x, mean, lo, hi) in summarize(rows, sweep_name).items():
            ax.errorbar(x, mean, yerr=np.vstack([mean - lo, hi - mean]), marker="o", capsize=3,
                        label=variant)
        ax.set_xlabel(SWEEP_LABELS.get(sweep_name, sweep_name))
        ax.set_ylabel("test accuracy (mean over seeds, min/max whiskers)")
        ax.legend()
        ax.grid(alpha=0.3)
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def emit_report(rows: Sequence[ResultRow], out_dir) -> list[Path]:
    """Write ``results.csv`` and one SVG per sweep present in ``rows``."""
    if not rows:
        raise ConfigInvalid("no result rows to report")
    out = Path(out_dir)
    payloads = {"results.csv": rows_to_csv(rows).encode("utf-8")}
    for sweep in sorted({r.sweep_name for r in rows}):
        payloads[FIGURE_FILES.get(sweep, f"fig_{sweep}.svg")] = _render_svg(rows, sweep)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, data in payloads.items():
            (out / name).write_bytes(data)
            written.append(out / name)
    except OSError as exc:
        raise IoFailure(f"cannot write report to {out}: {exc}") from exc
    return written
