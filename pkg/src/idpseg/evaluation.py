"""Pixel accuracy, the Otsu baseline, per-sequence reports and stage timing."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from idpseg.core import DataError

OTSU_BINS = 256


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def p(self) -> int:
        return self.tp + self.fn

    @property
    def n(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.p + self.n

    @classmethod
    def from_totals(cls, tp: int, fp: int, p: int, n: int) -> "ConfusionCounts":
        return cls(tp=tp, fp=fp, tn=n - fp, fn=p - tp)


def confusion(mask: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    mask = np.asarray(mask, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if mask.shape != truth.shape:
        raise DataError(f"mask shape {mask.shape} does not match truth shape {truth.shape}")
    tp = int(np.count_nonzero(mask & truth))
    fp = int(np.count_nonzero(mask & ~truth))
    fn = int(np.count_nonzero(~mask & truth))
    return ConfusionCounts(tp=tp, fp=fp, tn=mask.size - tp - fp - fn, fn=fn)


def accuracy(c: ConfusionCounts) -> float:
    """``(|TP| + |N| - |FP|) / (|P| + |N|)``, i.e. the fraction of correct pixels."""
    if c.total == 0:
        raise DataError("accuracy of an empty image is undefined")
    return (c.tp + c.n - c.fp) / (c.p + c.n)


def otsu_threshold(img: np.ndarray, bins: int = OTSU_BINS) -> float:
    """Threshold maximizing between-class variance over a ``bins``-bin histogram.

    Pixels ``> threshold`` form the upper class. The threshold is the upper
    edge of the last bin of the lower class; ties go to the lower threshold.
    """
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise DataError("otsu: image has non-finite values")
    lo, hi = float(img.min()), float(img.max())
    if not hi > lo:
        raise DataError("otsu: constant image has no threshold")
    hist, edges = np.histogram(img, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)[:-1].astype(np.float64)
    total = float(hist.sum())
    w1 = total - w0
    s0 = np.cumsum(hist * centers)[:-1]
    s1 = float((hist * centers).sum()) - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -np.inf)
    k = int(np.argmax(between))
    return float(edges[k + 1])


def otsu_segment(img: np.ndarray) -> np.ndarray:
    """Baseline: threshold the raw frame at its Otsu level."""
    return np.asarray(img) > otsu_threshold(img)


@dataclass
class EvalReport:
    names: list[str]
    counts: list[ConfusionCounts]
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "tp", "fp", "tn", "fn", "acc"])
            for name, c, acc in zip(self.names, self.counts, self.accuracies):
                writer.writerow([name, c.tp, c.fp, c.tn, c.fn, repr(acc)])
            writer.writerow(["mean", "", "", "", "", repr(self.mean)])


def evaluate(masks: Sequence[np.ndarray], truths: Sequence[np.ndarray],
             names: Sequence[str] | None = None) -> EvalReport:
    if len(masks) != len(truths):
        raise DataError(f"{len(masks)} masks but {len(truths)} truth frames")
    if not masks:
        raise DataError("nothing to evaluate")
    names = list(names) if names is not None else [str(k) for k in range(len(masks))]
    counts = [confusion(m, t) for m, t in zip(masks, truths)]
    return EvalReport(names, counts, [accuracy(c) for c in counts])


STAGES = ("decompose", "restore", "segment")


@dataclass
class BenchReport:
    samples: dict[str, list[float]] = field(default_factory=lambda: {s: [] for s in STAGES})

    def median(self, stage: str) -> float:
        return statistics.median(self.samples[stage])

    @property
    def total_median(self) -> float:
        return statistics.median([sum(v) for v in zip(*self.samples.values())])

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["stage", "repetition", "seconds"])
            for stage, values in self.samples.items():
                for i, t in enumerate(values, 1):
                    writer.writerow([stage, i, f"{t:.6f}"])
                writer.writerow([stage, "median", f"{self.median(stage):.6f}"])


def bench(seq, config, repetitions: int = 3) -> BenchReport:
    """Wall-clock time of each pipeline stage, ``repetitions`` times."""
    from idpseg.core import stack
    from idpseg.lowrank import decompose
    from idpseg.optics import idp_bank, psf_bank
    from idpseg.segment import restore, segment_frame

    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    report = BenchReport()
    for _ in range(repetitions):
        t0 = time.perf_counter()
        dec = decompose(stack(seq), seq.shape, config.alm)
        t1 = time.perf_counter()
        idp = idp_bank(psf_bank(config.optics), seq.shape, config.optics.inv_reg)
        fg = dec.foreground.T.reshape(seq.frames.shape)
        responses = [restore(f, idp) for f in fg]
        t2 = time.perf_counter()
        for rs in responses:
            segment_frame(rs, config.segment)
        t3 = time.perf_counter()
        report.samples["decompose"].append(t1 - t0)
        report.samples["restore"].append(t2 - t1)
        report.samples["segment"].append(t3 - t2)
    return report
