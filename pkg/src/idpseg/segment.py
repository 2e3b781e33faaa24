"""Restoration with the inverse diffraction pattern bank, fusion, binarization
and connected-component labeling, plus the end-to-end pipeline."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from idpseg.core import DataError, ImageSequence, save_mask, stack, write_image
from idpseg.evaluation import otsu_threshold
from idpseg.lowrank import Decomposition, decompose
from idpseg.optics import IdpBank, convolve_freq, idp_bank, psf_bank

logger = logging.getLogger(__name__)

FUSIONS = ("min-energy", "max-positive", "max-abs", "single-phase")
BINARIZERS = ("otsu", "quantile", "fixed")


@dataclass(frozen=True)
class SegmentParams:
    """Fusion, thresholding and component filtering.

    ``phase`` is the 1-based bank index used by ``single-phase`` fusion.
    """

    fusion: str = "min-energy"
    phase: int = 1
    binarize: str = "otsu"
    threshold: float = 0.5
    quantile: float = 0.9
    min_area: int = 9

    def __post_init__(self):
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {', '.join(FUSIONS)}")
        if self.binarize not in BINARIZERS:
            raise ValueError(f"binarize must be one of {', '.join(BINARIZERS)}")
        if self.phase < 1:
            raise ValueError("phase must be >= 1")
        if not 0 <= self.quantile <= 1:
            raise ValueError("quantile must lie in [0, 1]")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")


@dataclass(frozen=True)
class ResponseStack:
    responses: np.ndarray  # (M, h, w)
    phases: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.phases)


@dataclass(frozen=True)
class SegmentationResult:
    mask: np.ndarray
    labels: np.ndarray
    cell_count: int
    areas: tuple[int, ...]
    threshold: float = float("nan")


def restore(gbar: np.ndarray, bank: IdpBank) -> ResponseStack:
    """Filter a background-subtracted frame with every inverse pattern of ``bank``."""
    gbar = np.asarray(gbar, dtype=np.float64)
    if gbar.shape != bank.image_shape:
        raise DataError(f"frame shape {gbar.shape} does not match bank built for {bank.image_shape}")
    return ResponseStack(np.stack([convolve_freq(gbar, f) for f in bank.filters]), bank.phases)


def combine_responses(rs: ResponseStack, strategy: str = "min-energy", phase: int = 1) -> np.ndarray:
    """Fuse the per-phase responses into one score map.

    ``min-energy`` keeps the response with the smallest L2 norm among those
    with nonnegative sum. Inverting a kernel that does not match the
    content amplifies it, so the least energetic restoration is the
    best-matched phase.
    """
    r = rs.responses
    if r.shape[0] == 0:
        raise ValueError("empty response stack")
    if strategy == "max-positive":
        return np.maximum(r.max(axis=0), 0.0)
    if strategy == "max-abs":
        return np.abs(r).max(axis=0)
    if strategy == "single-phase":
        if not 1 <= phase <= r.shape[0]:
            raise ValueError(f"phase index {phase} outside 1..{r.shape[0]}")
        return r[phase - 1]
    if strategy == "min-energy":
        energy = np.sqrt((r * r).sum(axis=(1, 2)))
        sums = r.sum(axis=(1, 2))
        candidates = np.flatnonzero(sums >= 0)
        if candidates.size == 0:
            candidates = np.arange(r.shape[0])
        return r[candidates[np.argmin(energy[candidates])]]
    raise ValueError(f"unknown fusion strategy {strategy!r}")


def binarize(score: np.ndarray, method: str = "otsu", value: float | None = None) -> tuple[np.ndarray, float]:
    """Return ``(score > threshold, threshold)``.

    ``value`` is the quantile for ``quantile`` and the threshold for
    ``fixed``. A constant score map under ``otsu`` gives an empty mask and
    an infinite threshold.
    """
    score = np.asarray(score, dtype=np.float64)
    if not np.all(np.isfinite(score)):
        raise DataError("score map has non-finite values")
    if method == "otsu":
        if score.max() == score.min():
            logger.warning("binarize: constant score map, returning an empty mask")
            return np.zeros(score.shape, dtype=bool), float("inf")
        t = otsu_threshold(score)
    elif method == "quantile":
        q = 0.9 if value is None else value
        t = float(np.quantile(score, q))
    elif method == "fixed":
        if value is None:
            raise ValueError("fixed binarization needs a threshold value")
        t = float(value)
    else:
        raise ValueError(f"unknown binarization method {method!r}")
    return score > t, t


_EIGHT = np.ones((3, 3), dtype=bool)


def connected_components(mask: np.ndarray, min_area: int = 0) -> SegmentationResult:
    """8-connected labeling; components smaller than ``min_area`` are dropped.

    Labels are ``1..cell_count`` in order of each component's first pixel
    in raster order.
    """
    mask = np.asarray(mask, dtype=bool)
    raw, count = ndimage.label(mask, structure=_EIGHT)
    if count == 0:
        return SegmentationResult(np.zeros_like(mask), np.zeros(mask.shape, dtype=np.int32), 0, ())
    flat = raw.ravel()
    ids, first = np.unique(flat, return_index=True)
    areas = np.bincount(flat, minlength=count + 1)
    order = [i for _, i in sorted(zip(first, ids)) if i != 0 and areas[i] >= min_area]
    relabel = np.zeros(count + 1, dtype=np.int32)
    relabel[order] = np.arange(1, len(order) + 1, dtype=np.int32)
    labels = relabel[raw]
    return SegmentationResult(labels > 0, labels, len(order), tuple(int(areas[i]) for i in order))


def segment_frame(rs: ResponseStack, params: SegmentParams) -> SegmentationResult:
    score = combine_responses(rs, params.fusion, params.phase)
    value = params.quantile if params.binarize == "quantile" else params.threshold
    mask, t = binarize(score, params.binarize, value)
    res = connected_components(mask, params.min_area)
    return SegmentationResult(res.mask, res.labels, res.cell_count, res.areas, t)


@dataclass
class PipelineResult:
    decomposition: Decomposition
    responses: list[ResponseStack]
    results: list[SegmentationResult]

    @property
    def masks(self) -> list[np.ndarray]:
        return [r.mask for r in self.results]


def run_pipeline(seq: ImageSequence, config, out_dir: str | Path | None = None,
                 threads: int = 1) -> PipelineResult:
    """Decompose, restore, fuse, binarize and label every frame of ``seq``.

    ``config`` is a :class:`idpseg.config.PipelineConfig`. With ``out_dir``
    the masks, restored responses, and ``diag.csv`` are written there.
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    try:
        dec = decompose(stack(seq), seq.shape, config.alm)
    except DataError as exc:
        raise DataError(f"decompose: {exc}") from exc
    idp = idp_bank(psf_bank(config.optics), seq.shape, config.optics.inv_reg)
    foreground = dec.foreground.T.reshape(seq.frames.shape)

    def work(frame):
        rs = restore(frame, idp)
        return rs, segment_frame(rs, config.segment)

    if threads == 1:
        out = [work(f) for f in foreground]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(work, foreground))
    result = PipelineResult(dec, [o[0] for o in out], [o[1] for o in out])
    if out_dir is not None:
        write_pipeline_outputs(result, out_dir, bit_depth=config.bit_depth)
    return result


def write_pipeline_outputs(result: PipelineResult, out_dir: str | Path, bit_depth: int = 8) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, (rs, seg) in enumerate(zip(result.responses, result.results)):
        save_mask(seg.mask, out_dir / "masks" / f"frame_{k:04d}.pgm")
        for m, resp in enumerate(rs.responses, 1):
            write_image(resp, out_dir / "restored" / f"phase_{m}" / f"frame_{k:04d}.pgm", bit_depth)
    with (out_dir / "diag.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "threshold", "cell_count", "total_area"])
        for k, seg in enumerate(result.results):
            writer.writerow([k, repr(seg.threshold), seg.cell_count, int(sum(seg.areas))])
    result.decomposition.write_csv(out_dir / "alm.csv")
