"""Synthetic phase contrast sequences with known background, cells and noise.

Observed frames are ``background + foreground + noise`` where

* the background is a positive combination of ``bg_rank`` smooth fields,
  so the stacked background has rank exactly ``bg_rank``;
* the foreground is a constant-phase ellipse map convolved with the PSF
  of ``cell_phase``; cells drift up to 2 px per frame and never overlap;
* noise is white gaussian, or one fixed random field scaled per frame
  (``noise_correlated``), which makes the noise stack rank one.

All randomness comes from a Philox counter-based generator seeded with
``seed``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from idpseg.core import ImageSequence, save_mask, write_sequence
from idpseg.optics import OpticsParams, convolve_freq, obscured_airy, psf

PRNG_NAME = "numpy.random.Philox"
MAX_STEP = 2.0
_BG_PEAK = 0.44
_GAP = 1  # free pixels kept between cells so they stay separate components
_RETRIES = 2000


@dataclass(frozen=True)
class SynthConfig:
    width: int = 64
    height: int = 64
    n_frames: int = 20
    bg_rank: int = 2
    cell_count: int = 6
    cell_radius_range: tuple[float, float] = (2.0, 3.5)
    cell_phase: float = math.pi / 4
    noise_sigma: float = 0.0
    noise_correlated: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cell_radius_range", tuple(float(r) for r in self.cell_radius_range))
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be positive")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if not 1 <= self.bg_rank <= self.n_frames:
            raise ValueError("bg_rank must satisfy 1 <= bg_rank <= n_frames")
        if self.cell_count < 0:
            raise ValueError("cell_count must be >= 0")
        lo, hi = self.cell_radius_range
        if not 1 <= lo <= hi:
            raise ValueError("cell_radius_range must satisfy 1 <= min <= max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class SynthDataset:
    sequence: ImageSequence
    background: np.ndarray
    foreground: np.ndarray
    noise: np.ndarray
    masks: np.ndarray
    phase_maps: np.ndarray
    manifest: dict = field(default_factory=dict)


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one named stream of a seeded dataset."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


_STREAM_BG, _STREAM_CELLS, _STREAM_NOISE = 0, 1, 2


def _smooth_field(rng: np.random.Generator, height: int, width: int, phi: float) -> np.ndarray:
    y, x = np.mgrid[0:height, 0:width]
    y = y / max(height - 1, 1) - 0.5
    x = x / max(width - 1, 1) - 0.5
    c = rng.uniform(-1, 1, 5)
    f = c[0] * x + c[1] * y + c[2] * x * y + c[3] * x * x + c[4] * y * y
    for _ in range(2):
        cy, cx = rng.uniform(-0.5, 0.5, 2)
        s = rng.uniform(0.15, 0.35)
        f = f + rng.uniform(0.5, 1.5) * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))
    # uneven illumination: a soft step across the field along direction phi
    f = f + 2.0 * np.tanh((x * np.cos(phi) + y * np.sin(phi) - rng.uniform(-0.2, 0.2)) / 0.1)
    f = (f - f.min()) / (np.ptp(f) or 1.0)
    return 0.05 + 0.95 * f


def gen_background(cfg: SynthConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """``(n, h, w)`` background stack of rank ``bg_rank``, values in about ``[0.01, 0.44]``."""
    rng = rng or make_rng(cfg.seed, _STREAM_BG)
    phi = rng.uniform(0, 2 * np.pi)
    basis = np.stack([_smooth_field(rng, cfg.height, cfg.width, phi) for _ in range(cfg.bg_rank)])
    coeffs = rng.uniform(0.5, 1.0, (cfg.n_frames, cfg.bg_rank))
    return np.einsum("kj,jhw->khw", coeffs * (_BG_PEAK / cfg.bg_rank), basis)


def ellipse_mask(shape, center, radii, angle) -> np.ndarray:
    y, x = np.mgrid[0:shape[0], 0:shape[1]]
    dy, dx = y - center[0], x - center[1]
    u = dx * math.cos(angle) + dy * math.sin(angle)
    v = -dx * math.sin(angle) + dy * math.cos(angle)
    return (u / radii[0]) ** 2 + (v / radii[1]) ** 2 <= 1.0


def _grown(mask: np.ndarray) -> np.ndarray:
    from scipy.ndimage import binary_dilation

    return binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=_GAP)


def gen_cells(cfg: SynthConfig, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Cell masks and phase maps, each ``(n, h, w)``.

    Cells are ellipses that move with a fixed velocity of at most 2 px per
    frame and bounce off the image border. A move that would touch
    another cell is replaced by staying put and reversing direction.
    """
    rng = rng or make_rng(cfg.seed, _STREAM_CELLS)
    shape = (cfg.height, cfg.width)
    n = cfg.n_frames
    masks = np.zeros((n,) + shape, dtype=bool)
    lo, hi = cfg.cell_radius_range
    cells = []
    occupied = np.zeros(shape, dtype=bool)
    for _ in range(cfg.cell_count):
        radii = rng.uniform(lo, hi, 2)
        angle = rng.uniform(0, math.pi)
        margin = math.ceil(radii.max()) + 1
        if cfg.height - 1 - 2 * margin < 0 or cfg.width - 1 - 2 * margin < 0:
            raise ValueError("cells do not fit in the frame; use a smaller cell_radius_range")
        for _ in range(_RETRIES):
            center = np.array([rng.uniform(margin, cfg.height - 1 - margin),
                               rng.uniform(margin, cfg.width - 1 - margin)])
            m = ellipse_mask(shape, center, radii, angle)
            if not (_grown(m) & occupied).any():
                break
        else:
            raise ValueError(
                f"could not place {cfg.cell_count} non-overlapping cells; "
                "reduce cell_count or cell_radius_range"
            )
        heading = rng.uniform(0, 2 * math.pi)
        speed = rng.uniform(1.0, MAX_STEP)
        velocity = speed * np.array([math.sin(heading), math.cos(heading)])
        cells.append({"radii": radii, "angle": angle, "margin": margin, "center": center,
                      "velocity": velocity, "mask": m})
        occupied |= m

    for k in range(n):
        if k > 0:
            for i, cell in enumerate(cells):
                target = cell["center"] + cell["velocity"]
                lim = np.array([cfg.height - 1, cfg.width - 1]) - cell["margin"]
                for axis in (0, 1):
                    if not cell["margin"] <= target[axis] <= lim[axis]:
                        cell["velocity"][axis] *= -1
                        target[axis] = cell["center"][axis] + cell["velocity"][axis]
                target = np.clip(target, cell["margin"], lim)
                m = ellipse_mask(shape, target, cell["radii"], cell["angle"])
                # processed cells are at their new place, the rest still at the old one
                others = np.zeros(shape, dtype=bool)
                for other in cells[:i] + cells[i + 1:]:
                    others |= other["mask"]
                if not (_grown(m) & others).any():
                    cell["center"], cell["mask"] = target, m
                else:
                    cell["velocity"] = -cell["velocity"]
        for cell in cells:
            masks[k] |= cell["mask"]
    phase_maps = np.where(masks, cfg.cell_phase, 0.0)
    return masks, phase_maps


def gen_noise(cfg: SynthConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = rng or make_rng(cfg.seed, _STREAM_NOISE)
    shape = (cfg.n_frames, cfg.height, cfg.width)
    if cfg.noise_sigma == 0:
        return np.zeros(shape)
    if cfg.noise_correlated:
        field_ = rng.normal(0.0, cfg.noise_sigma, shape[1:])
        scale = rng.uniform(0.5, 1.5, cfg.n_frames)
        return scale[:, None, None] * field_[None]
    return rng.normal(0.0, cfg.noise_sigma, shape)


def _checksum(a: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(a, dtype=np.float64).tobytes()).hexdigest()


def render(cfg: SynthConfig | None = None, optics: OpticsParams | None = None) -> SynthDataset:
    cfg = cfg or SynthConfig()
    optics = optics or OpticsParams()
    background = gen_background(cfg)
    masks, phase_maps = gen_cells(cfg)
    kernel = psf(cfg.cell_phase, obscured_airy(optics), optics.zeta_p)
    foreground = np.stack([convolve_freq(p, kernel) for p in phase_maps])
    noise = gen_noise(cfg)
    observed = background + foreground + noise
    layers = {"observed": observed, "background": background, "foreground": foreground,
              "noise": noise, "masks": masks.astype(np.float64)}
    manifest = {
        "config": asdict(cfg),
        "optics": asdict(optics),
        "prng": PRNG_NAME,
        "checksums": {name: _checksum(v) for name, v in layers.items()},
    }
    return SynthDataset(ImageSequence(observed), background, foreground, noise, masks, phase_maps, manifest)


def write_dataset(ds: SynthDataset, out_dir: str | Path, bit_depth: int = 16) -> None:
    """Write image directories, unquantized layers (``layers.npz``) and ``manifest.json``."""
    out_dir = Path(out_dir)
    write_sequence(ds.sequence.frames, out_dir / "observed", bit_depth)
    write_sequence(ds.background, out_dir / "truth_bg", bit_depth)
    write_sequence(ds.foreground, out_dir / "truth_fg", bit_depth)
    for k, m in enumerate(ds.masks):
        save_mask(m, out_dir / "truth_masks" / f"frame_{k:04d}.pgm")
    np.savez_compressed(out_dir / "layers.npz", observed=ds.sequence.frames, background=ds.background,
                        foreground=ds.foreground, noise=ds.noise, masks=ds.masks,
                        phase_maps=ds.phase_maps)
    (out_dir / "manifest.json").write_text(json.dumps(ds.manifest, indent=2) + "\n")
