"""Pipeline configuration as flat ``section.key = value`` lines.

The format is a subset of TOML (dotted keys, ``#`` comments). Absent keys
take their defaults, unknown keys are rejected. ``"auto"`` selects the
data-driven default where a key has one.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from idpseg.gfl import GflParams
from idpseg.lowrank import AlmParams
from idpseg.optics import OpticsParams
from idpseg.segment import SegmentParams
from idpseg.synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    alm: AlmParams = field(default_factory=AlmParams)
    optics: OpticsParams = field(default_factory=OpticsParams)
    segment: SegmentParams = field(default_factory=SegmentParams)
    synth: SynthConfig = field(default_factory=SynthConfig)
    seed: int = 0
    pattern: str = "*.pgm"
    bit_depth: int = 8

    @property
    def gfl(self) -> GflParams:
        return self.alm.gfl


# (key, type, description); the symbol is what the quantity is usually written as
KEYS: dict[str, tuple[type, str]] = {
    "seed": (int, "seed for every random draw"),
    "io.pattern": (str, "filename glob for input frames"),
    "io.bit_depth": (int, "bit depth of written images (8 or 16)"),
    "alm.lam": (float, "λ, weight of the fused-lasso term (auto = 1/sqrt(max(pixels, frames)))"),
    "alm.mu0": (float, "μ₀, initial penalty (auto = 1.25 / largest singular value)"),
    "alm.rho": (float, "ρ, penalty growth factor, > 1"),
    "alm.epsilon_mu": (float, "ε, growth test threshold on the foreground change"),
    "alm.stop_tol": (float, "stop when ||A - B - E||_F / ||A||_F falls below this"),
    "alm.max_iters": (int, "outer iteration cap"),
    "gfl.gamma": (float, "γ, weight of the fused term against sparsity"),
    "gfl.sigma": (float, "σ, edge weight scale (auto = median neighbor difference per frame)"),
    "gfl.inner_max_iters": (int, "inner prox iteration cap"),
    "gfl.inner_tol": (float, "inner prox relative objective tolerance"),
    "optics.m_phases": (int, "M, number of phase retardations in the bank"),
    "optics.zeta_p": (float, "ς_p, phase ring amplitude attenuation"),
    "optics.airy_outer_radius": (float, "R, phase ring outer radius (cycles/pixel)"),
    "optics.airy_ring_width": (float, "W, phase ring width (cycles/pixel)"),
    "optics.kernel_size": (int, "odd kernel support K"),
    "optics.inv_reg": (float, "ε_inv, inverse filter regularizer"),
    "segment.fusion": (str, "min-energy | max-positive | max-abs | single-phase"),
    "segment.phase": (int, "1-based phase index for single-phase fusion"),
    "segment.binarize": (str, "otsu | quantile | fixed"),
    "segment.threshold": (float, "threshold for fixed binarization"),
    "segment.quantile": (float, "quantile for quantile binarization"),
    "segment.min_area": (int, "smallest kept component, pixels"),
    "synth.width": (int, "synthetic frame width"),
    "synth.height": (int, "synthetic frame height"),
    "synth.n_frames": (int, "synthetic frame count"),
    "synth.bg_rank": (int, "rank of the synthetic background"),
    "synth.cell_count": (int, "cells per frame"),
    "synth.radius_min": (float, "smallest cell semi-axis, pixels"),
    "synth.radius_max": (float, "largest cell semi-axis, pixels"),
    "synth.cell_phase": (float, "phase retardation of cells, radians"),
    "synth.noise_sigma": (float, "noise standard deviation"),
    "synth.noise_correlated": (bool, "rank-one noise shared by all frames"),
}

_AUTO = {"alm.lam", "alm.mu0", "gfl.sigma"}


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value):
    kind, _ = KEYS[key]
    if key in _AUTO and value == "auto":
        return None
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def defaults() -> dict:
    return to_flat(PipelineConfig())


def to_flat(cfg: PipelineConfig) -> dict:
    alm, gfl, opt, seg, syn = cfg.alm, cfg.alm.gfl, cfg.optics, cfg.segment, cfg.synth
    flat = {"seed": cfg.seed, "io.pattern": cfg.pattern, "io.bit_depth": cfg.bit_depth}
    for name in ("lam", "mu0", "rho", "epsilon_mu", "stop_tol", "max_iters"):
        flat[f"alm.{name}"] = getattr(alm, name)
    for f in dataclasses.fields(GflParams):
        flat[f"gfl.{f.name}"] = getattr(gfl, f.name)
    for f in dataclasses.fields(OpticsParams):
        flat[f"optics.{f.name}"] = getattr(opt, f.name)
    for f in dataclasses.fields(SegmentParams):
        flat[f"segment.{f.name}"] = getattr(seg, f.name)
    for name in ("width", "height", "n_frames", "bg_rank", "cell_count", "cell_phase",
                 "noise_sigma", "noise_correlated"):
        flat[f"synth.{name}"] = getattr(syn, name)
    flat["synth.radius_min"], flat["synth.radius_max"] = syn.cell_radius_range
    return flat


def from_flat(values: dict) -> PipelineConfig:
    unknown = sorted(set(values) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown key: {unknown[0]}")
    flat = defaults()
    flat.update({k: _coerce(k, v) for k, v in values.items()})

    def section(name):
        return {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith(name + ".")}

    def build(name, ctor, **kwargs):
        try:
            return ctor(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None

    gfl = build("gfl", GflParams, **section("gfl"))
    alm = build("alm", AlmParams, gfl=gfl, **section("alm"))
    optics = build("optics", OpticsParams, **section("optics"))
    segment = build("segment", SegmentParams, **section("segment"))
    syn = section("synth")
    radii = (syn.pop("radius_min"), syn.pop("radius_max"))
    synth = build("synth", SynthConfig, cell_radius_range=radii, seed=flat["seed"], **syn)
    if flat["io.bit_depth"] not in (8, 16):
        raise ConfigError("io.bit_depth: bit_depth must be 8 or 16")
    return PipelineConfig(alm, optics, segment, synth, flat["seed"], flat["io.pattern"], flat["io.bit_depth"])


def parse_config_text(text: str) -> PipelineConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return from_flat(_flatten(data))


def parse_config(path: str | Path | None) -> PipelineConfig:
    """Read a config file; ``None`` gives all defaults."""
    if path is None:
        return PipelineConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def _format(value) -> str:
    if value is None:
        return '"auto"'
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return str(value)


def dump_config(cfg: PipelineConfig | None = None) -> str:
    """Config text that :func:`parse_config_text` maps back to ``cfg``."""
    flat = to_flat(cfg or PipelineConfig())
    lines = []
    for key in KEYS:
        lines.append(f"# {KEYS[key][1]}")
        lines.append(f"{key} = {_format(flat[key])}")
    return "\n".join(lines) + "\n"


def describe_keys() -> str:
    flat = defaults()
    width = max(map(len, KEYS))
    return "\n".join(f"  {k:<{width}}  default {_format(flat[k]):<22} {KEYS[k][1]}" for k in KEYS)
