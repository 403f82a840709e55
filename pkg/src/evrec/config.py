"""Flat key=value run configuration and reproducible seed derivation.

Configuration resolves in three layers, later wins: built-in defaults,
then a config file, then command-line overrides. The file format is one
``namespace.key = value`` per line with ``#`` comments, so any language
(or a human) can read and write it. The fully resolved configuration is
serialized next to every output, and replaying it reproduces the run
bitwise.

One global seed drives everything. Per-stage generators use
``derive_seed(seed, stage_name)``: the stage name is hashed with FNV-1a
(stable across runs and platforms, unlike Python's ``hash``), xor'd into
the seed, and passed through the splitmix64 finalizer, so stages are
decorrelated but reproducible from the single knob.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any

from .features import CODING_KINDS, FUSION_MODES, GaborConfig
from .segmentation import MsdConfig
from .snn import SnnConfig


class ConfigError(ValueError):
    """Unknown key or unparseable value."""


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "workers": 1,
    "paths.data": "",
    "paths.model": "",
    "paths.out": "out",

    "msd.tau_ms": 20.0,
    "msd.threshold": 30.0,
    "msd.confirm_window": 3,
    "msd.flush_tail": True,
    "msd.max_segment_ms": 2000.0,
    "msd.debug_slice_ms": 0.0,

    "gabor.scales": (3, 5, 7, 9),
    "gabor.sigmas": (1.2, 2.0, 2.8, 3.6),
    "gabor.lambdas": (1.5, 2.5, 3.5, 4.6),
    "gabor.orientations_deg": (0.0, 45.0, 90.0, 135.0),
    "gabor.gamma": 0.3,
    "feature.tau_leak_ms": 25.0,
    "feature.dump_c1": False,

    "coding.kind": "log",
    "coding.t_w_ms": 500.0,
    "coding.r_min": 0.2,
    "fusion.mode": "multiscale",

    "snn.v_rest": -65.0,
    "snn.v_reset": -65.0,
    "snn.e_exc": 0.0,
    "snn.e_inh": -100.0,
    "snn.tau_m": 100.0,
    "snn.tau_ge": 1.0,
    "snn.tau_gi": 2.0,
    "snn.v_t": -63.5,
    "snn.v_plus": 0.07,
    "snn.tau_thr": 1e7,
    "snn.tau_apre": 20.0,
    "snn.tau_apost": 30.0,
    "snn.tau_apost2": 40.0,
    "snn.a_plus": 0.1,
    "snn.a_minus": 0.001,
    "snn.w_inh": 2.4,
    "snn.t_d_ms": 0.3,
    "snn.dt_ms": 0.5,
    "snn.n_learning": 60,
    "snn.norm_L": 47.0,
    "snn.seed": -1,            # -1: derive from the global seed

    "train.epochs": 1,
    "train.shuffle_seed": -1,  # -1: derive from the global seed
    "split.fraction": 0.9,
    "split.runs": 10,

    "synth.classes": ("bar", "disc", "corner@45"),
    "synth.per_class": 40,
    "synth.width": 32,
    "synth.height": 32,
    "synth.duration_ms": 50.0,
    "synth.event_rate": 8.0,
    "synth.noise_rate": 0.5,
    "synth.velocity": (0.0, 0.2),
    "synth.size_px": 0.0,
    "synth.center_jitter_px": 2.0,

    "analysis.spike_bin_ms": 20.0,
    "analysis.response_bin": 0.1,
}


def _coerce(key: str, default: Any, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            parts = [p.strip() for p in text.split(",") if p.strip()]
            elem = default[0] if default else ""
            if isinstance(elem, int):
                return tuple(int(p) for p in parts)
            if isinstance(elem, float):
                return tuple(float(p) for p in parts)
            return tuple(parts)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r}") from None


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Resolved configuration: defaults < config file < CLI overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values = dict(DEFAULTS)
        if values:
            for key, val in values.items():
                self.set(key, val)

    def set(self, key: str, value: Any) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self._values[key] = _coerce(key, DEFAULTS[key], value)

    def copy(self) -> "RunConfig":
        return RunConfig(dict(self._values))

    def __getitem__(self, key: str) -> Any:
        if key not in self._values:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def update_from_file(self, path) -> None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = stripped.partition("=")
            self.set(key.strip(), value)

    def update_from_pairs(self, pairs) -> None:
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, _, value = pair.partition("=")
            self.set(key.strip(), value)

    def dumps(self) -> str:
        lines = [f"{key} = {_format(self._values[key])}"
                 for key in sorted(self._values)]
        return "\n".join(lines) + "\n"

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    # -- typed views used by the pipeline --------------------------------

    def msd_config(self) -> MsdConfig:
        return MsdConfig(tau_ms=self["msd.tau_ms"],
                         threshold=self["msd.threshold"],
                         confirm_window=self["msd.confirm_window"],
                         flush_tail=self["msd.flush_tail"],
                         max_segment_ms=self["msd.max_segment_ms"],
                         debug_slice_ms=self["msd.debug_slice_ms"])

    def gabor_config(self) -> GaborConfig:
        return GaborConfig(scales=tuple(self["gabor.scales"]),
                           sigmas=tuple(self["gabor.sigmas"]),
                           lambdas=tuple(self["gabor.lambdas"]),
                           orientations_deg=tuple(self["gabor.orientations_deg"]),
                           gamma=self["gabor.gamma"])

    def snn_config(self) -> SnnConfig:
        return SnnConfig(v_rest=self["snn.v_rest"], v_reset=self["snn.v_reset"],
                         e_exc=self["snn.e_exc"], e_inh=self["snn.e_inh"],
                         tau_m=self["snn.tau_m"], tau_ge=self["snn.tau_ge"],
                         tau_gi=self["snn.tau_gi"], v_t=self["snn.v_t"],
                         v_plus=self["snn.v_plus"], tau_thr=self["snn.tau_thr"],
                         tau_apre=self["snn.tau_apre"],
                         tau_apost=self["snn.tau_apost"],
                         tau_apost2=self["snn.tau_apost2"],
                         a_plus=self["snn.a_plus"], a_minus=self["snn.a_minus"],
                         w_inh=self["snn.w_inh"], t_d_ms=self["snn.t_d_ms"],
                         dt_ms=self["snn.dt_ms"], norm_l=self["snn.norm_L"])

    def validate_choices(self) -> None:
        if self["coding.kind"] not in CODING_KINDS:
            raise ConfigError(f"coding.kind must be one of {CODING_KINDS}")
        if self["fusion.mode"] not in FUSION_MODES:
            raise ConfigError(f"fusion.mode must be one of {FUSION_MODES}")

    def snn_seed(self) -> int:
        explicit = self["snn.seed"]
        return explicit if explicit >= 0 else derive_seed(self["seed"], "snn-init")

    def shuffle_seed(self) -> int:
        explicit = self["train.shuffle_seed"]
        return explicit if explicit >= 0 else derive_seed(self["seed"], "train-shuffle")


_MASK64 = (1 << 64) - 1


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, stage: str) -> int:
    """Stable per-stage seed from the single global seed."""
    return _splitmix64((seed & _MASK64) ^ _fnv1a64(stage.encode()))
