"""Run configuration: one documented schema shared by the CLI and snapshots.

Keys are dotted paths (section.name). SCHEMA is the single source of truth
for defaults, types and help text; the CLI --help epilog and the config.json
snapshots written next to command outputs are both generated from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from . import metrics, model, simulate


@dataclass(frozen=True)
class Field:
    default: object
    kind: type
    doc: str


SCHEMA = {
    "seed": Field(0, int, "master PRNG seed shared by every command"),
    "threads": Field(1, int, "worker cap for parallel corpus build and eval"),
    "paths.corpus_dir": Field("corpus", str, "default corpus root (simulate output, train/eval input)"),
    "paths.run_dir": Field("run", str, "default training output dir (checkpoints, loss CSV)"),
    "paths.out_dir": Field("out", str, "default inference and evaluation output dir"),
    "simulate.n_clips": Field(50, int, "number of synthetic source clips to generate"),
    "simulate.train_fraction": Field(0.8, float, "fraction of clips assigned to the train split"),
    "simulate.min_duration_s": Field(1.6, float, "shortest generated source clip, seconds"),
    "simulate.max_duration_s": Field(3.2, float, "longest generated source clip, seconds"),
    "radar.carrier_wavelength_m": Field(simulate.DEFAULT_WAVELENGTH_M, float, "carrier wavelength in meters"),
    "radar.perception_cutoff_hz": Field(1000.0, float, "band limit of the recoverable vibration signal"),
    "radar.phase_noise_std_rad": Field(simulate.DEFAULT_PHASE_NOISE_STD_RAD, float, "gaussian phase noise std, radians"),
    "radar.clutter_phase_rad": Field(0.0, float, "static clutter phase offset, radians"),
    "radar.displacement_gain_m": Field(simulate.DEFAULT_DISPLACEMENT_M, float, "peak surface displacement, meters"),
    "net.input_size": Field(80, int, "square crop size, Mel bands x frames"),
    "net.levels": Field(3, int, "number of encoder/decoder scales"),
    "net.base_channels": Field(32, int, "channel width at the outermost scale"),
    "net.transformer_layers": Field(12, int, "transformer layers in the bottleneck"),
    "net.token_dim": Field(256, int, "transformer embedding width"),
    "net.heads": Field(4, int, "attention heads"),
    "net.token_patch": Field(1, int, "bottleneck cells per token (must be 1)"),
    "net.mlp_ratio": Field(4, int, "transformer MLP expansion factor"),
    "train.steps": Field(5000, int, "SGD steps"),
    "train.lr": Field(0.01, float, "SGD learning rate"),
    "train.checkpoint_every": Field(1000, int, "checkpoint interval in steps"),
    "infer.variant": Field("griffinlim", str, "waveform synthesis path used by infer"),
    "eval.variants": Field(list(metrics.VARIANTS), list, "synthesis variants scored by eval (comma list)"),
    "eval.griffin_lim_iters": Field(32, int, "phase retrieval iterations"),
}


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in doc.items():
        path = prefix + "." + key if prefix else str(key)
        if isinstance(value, dict):
            flat.update(_flatten(value, path))
        else:
            flat[path] = value
    return flat


def _coerce(key: str, value):
    kind = SCHEMA[key].kind
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError("config key %s expects an int, got %r" % (key, value))
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError("config key %s expects a number, got %r" % (key, value))
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ValueError("config key %s expects a string, got %r" % (key, value))
        return value
    if kind is list:
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ValueError("config key %s expects a list of strings, got %r" % (key, value))
        return list(value)
    raise AssertionError("unhandled schema kind %r" % kind)


class RunConfig:
    """Validated key-value store over SCHEMA; unknown keys are rejected."""

    def __init__(self, overrides: dict = None):
        self._values = {k: f.default for k, f in SCHEMA.items()}
        for key, value in (overrides or {}).items():
            self.set(key, value)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ValueError("missing config file %s" % path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError("%s is not valid JSON: %s" % (path, exc))
        if not isinstance(doc, dict):
            raise ValueError("%s: config root must be an object" % path)
        return cls(_flatten(doc))

    def get(self, key: str):
        if key not in SCHEMA:
            raise ValueError("unknown config key: %s" % key)
        return self._values[key]

    def set(self, key: str, value) -> None:
        if key not in SCHEMA:
            raise ValueError("unknown config key: %s" % key)
        self._values[key] = _coerce(key, value)

    def set_text(self, key: str, text: str) -> None:
        """Set one key from its CLI string form (--set KEY=VALUE)."""
        if key not in SCHEMA:
            raise ValueError("unknown config key: %s" % key)
        kind = SCHEMA[key].kind
        try:
            if kind is int:
                value = int(text)
            elif kind is float:
                value = float(text)
            elif kind is list:
                value = [v.strip() for v in text.split(",") if v.strip()]
            else:
                value = text
        except ValueError:
            raise ValueError("config key %s expects %s, got %r" % (key, kind.__name__, text))
        self.set(key, value)

    def to_nested(self) -> dict:
        doc = {}
        for key in sorted(self._values):
            node = doc
            parts = key.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = self._values[key]
        return doc

    def snapshot(self, path) -> None:
        """Write the fully resolved config as deterministic JSON."""
        text = json.dumps(self.to_nested(), indent=2, sort_keys=True) + "\n"
        Path(path).write_text(text)

    def radar_config(self) -> simulate.RadarConfig:
        return simulate.RadarConfig(
            carrier_wavelength_m=self.get("radar.carrier_wavelength_m"),
            perception_cutoff_hz=self.get("radar.perception_cutoff_hz"),
            phase_noise_std_rad=self.get("radar.phase_noise_std_rad"),
            clutter_phase_rad=self.get("radar.clutter_phase_rad"),
            displacement_gain_m=self.get("radar.displacement_gain_m"),
            rng_seed=self.get("seed"),
        )

    def net_config(self) -> model.NetConfig:
        fields = {k.split(".", 1)[1]: v for k, v in self._values.items()
                  if k.startswith("net.")}
        return model.NetConfig(**fields)


def schema_help() -> str:
    """Config key listing for --help; generated from SCHEMA so it cannot drift."""
    width = max(len(k) for k in SCHEMA)
    lines = ["configuration keys (JSON config file or --set KEY=VALUE; defaults shown):"]
    for key in sorted(SCHEMA):
        f = SCHEMA[key]
        lines.append("  %-*s  %s  (default %r)" % (width, key, f.doc, f.default))
    return "\n".join(lines)
