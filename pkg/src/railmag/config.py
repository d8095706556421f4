"""Flat ``key = value`` run configuration.

Every tunable of the filter, the orchestrator and the synthetic generators
lives in one namespace.  Files and ``--set KEY=VALUE`` overrides go through
the same parser, unknown keys are rejected, and values are validated by
building the typed config objects.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

from railmag.errors import ConfigError, RailmagError
from railmag.hybrid import HybridConfig
from railmag.pf import PfConfig
from railmag.synth import RunSpec, SynthSpec
from railmag.track import GeoPoint


def _parse_profile(text: str) -> tuple[tuple[float, float], ...]:
    """``"60:15, 120:40"`` -> ``((60, 15), (120, 40))``."""
    legs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        dur, _, v = part.partition(":")
        if not _:
            raise ValueError(f"profile leg {part!r} is not duration:velocity")
        legs.append((float(dur), float(v)))
    if not legs:
        raise ValueError("empty profile")
    return tuple(legs)


def _format_profile(legs) -> str:
    return ",".join(f"{d:g}:{v:g}" for d, v in legs)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


@dataclass(frozen=True)
class _Key:
    parse: object
    default: object
    doc: str
    fmt: object = None

    def format(self, value) -> str:
        if self.fmt is not None:
            return self.fmt(value)
        if value is None:
            return "none"
        if isinstance(value, float):
            return repr(value)
        return str(value)


KEYS: dict[str, _Key] = {
    # particle filter
    "q": _Key(float, 0.53, "process-noise intensity"),
    "kernel": _Key(str, "modified", "likelihood kernel: modified | gaussian"),
    "sigma": _Key(float, 10.0, "Gaussian kernel scale (field units)"),
    "dt": _Key(float, 0.1, "filter update interval (s)"),
    "ess_frac": _Key(float, 0.5, "resample when ESS < ess_frac * N"),
    "var_threshold": _Key(float, 2500.0, "divergence threshold on position variance (m^2)"),
    "n_particles": _Key(int, 10000, "particles per filter"),
    "x0": _Key(_opt_float, None, "warm-start position (m); none = truth at start"),
    "init_spread": _Key(float, 50.0, "warm-start position half-width (m)"),
    "v0": _Key(_opt_float, None, "warm-start velocity (m/s); none = velocity channel"),
    "v_spread": _Key(float, 1.0, "initial velocity standard deviation (m/s)"),
    "v_prior_min": _Key(float, 0.0, "cold-start velocity prior lower bound (m/s)"),
    "v_prior_max": _Key(float, 50.0, "cold-start velocity prior upper bound (m/s)"),
    # orchestrator
    "n": _Key(float, 100.0, "lookback window (m)"),
    "ell": _Key(int, 100, "burn-phase updates"),
    "align_metric": _Key(str, "dtw", "alignment distance: dtw | euclid"),
    "v_start_min": _Key(float, 10.0, "minimum speed before aligning (m/s)"),
    "coincide_radius": _Key(float, 25.0, "burn-phase survivors closer than this are merged (m)"),
    "evidence_margin": _Key(float, 30.0, "burn-phase evidence gap that retires a filter (nats); inf disables"),
    # evaluation
    "threshold": _Key(float, 25.0, "convergence radius (m)"),
    # synthetic map
    "length": _Key(float, 5000.0, "synthetic map length (m)"),
    "dx": _Key(float, 0.25, "map grid step (m)"),
    "field_scale": _Key(float, 20.0, "per-axis field standard deviation"),
    "corr_length": _Key(float, 5.0, "field feature length (m)"),
    "anchor_lat": _Key(float, 46.2, "latitude of s = 0 (deg)"),
    "anchor_lon": _Key(float, 7.3, "longitude of s = 0 (deg)"),
    "heading_deg": _Key(float, 60.0, "track bearing (deg)"),
    "spike_spacing": _Key(float, 200.0, "mean distance between field spikes (m)"),
    "spike_amplitude": _Key(float, 5.0, "spike amplitude in units of field_scale"),
    "spike_width": _Key(float, 2.0, "spike width (m)"),
    # synthetic run
    "profile": _Key(_parse_profile, ((120.0, 20.0),), "velocity legs duration:target,...", _format_profile),
    "v_init": _Key(_opt_float, None, "initial velocity (m/s); none = first target"),
    "sensor_rate": _Key(float, 100.0, "raw sample rate (Hz)"),
    "noise_sigma": _Key(float, 0.4, "per-axis sensor noise (field units)"),
    "v_noise": _Key(float, 0.0, "velocity channel noise (m/s)"),
    "start_s": _Key(float, 500.0, "run start arclength (m)"),
    "seed": _Key(int, 0, "master seed"),
}


class RunConfig:
    """Validated flat configuration.  ``explicit`` lists keys set by a file or
    an override rather than left at their defaults."""

    def __init__(self, values: dict | None = None):
        self.values = {k: spec.default for k, spec in KEYS.items()}
        self.explicit: set[str] = set()
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value, source: str = "override"):
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{source}: unknown configuration key {key!r}")
        if isinstance(value, str):
            try:
                value = KEYS[key].parse(value.strip())
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None
        self.values[key] = value
        self.explicit.add(key)

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def load(cls, path=None, overrides=()) -> RunConfig:
        cfg = cls()
        if path is not None:
            path = Path(path)
            text = path.read_text(encoding="utf-8")
            for lineno, raw in enumerate(text.splitlines(), start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                key, eq, value = line.partition("=")
                if not eq:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                cfg.set(key, value, source=f"{path}:{lineno}")
        for item in overrides:
            key, eq, value = item.partition("=")
            if not eq:
                raise ConfigError(f"override {item!r}: expected KEY=VALUE")
            cfg.set(key, value, source=f"--set {item}")
        cfg.validate()
        return cfg

    def dump(self) -> str:
        return "".join(f"{k} = {KEYS[k].format(self.values[k])}\n" for k in sorted(KEYS))

    def digest(self) -> str:
        return hashlib.sha256(self.dump().encode("utf-8")).hexdigest()

    def validate(self):
        try:
            self.pf_config()
            self.hybrid_config()
            self.synth_spec()
            self.run_spec()
        except RailmagError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        if self["init_spread"] < 0:
            raise ConfigError("init_spread must be non-negative")
        if self["v_prior_max"] < self["v_prior_min"]:
            raise ConfigError("v_prior_max must not be below v_prior_min")
        if not self["threshold"] > 0:
            raise ConfigError("threshold must be positive")
        if math.isnan(self["evidence_margin"]):
            raise ConfigError("evidence_margin must be a number")

    # typed views ------------------------------------------------------------

    def pf_config(self) -> PfConfig:
        v = self.values
        return PfConfig(
            q=v["q"],
            kernel=v["kernel"],
            sigma=v["sigma"],
            dt=v["dt"],
            ess_frac=v["ess_frac"],
            var_threshold=v["var_threshold"],
        )

    def hybrid_config(self) -> HybridConfig:
        v = self.values
        return HybridConfig(
            n=v["n"],
            ell=v["ell"],
            var_threshold=v["var_threshold"],
            pf=self.pf_config(),
            align_metric=v["align_metric"],
            v_start_min=v["v_start_min"],
            n_particles=v["n_particles"],
            v_spread=v["v_spread"],
            coincide_radius=v["coincide_radius"],
            evidence_margin=v["evidence_margin"],
        )

    def synth_spec(self) -> SynthSpec:
        v = self.values
        return SynthSpec(
            length=v["length"],
            dx=v["dx"],
            seed=v["seed"],
            field_scale=v["field_scale"],
            corr_length=v["corr_length"],
            geo_anchor=GeoPoint(v["anchor_lat"], v["anchor_lon"]),
            heading_deg=v["heading_deg"],
            spike_spacing=v["spike_spacing"],
            spike_amplitude=v["spike_amplitude"],
            spike_width=v["spike_width"],
        )

    def run_spec(self, seed: int | None = None, start_s: float | None = None) -> RunSpec:
        v = self.values
        return RunSpec(
            profile=v["profile"],
            sensor_rate=v["sensor_rate"],
            noise_sigma=v["noise_sigma"],
            start_s=v["start_s"] if start_s is None else start_s,
            seed=v["seed"] if seed is None else seed,
            v_init=v["v_init"],
            v_noise=v["v_noise"],
        )
