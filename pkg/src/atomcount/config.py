"""Flat ``section.key = value`` run configuration."""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

from .detection import DetectionConfig
from .gillespie import InitialDistribution, RateModel
from .physics import CavityParams

AUTO = "auto"


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    return str(v)


# key -> (parser, default)
SCHEMA = {
    "cavity.g0": (float, 24.3e6),
    "cavity.kappa": (float, 4.2e6),
    "cavity.gamma": (float, 2.6e6),
    "cavity.delta_c": (float, 0.0),
    "cavity.delta_4": (float, 4.0e6),
    "cavity.nbar_empty": (float, 0.02),
    "cavity.w0": (float, 23.4e-6),
    "cavity.lambda0": (float, 852.4e-9),
    "rates.gamma_10": (float, 1.0e5),
    "rates.y": (float, 0.5),
    "rates.Gamma_loss": (float, 8.5),
    "rates.i1_over_i0": (str, AUTO),
    "detection.sample_rate": (float, 1.0e4),
    "detection.detector_bandwidth": (float, 1.0e3),
    "detection.digital_bandwidth": (float, 100.0),
    "detection.noise_rms": (float, 0.18),
    "detection.amplitude_scale": (str, AUTO),
    "init.kind": (str, "poisson"),
    "init.mu": (float, 5.2),
    "init.n": (int, 3),
    "init.probs": (_floats, ()),
    "init.n_max": (int, 15),
    "analysis.t0": (float, 0.034),
    "analysis.amplitude_bins": (int, 100),
    "analysis.amplitude_max": (float, 1.2),
    "analysis.time_bin": (float, 0.01),
    "analysis.n_resolved": (int, 2),
    "analysis.min_prominence": (float, 0.002),
    "analysis.boundaries": (_floats, ()),
    "analysis.fit_n_max": (int, 15),
    "analysis.gamma_low": (float, 0.1),
    "analysis.gamma_high": (float, 100.0),
    "model.y_values": (_floats, (0.5, 0.1)),
    "model.n_max": (int, 10),
    "run.seed": (int, 20041),
    "run.n_traces": (int, 500),
    "run.duration": (float, 2.0),
    "run.out_dir": (str, "out"),
    "run.workers": (int, 1),
}


class RunConfig:
    """Validated run configuration.  Unknown keys are rejected."""

    def __init__(self, values: dict | None = None):
        self.values = {k: default for k, (_, default) in SCHEMA.items()}
        for key, value in (values or {}).items():
            self[key] = value
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def __setitem__(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser = SCHEMA[key][0]
        try:
            self.values[key] = parser(value) if isinstance(value, str) else (
                tuple(float(v) for v in value) if parser is _floats else parser(value))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def validate(self) -> None:
        try:
            self.cavity_params()
            self.rate_model()
            self.detection_config()
            self.initial_distribution()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self["run.n_traces"] < 1 or self["run.duration"] <= 0:
            raise ConfigError("run.n_traces must be >= 1 and run.duration > 0")
        b = self["analysis.boundaries"]
        if b and len(b) != self["analysis.n_resolved"] + 1:
            raise ConfigError("analysis.boundaries needs n_resolved + 1 values")

    # -- domain objects ----------------------------------------------------
    def cavity_params(self) -> CavityParams:
        return CavityParams(**{k.split(".", 1)[1]: v for k, v in self.values.items()
                               if k.startswith("cavity.")})

    def rate_model(self) -> RateModel:
        i1 = self["rates.i1_over_i0"]
        i1 = self.cavity_params().i1_over_i0 if i1 == AUTO else float(i1)
        return RateModel(self["rates.gamma_10"], self["rates.y"], self["rates.Gamma_loss"], i1)

    def detection_config(self) -> DetectionConfig:
        scale = self["detection.amplitude_scale"]
        scale = math.sqrt(self["cavity.nbar_empty"]) if scale == AUTO else float(scale)
        return DetectionConfig(self["detection.sample_rate"], self["detection.detector_bandwidth"],
                               self["detection.digital_bandwidth"], self["detection.noise_rms"], scale)

    def initial_distribution(self) -> InitialDistribution:
        kind = self["init.kind"]
        if kind == "poisson":
            return InitialDistribution.poisson(self["init.mu"], self["init.n_max"])
        if kind == "fixed":
            return InitialDistribution.fixed(self["init.n"])
        if kind == "explicit":
            return InitialDistribution.explicit(self["init.probs"])
        raise ValueError(f"init.kind must be poisson, fixed or explicit, got {kind!r}")

    @property
    def t_span(self) -> tuple[float, float]:
        t0 = self["analysis.t0"]
        return t0, t0 + self["run.duration"]

    # -- text form ---------------------------------------------------------
    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt_value(v)}\n" for k, v in self.values.items())

    @classmethod
    def loads(cls, text: str, source: str = "<string>") -> "RunConfig":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            values[key] = value.strip()
        return cls(values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.loads(text, str(path))

    @classmethod
    def reference_defaults(cls) -> "RunConfig":
        text = resources.files("atomcount").joinpath("defaults.cfg").read_text()
        return cls.loads(text, "defaults.cfg")
