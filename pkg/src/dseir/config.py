"""Run configuration: YAML files validated with pydantic.

Unknown keys are errors. Gamma priors use the shape-rate convention
(density proportional to x**(shape - 1) * exp(-rate * x)).
"""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Annotated, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import (BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt,
                      ValidationError, model_validator)

from .model import ModelSpec
from .observation import ObsModelSpec
from .priors import (Beta, Fixed, Gamma, InitialState, InvSqrtUniform, LogitNormal, Normal,
                     PriorSet)
from .smc import FilterOptions, required_params

PRESETS = ("synthetic_sir", "ebola", "covid_ny")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --- priors -------------------------------------------------------------------

class GammaPrior(_Strict):
    dist: Literal["gamma"]
    shape: PositiveFloat
    rate: PositiveFloat

    def build(self):
        return Gamma(self.shape, self.rate)


class BetaPrior(_Strict):
    dist: Literal["beta"]
    a: PositiveFloat
    b: PositiveFloat

    def build(self):
        return Beta(self.a, self.b)


class NormalPrior(_Strict):
    dist: Literal["normal"]
    mean: float
    sd: PositiveFloat

    def build(self):
        return Normal(self.mean, self.sd)


class LogitNormalPrior(_Strict):
    dist: Literal["logit-normal"]
    mean: float
    sd: PositiveFloat

    def build(self):
        return LogitNormal(self.mean, self.sd)


class InvSqrtUniformPrior(_Strict):
    """1/sqrt(nu) ~ Uniform(0, upper)."""

    dist: Literal["inv-sqrt-uniform"]
    upper: PositiveFloat

    def build(self):
        return InvSqrtUniform(self.upper)


class FixedValue(_Strict):
    dist: Literal["fixed"]
    value: float

    def build(self):
        return Fixed(self.value)


PriorConfig = Annotated[Union[GammaPrior, BetaPrior, NormalPrior, LogitNormalPrior,
                              InvSqrtUniformPrior, FixedValue], Field(discriminator="dist")]

PARAM_NAMES = ("gamma", "kappa", "beta", "lambda_beta", "lambda_rho", "rho", "nu")
LATENT_NAMES = ("log_beta0", "rho0")

# prior families that keep each parameter in its support
_ALLOWED = {
    "gamma": ("gamma", "fixed"), "kappa": ("gamma", "fixed"), "beta": ("gamma", "fixed"),
    "lambda_beta": ("gamma", "fixed"), "lambda_rho": ("gamma", "fixed"),
    "rho": ("beta", "logit-normal", "fixed"), "nu": ("gamma", "inv-sqrt-uniform", "fixed"),
    "log_beta0": ("normal", "fixed"), "rho0": ("beta", "logit-normal", "fixed"),
}


# --- blocks -------------------------------------------------------------------

Category = List[Tuple[int, PositiveFloat]]


class ModelBlock(_Strict):
    kind: Literal["SIR", "SEIR"]
    pop_size: PositiveInt
    contact_mode: Literal["constant", "brownian-log"] = "constant"
    reporting_mode: Literal["constant", "brownian-logit"] = "constant"
    contact_scaling: Literal["mass-action", "frequency"] = "mass-action"
    drift: str = "zero"
    diffusion: str = "precision"
    # compartment name -> fixed count or list of [value, probability]
    initial_state: Dict[str, Union[int, Category]]


class ObservationBlock(_Strict):
    family: Literal["binomial", "negative-binomial"]
    spacing: PositiveFloat = 1.0


class PmmhBlock(_Strict):
    iters: PositiveInt = 200_000
    particles: PositiveInt = 100
    bridge: bool = False
    proposal_sd: Union[PositiveFloat, List[PositiveFloat]] = 0.05
    pilot_burn_in: float = Field(0.1, ge=0.0, lt=1.0)


class LnaBlock(_Strict):
    ode_step: PositiveFloat = 0.01
    iters: PositiveInt = 100_000
    proposal_sd: Union[PositiveFloat, List[PositiveFloat]] = 0.05
    pilot_burn_in: float = Field(0.1, ge=0.0, lt=1.0)
    forecast_samples: PositiveInt = 1000


class ForecastBlock(_Strict):
    windows: PositiveInt = 5
    horizon: Literal[1] = 1
    quantiles: List[float] = [0.025, 0.25, 0.5, 0.75, 0.975]
    skip_zero: bool = True


class AlgorithmBlock(_Strict):
    particles: PositiveInt = 50_000
    dtau: PositiveFloat = 0.1
    liu_west_delta: float = Field(0.99, gt=1.0 / 3.0, le=1.0)
    seed: int = Field(0, ge=0)
    resampler: Literal["systematic", "multinomial"] = "systematic"
    bridge: bool = True
    workers: Optional[PositiveInt] = None
    block_size: PositiveInt = 8192
    quantiles: List[float] = [0.025, 0.975]
    pmmh: PmmhBlock = PmmhBlock()
    lna: LnaBlock = LnaBlock()
    forecast: ForecastBlock = ForecastBlock()


class IoBlock(_Strict):
    data: Optional[str] = None
    output_dir: str = "out"


class SimulationBlock(_Strict):
    """Ground truth used by ``simulate`` and when no data file is given."""

    truth: Dict[str, float]
    n_windows: PositiveInt
    dtau: PositiveFloat = 0.001
    seed: int = Field(0, ge=0)


class RunConfig(_Strict):
    model: ModelBlock
    observation: ObservationBlock
    priors: Dict[str, PriorConfig]
    algorithm: AlgorithmBlock = AlgorithmBlock()
    io: IoBlock = IoBlock()
    simulation: Optional[SimulationBlock] = None

    @model_validator(mode="after")
    def _check(self):
        spec = self.model_spec()
        obs = self.obs_spec()
        names = set(spec.compartments)
        given = set(self.model.initial_state)
        if given != names:
            raise ValueError(f"model.initial_state: expected compartments {sorted(names)}, "
                             f"got {sorted(given)}")
        for c, v in self.model.initial_state.items():
            values = [v] if isinstance(v, int) else [a for a, _ in v]
            if any(a < 0 for a in values):
                raise ValueError(f"model.initial_state.{c}: counts must be non-negative")
        if self.prior_set().initial_state.max_total() > spec.pop_size:
            raise ValueError("model.initial_state: counts exceed model.pop_size")
        need = set(required_params(spec, obs))
        if spec.time_varying_contact:
            need.add("log_beta0")
        if spec.time_varying_reporting:
            need.add("rho0")
        have = set(self.priors)
        for name in sorted(have - set(PARAM_NAMES) - set(LATENT_NAMES)):
            raise ValueError(f"priors.{name}: unknown parameter")
        for name in sorted(need - have):
            raise ValueError(f"priors.{name}: the model needs a prior or fixed value")
        for name in sorted(have - need):
            raise ValueError(f"priors.{name}: not used by this model")
        for name, p in self.priors.items():
            if p.dist not in _ALLOWED[name]:
                raise ValueError(f"priors.{name}: dist {p.dist!r} not allowed, "
                                 f"use one of {_ALLOWED[name]}")
        _check_divides(self.algorithm.dtau, self.observation.spacing, "algorithm.dtau")
        _check_divides(self.algorithm.lna.ode_step, self.observation.spacing,
                       "algorithm.lna.ode_step")
        for q in self.algorithm.quantiles + self.algorithm.forecast.quantiles:
            if not 0.0 <= q <= 1.0:
                raise ValueError("quantiles must lie in [0, 1]")
        if self.simulation is not None:
            _check_divides(self.simulation.dtau, self.observation.spacing, "simulation.dtau")
            allowed = set(PARAM_NAMES) | set(LATENT_NAMES)
            for name in self.simulation.truth:
                if name not in allowed:
                    raise ValueError(f"simulation.truth.{name}: unknown parameter")
            for name in sorted(need - set(self.simulation.truth)):
                if isinstance(self.priors[name], FixedValue):
                    continue
                raise ValueError(f"simulation.truth.{name}: missing ground-truth value")
        return self

    # --- builders ---------------------------------------------------------

    def model_spec(self) -> ModelSpec:
        m = self.model
        try:
            return ModelSpec(kind=m.kind, pop_size=m.pop_size, contact_mode=m.contact_mode,
                             reporting_mode=m.reporting_mode,
                             contact_scaling=m.contact_scaling, drift=m.drift,
                             diffusion=m.diffusion)
        except ValueError as exc:
            raise ValueError(f"model: {exc}") from None

    def obs_spec(self) -> ObsModelSpec:
        spec = self.model_spec()
        try:
            return ObsModelSpec(self.observation.family, spec.observed_reaction,
                                dynamic_rho=spec.time_varying_reporting)
        except ValueError as exc:
            raise ValueError(f"observation.family: {exc}") from None

    def prior_set(self) -> PriorSet:
        spec = self.model_spec()
        init = []
        for c in spec.compartments:
            v = self.model.initial_state[c]
            init.append(int(v) if isinstance(v, int) else tuple((int(a), float(p))
                                                               for a, p in v))
        params = {k: p.build() for k, p in self.priors.items() if k in PARAM_NAMES}
        lb = self.priors.get("log_beta0")
        r0 = self.priors.get("rho0")
        return PriorSet(params=params, initial_state=InitialState(tuple(init)),
                        log_beta0=None if lb is None else lb.build(),
                        rho0=None if r0 is None else r0.build())

    def filter_options(self, workers: Optional[int] = None) -> FilterOptions:
        a = self.algorithm
        return FilterOptions(bridge=a.bridge, resampler=a.resampler,
                             liu_west_delta=a.liu_west_delta,
                             workers=workers or a.workers or 1, block_size=a.block_size,
                             quantiles=tuple(a.quantiles))

    def sha256(self) -> str:
        """Hash of the canonical config; the output directory is not part of a run's identity."""
        blob = json.dumps(self.model_dump(mode="json", exclude={"io": {"output_dir"}}),
                          sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _check_divides(step: float, spacing: float, key: str):
    m = round(spacing / step)
    if m < 1 or abs(m * step - spacing) > 1e-9 * max(1.0, spacing):
        raise ValueError(f"{key}: {step} does not divide the observation spacing {spacing}")


# --- loading ------------------------------------------------------------------

def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        msg = err["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        lines.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(lines)


def set_path(d: dict, dotted: str, value) -> None:
    """Set ``a.b.c = value`` inside nested dicts, creating levels as needed."""
    keys = dotted.split(".")
    cur = d
    for k in keys[:-1]:
        nxt = cur.get(k)
        if nxt is None:
            nxt = cur[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"{dotted}: {k} is not a mapping")
        cur = nxt
    cur[keys[-1]] = value


def parse_override(text: str):
    """``key.path=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def preset_path(name: str) -> Path:
    return Path(str(resources.files("dseir") / "presets" / f"{name}.yaml"))


def resolve_config_path(path_or_preset: str) -> Path:
    p = Path(path_or_preset)
    if p.exists():
        return p
    if path_or_preset in PRESETS:
        return preset_path(path_or_preset)
    raise ConfigError(f"config file {path_or_preset!r} not found "
                      f"(shipped presets: {', '.join(PRESETS)})")


def load_raw(path_or_preset: str) -> tuple:
    path = resolve_config_path(path_or_preset)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw, path


def validate(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_config(path_or_preset: str, overrides=()) -> RunConfig:
    """Load, apply ``key.path=value`` overrides and validate.

    A relative ``io.data`` path is resolved against the config file's
    directory.
    """
    raw, path = load_raw(path_or_preset)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        set_path(raw, key, value)
    cfg = validate(raw)
    if cfg.io.data is not None and not Path(cfg.io.data).is_absolute():
        candidate = path.parent / cfg.io.data
        if candidate.exists() or not Path(cfg.io.data).exists():
            cfg.io.data = str(candidate)
    return cfg
