"""Project configuration: one YAML file with plant, uncertainty, weight,
tuning, architecture and scenario blocks."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources

import yaml

from .architecture import ActuationChain, DampingController, EngageLogic, Limiter, OuterLoop
from .plant import ParameterError, PlantParams
from .sim import Scenario, excitation_from_dict, swing_delta
from .synthesis import ControllerParams, TuneSpec, WeightSpec, build_controller
from .uncertainty import UncertaintySpec, nominal_sample

PLANT_KEYS = ("m_s", "m_r", "k", "c")
SCENARIO_KEYS = {"fill", "plant_kind", "excitation", "free_phase", "total_time", "engage",
                 "initial_angle_deg", "open_loop", "stroke_limit", "hold", "noise_std", "seed"}


class ConfigError(ValueError):
    pass


def _plant(block, where) -> PlantParams:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping")
    missing = [k for k in PLANT_KEYS if k not in block]
    if missing:
        raise ConfigError(f"{where}: missing {missing}")
    extra = set(block) - set(PLANT_KEYS)
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    try:
        vals = {k: float(block[k]) for k in PLANT_KEYS}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    for k in ("m_s", "m_r", "k"):
        if not vals[k] > 0:
            raise ConfigError(f"{where}: {k} must be positive")
    try:
        return PlantParams(**vals)
    except ParameterError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("scenarios", "fills"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def default_dict() -> dict:
    text = resources.files("slosh").joinpath("data/default.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


@dataclass
class ProjectConfig:
    """Validated, normalized configuration.  ``data`` is the full dict with
    defaults filled in; :meth:`to_dict` returns it for serialization."""

    data: dict

    @classmethod
    def from_dict(cls, d: dict | None) -> "ProjectConfig":
        if d is not None and not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        data = _merge(default_dict(), d or {})
        cfg = cls(data)
        cfg._validate()
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    # -- typed views ---------------------------------------------------------

    @property
    def plant(self) -> PlantParams:
        return _plant(self.data["plant"], "plant")

    def fill(self, name: str) -> PlantParams:
        fills = self.data.get("fills") or {}
        if name not in fills:
            raise ConfigError(f"unknown fill level {name!r}")
        return _plant(fills[name], f"fills.{name}")

    @property
    def uncertainty(self) -> UncertaintySpec:
        try:
            return UncertaintySpec(**self.data["uncertainty"])
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"uncertainty: {exc}") from None

    def weights_for(self, params: PlantParams) -> WeightSpec:
        w = dict(self.data["weights"])
        # corners follow the slosh mode unless pinned
        w.setdefault("omega_o", params.omega_o)
        try:
            return WeightSpec(**w)
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"weights: {exc}") from None

    @property
    def weights(self) -> WeightSpec:
        return self.weights_for(self.plant)

    @property
    def tune_init(self) -> ControllerParams:
        try:
            return ControllerParams(**self.data["tune"]["init"])
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"tune.init: {exc}") from None

    def tune_spec(self, seed: int | None = None) -> TuneSpec:
        kw = dict(self.data["tune"].get("spec") or {})
        kw.setdefault("seed", self.data["tune"]["seed"] if seed is None else seed)
        try:
            return TuneSpec.for_weights(self.weights, **kw)
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"tune.spec: {exc}") from None

    @property
    def actuation(self) -> ActuationChain:
        a = self.data["architecture"]
        return ActuationChain(a["lowpass_corner"], a["delay_T"], a["sensor_corner"])

    def controller(self, params: ControllerParams, plant: PlantParams | None = None,
                   engage: EngageLogic | None = None) -> DampingController:
        """Damping controller for ``plant`` (feed-forward mass and outer-loop
        bandwidth follow the plant's fill level)."""
        a = self.data["architecture"]
        plant = plant or self.plant
        outer = None
        if a.get("outer_gain", 0.0) > 0:
            bw = a.get("outer_bandwidth") or plant.omega_o / 10.0
            outer = OuterLoop(a["outer_gain"], bw)
            outer.check(plant.omega_o)
        return DampingController(
            core=build_controller(params),
            chain=self.actuation,
            m_r_model=plant.m_r,
            limiter=Limiter(a["accel_limit"], a["rate_limit"]),
            outer=outer,
            engage=engage or EngageLogic("max", a["engage_threshold"], a["refractory"]),
            dt=a["dt"],
            hold=a["hold"],
        )

    @property
    def scenario_names(self) -> list:
        return sorted(self.data.get("scenarios") or {})

    def scenario(self, name: str) -> tuple:
        """``(Scenario, open_loop_flag)`` for a named scenario."""
        scs = self.data.get("scenarios") or {}
        if name not in scs:
            raise ConfigError(f"unknown scenario {name!r}; known: {sorted(scs)}")
        s = dict(scs[name])
        unknown = set(s) - SCENARIO_KEYS
        if unknown:
            raise ConfigError(f"scenarios.{name}: unknown keys {sorted(unknown)}")
        params = self.fill(s["fill"]) if "fill" in s else self.plant
        a = self.data["architecture"]
        kw = dict(
            name=name,
            excitation=excitation_from_dict(s.get("excitation")),
            free_phase=float(s.get("free_phase", 1.0)),
            engage=s.get("engage", "max"),
            total_time=float(s.get("total_time", 15.0)),
            plant_kind=s.get("plant_kind", "linear"),
            sample=nominal_sample(params, a["delay_T"]),
            rig=self.actuation,
            initial_delta=swing_delta(float(s.get("initial_angle_deg", 0.0)), params),
            dt_ctrl=a["dt"],
            hold=s.get("hold", a["hold"]),
            stroke_limit=s.get("stroke_limit", 0.2),
            noise_std=float(s.get("noise_std", 0.0)),
            seed=int(s.get("seed", 0)),
        )
        try:
            return Scenario(**kw), bool(s.get("open_loop", False))
        except (TypeError, ParameterError) as exc:
            raise ConfigError(f"scenarios.{name}: {exc}") from None

    def _validate(self):
        for key in ("plant", "uncertainty", "weights", "tune", "architecture"):
            if not isinstance(self.data.get(key), dict):
                raise ConfigError(f"missing block {key!r}")
        self.plant
        for name in self.data.get("fills") or {}:
            self.fill(name)
        self.uncertainty
        self.weights
        self.tune_init
        self.tune_spec()
        try:
            self.actuation
            self.controller(self.tune_init)
        except (TypeError, KeyError, ParameterError) as exc:
            raise ConfigError(f"architecture: {exc}") from None
        for name in self.scenario_names:
            self.scenario(name)


def load_config(path=None) -> ProjectConfig:
    if path is None:
        return ProjectConfig.from_dict(None)
    try:
        with open(path, encoding="utf-8") as fh:
            d = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return ProjectConfig.from_dict(d)


def controller_to_dict(p: ControllerParams, **extra) -> dict:
    d = {k: float(v) for k, v in p.as_dict().items()}
    d.update(extra)
    return d


def controller_from_dict(d: dict) -> ControllerParams:
    keys = ("V", "zeta1", "zeta2", "omega_n", "omega_1", "omega_2")
    try:
        return ControllerParams(**{k: float(d[k]) for k in keys})
    except (KeyError, TypeError, ValueError, ParameterError) as exc:
        raise ConfigError(f"bad controller file: {exc}") from None

