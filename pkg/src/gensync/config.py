"""JSON scenario files.

One document with sections ``model``, ``params``, ``load``, ``disturbance``,
``thresholds``, ``agc``, ``sim`` and, depending on the model, ``damping``,
``signal`` and ``high_order``.  A ``sweep`` section feeds the sweep
command and ``bounds`` the bound report.  Angles may be written as numbers
in radians or as strings such as ``"0.25pi"``.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError

from .control import AgcParams
from .errors import ConfigError, ModelError
from .high_order import HighOrderParams
from .model import GeneratorParams
from .phase_damping import DampingProfile, KnownSignal
from .signals import Disturbance, LoadProfile
from .sim import Scenario
from .supervisor import SyncThresholds

_PI_RE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*pi\s*$")

DEFAULT_DT = {"damped": 1e-3, "phase-damping": 1e-3, "high-order": 1e-4}


def _angle(v):
    """Accept a number or '<x>pi' / '<x>*pi' / 'pi'."""
    if isinstance(v, str):
        m = _PI_RE.match(v)
        if not m:
            raise ValueError(f"not an angle: {v!r}")
        return float(m.group(1) or 1.0) * math.pi
    return v


Angle = Annotated[float, BeforeValidator(_angle)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class ParamsSection(_Section):
    k: float = 0.01
    omega0: float = 120.0 * math.pi
    d1_0: float = 0.0531
    d2_0: float = 0.0531
    k1: float = 0.6434
    k2: float = 0.4167
    x1: float = 0.0742
    x2: float = 0.0742
    c1: float = 0.0656
    c2: float = 0.00548
    ell_bar: float = 0.5
    inertia: float = 1.0


class LoadSection(_Section):
    shape: Literal["constant", "sinusoid", "ramp-hold", "user-samples"] = "sinusoid"
    ell_bar: float | None = None
    delta_ell: float = 0.01
    delta_ell_dot: float = 0.01
    onset_time: float = 5.0
    samples_csv: str | None = None


class DisturbanceSection(_Section):
    shape: Literal["zero", "constant", "sinusoid", "user-samples"] = "constant"
    amplitude: Angle = 0.0
    frequency: float = 0.0
    phase: Angle = 0.0
    samples_csv: str | None = None


class ThresholdsSection(_Section):
    max_speed_error: Angle = 0.134 * math.pi
    max_phase_error: Angle = 0.055 * math.pi
    freq_band: Angle = math.pi


class AgcSection(_Section):
    alpha1: float = 0.5
    alpha2: float = 0.5
    engage_time: float = 400.0
    init: Literal["bumpless", "zero"] = "bumpless"


class SimSection(_Section):
    horizon: float
    dt: float | None = None
    record_every: float = 0.1
    initial: list[float] | None = None
    allow_connection: bool = True
    speed_mode: Literal["true", "measured"] = "true"
    give_up_after: float | None = None


class DampingSection(_Section):
    kind: Literal["constant", "sinusoidal", "table"] = "constant"
    d0: float | None = None
    amplitude: float = 0.0
    angles: list[Angle] | None = None
    values: list[float] | None = None


class SignalSection(_Section):
    kind: Literal["load", "constant", "sinusoid"] = "load"
    value: float = 0.0
    offset: float = 0.0
    amplitude: float = 0.0
    frequency: float = 0.0


class SweepSection(_Section):
    k_values: list[float]
    d_values: list[Angle]
    workers: int | None = None


class BoundsSection(_Section):
    d_values: list[Angle] = Field(default_factory=lambda: [0.125 * math.pi, 0.25 * math.pi, 0.5 * math.pi])
    safety: float = 1.1
    horizon: float | None = None


class ConfigDocument(_Section):
    model: Literal["damped", "phase-damping", "high-order"] = "damped"
    params: ParamsSection
    load: LoadSection
    disturbance: DisturbanceSection
    thresholds: ThresholdsSection = Field(default_factory=ThresholdsSection)
    agc: AgcSection = Field(default_factory=AgcSection)
    sim: SimSection
    damping: DampingSection | None = None
    signal: SignalSection | None = None
    high_order: dict | str | None = None
    sweep: SweepSection | None = None
    bounds: BoundsSection = Field(default_factory=BoundsSection)
    description: str = ""


class LoadedConfig:
    """Validated document plus the objects built from it."""

    def __init__(self, doc: ConfigDocument, scenario: Scenario, base_dir: Path):
        self.doc = doc
        self.scenario = scenario
        self.base_dir = base_dir

    @property
    def sweep(self) -> SweepSection | None:
        return self.doc.sweep

    @property
    def bounds(self) -> BoundsSection:
        return self.doc.bounds


def _path_of(err: ValidationError) -> str:
    first = err.errors()[0]
    return ".".join(str(p) for p in first["loc"])


def parse_document(data: dict) -> ConfigDocument:
    try:
        return ConfigDocument.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], _path_of(exc)) from None


def _resolve(base_dir: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base_dir / p


def build_scenario(doc: ConfigDocument, base_dir: Path = Path("."), dt: float | None = None,
                   horizon: float | None = None) -> Scenario:
    """Turn a validated document into a :class:`Scenario`; ``dt``/``horizon`` override the file."""
    pd = doc.params.model_dump()
    try:
        params = GeneratorParams.reference(**pd)
    except ModelError as exc:
        raise ConfigError(str(exc), "params") from None

    ls = doc.load
    ell_bar = params.ell_bar if ls.ell_bar is None else ls.ell_bar
    if ls.shape == "user-samples":
        if ls.samples_csv is None:
            raise ConfigError("user-samples needs samples_csv", "load.samples_csv")
        load = LoadProfile.from_csv(_resolve(base_dir, ls.samples_csv), ell_bar=ell_bar,
                                    delta_ell=ls.delta_ell, delta_ell_dot=ls.delta_ell_dot)
    else:
        load = LoadProfile(ell_bar, ls.delta_ell, ls.delta_ell_dot, ls.onset_time, ls.shape)

    ds = doc.disturbance
    if ds.shape == "user-samples":
        if ds.samples_csv is None:
            raise ConfigError("user-samples needs samples_csv", "disturbance.samples_csv")
        from .signals import load_samples_csv

        dist = Disturbance("user-samples", samples=load_samples_csv(_resolve(base_dir, ds.samples_csv)))
    else:
        dist = Disturbance(ds.shape, ds.amplitude, ds.frequency, ds.phase)

    th = doc.thresholds
    thresholds = SyncThresholds(th.max_speed_error, th.max_phase_error, th.freq_band)
    ag = doc.agc
    agc = AgcParams(ag.alpha1, ag.alpha2, ag.engage_time, ag.init)

    damping = signal = high = None
    if doc.damping is not None:
        dm = doc.damping
        if dm.kind == "table":
            if dm.angles is None or dm.values is None:
                raise ConfigError("table profile needs angles and values", "damping.angles")
            damping = DampingProfile.table(dm.angles, dm.values)
        else:
            d0 = params.d1_0 if dm.d0 is None else dm.d0
            damping = DampingProfile.constant(d0) if dm.kind == "constant" else DampingProfile.sinusoidal(d0, dm.amplitude)
    if doc.signal is not None:
        sg = doc.signal
        if sg.kind == "load":
            signal = KnownSignal.from_load(load)
        elif sg.kind == "constant":
            signal = KnownSignal.constant(sg.value)
        else:
            signal = KnownSignal.sinusoid(sg.offset, sg.amplitude, sg.frequency)
    if doc.high_order is not None or doc.model == "high-order":
        high = load_high_order(doc.high_order, base_dir)

    sm = doc.sim
    step = dt if dt is not None else (sm.dt if sm.dt is not None else DEFAULT_DT[doc.model])
    hz = horizon if horizon is not None else sm.horizon
    return Scenario(
        params=params,
        load=load,
        disturbance=dist,
        thresholds=thresholds,
        agc=agc,
        horizon=hz,
        dt=step,
        model_kind=doc.model,
        initial=None if sm.initial is None else tuple(sm.initial),
        allow_connection=sm.allow_connection,
        record_every=max(sm.record_every, step),
        speed_mode=sm.speed_mode,
        give_up_after=sm.give_up_after,
        damping=damping,
        signal=signal,
        high_order=high,
    )


def load_high_order(spec, base_dir: Path = Path(".")) -> HighOrderParams:
    """``None`` or ``"default"`` gives the shipped set; a string is a JSON file path; a dict
    holds the parameters, where ``{"base": "default", ...}`` overrides the shipped set."""
    if spec is None or spec == "default":
        return HighOrderParams.default()
    if isinstance(spec, str):
        path = _resolve(base_dir, spec)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(str(exc), "high_order") from None
        return HighOrderParams.from_dict(raw.get("params", raw))
    spec = dict(spec)
    if spec.pop("base", None) == "default":
        merged = HighOrderParams.default().to_dict()
        merged.pop("tau_a2")
        merged.update(spec)
        spec = merged
    return HighOrderParams.from_dict(spec)


def load_config(path, dt: float | None = None, horizon: float | None = None) -> LoadedConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(str(exc), "") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "") from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", "")
    doc = parse_document(data)
    return LoadedConfig(doc, build_scenario(doc, path.parent, dt, horizon), path.parent)
