# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
"""
Scenario configuration files.

A configuration is one YAML document. Every key has a default so a file only
lists what it changes; nested blocks merge key by key and unknown keys are
rejected.
"""
import dataclasses
import logging
import pathlib

import yaml

from .common import ConfigError, PadeepcException
from .controller import ControllerConfig
from .energy import PhysicalEnergyParams
from .platoon import (
    CYCLE_KINDS,
    OvmParams,
    PlatoonConfig,
    read_profile,
    synth_cycle,
)

log = logging.getLogger(__name__)

MODES = ("PA_DEEPC", "DEEPC_TRACKING", "OVM_ACC")

DEFAULT_BASELINES = (OvmParams(alpha=0.8, beta=0.5), OvmParams(alpha=0.5, beta=0.8))


@dataclasses.dataclass(frozen=True)
class CollectionConfig:
    """
    Offline data collection settings.

    ``steps`` of ``None`` collects ``controller.T`` samples.
    """

    steps: int = None
    pv_speed: float = 15.0
    levels: int = 5
    hold: int = 1
    amp: float = 1.0
    resample_every: int = 50
    retries: int = 10

    def __post_init__(self):
        if self.steps is not None and self.steps < 2:
            raise ConfigError("collection.steps must be at least 2")
        if not self.pv_speed > 0:
            raise ConfigError("collection.pv_speed must be positive")
        if self.levels < 2 or self.hold < 1 or not self.amp > 0:
            raise ConfigError("collection needs levels >= 2, hold >= 1 and amp > 0")
        if self.resample_every < 1 or self.retries < 1:
            raise ConfigError("collection.resample_every and retries must be positive")


@dataclasses.dataclass(frozen=True)
class CycleSpec:
    """
    Where the PV speed profile comes from: a ``t,v`` CSV or a synthetic cycle.
    """

    kind: str = "aggressive"
    duration: float = 360.0
    path: str = None
    seed: int = None

    def __post_init__(self):
        if self.path is None and self.kind not in CYCLE_KINDS:
            raise ConfigError(f"cycle.kind must be one of {', '.join(CYCLE_KINDS)}")
        if not self.duration > 0:
            raise ConfigError("cycle.duration must be positive")

    def profile(self, dt, seed):
        """
        Load or synthesize the profile; ``self.seed`` wins over ``seed``.
        """
        if self.path is not None:
            profile = read_profile(self.path)
            if abs(profile.dt - dt) > 1e-9:
                raise ConfigError(f"Cycle {self.path} has dt {profile.dt}, expected {dt}")
            return profile
        return synth_cycle(
            self.kind, self.duration, dt, self.seed if self.seed is not None else seed
        )


@dataclasses.dataclass(frozen=True)
class BatchConfig:
    modes: tuple = ("PA_DEEPC", "OVM_ACC")
    limit: int = None

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        unknown = [mode for mode in self.modes if mode not in MODES]
        if unknown or not self.modes:
            raise ConfigError(f"batch.modes must be drawn from {', '.join(MODES)}")
        if self.limit is not None and self.limit < 1:
            raise ConfigError("batch.limit must be positive")


@dataclasses.dataclass(frozen=True)
class PadeepcConfig:
    platoon: PlatoonConfig = PlatoonConfig()
    controller: ControllerConfig = ControllerConfig()
    collection: CollectionConfig = CollectionConfig()
    cycle: CycleSpec = CycleSpec()
    energy: PhysicalEnergyParams = PhysicalEnergyParams()
    coefficients: str = None
    ovm: OvmParams = OvmParams()
    baselines: tuple = DEFAULT_BASELINES
    batch: BatchConfig = BatchConfig()

    def __post_init__(self):
        max_columns = self.controller.adaptation.max_columns
        needed = self.controller.min_columns(self.platoon.m)
        if max_columns is not None and max_columns < needed:
            raise ConfigError(
                f"controller.adaptation.max_columns={max_columns} is below "
                f"{needed}, the rank of the input block"
            )

    @property
    def collection_steps(self):
        if self.collection.steps is not None:
            return self.collection.steps
        return self.controller.T

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, where):
    """
    Instantiate dataclass ``cls`` from a mapping, recursing into nested
    dataclass fields.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {field.name: field for field in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"Unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        key = f"{where}.{name}" if where else name
        field_type = fields[name].type
        if dataclasses.is_dataclass(field_type):
            kwargs[name] = _build(field_type, value, key)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except PadeepcException as exc:
        raise ConfigError(f"{where or 'config'}: {exc}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid value in {where or 'config'}: {exc}")


def _baselines(data):
    if data is None:
        return DEFAULT_BASELINES
    if not isinstance(data, list) or not data:
        raise ConfigError("baselines must be a non-empty list")
    return tuple(_build(OvmParams, item, f"baselines[{i}]") for i, item in enumerate(data))


def config_from_dict(data):
    """
    Build a :class:`PadeepcConfig` from parsed YAML.

    :raises ConfigError: On unknown keys or invalid values
    """
    data = dict(data or {})
    baselines = _baselines(data.pop("baselines", None))
    cfg = _build(PadeepcConfig, data, "")
    return dataclasses.replace(cfg, baselines=baselines)


def load_config(path=None):
    """
    Load a configuration file, or the defaults when ``path`` is ``None``.

    :param path: Path to a YAML file
    :type path: str

    :raises ConfigError: If the file cannot be read or is invalid

    :rtype: :class:`PadeepcConfig`
    """
    if path is None:
        return PadeepcConfig()
    path = pathlib.Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"Unable to read config {path}: {exc}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"Invalid YAML in {path}: {exc}")
    log.debug("Loaded config %s", path)
    return config_from_dict(data)


def dump_config(cfg, path):
    """
    Write ``cfg`` as YAML next to the run outputs.
    """
    pathlib.Path(path).write_text(yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True))


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value

