"""Run configuration: one TOML file with ``[scene]``, ``[source]``,
``[rates]``, ``[output]`` and optional ``[resolution]`` sections.

Errors name the offending key and the line it sits on (or the section
header line for missing keys).
"""

from __future__ import annotations

import hashlib
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .coincidence import RateConfig
from .errors import ConfigError
from .fields import SourceParams
from .scene import (DoubleSlit, RingResonator, SingleSlit, SlabScene, TransmissionProfile)

SCHEMA_VERSION = "ghostbeam/1"

_SECTION_RE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.]+)\s*\]\s*(#.*)?$")
_KEY_RE = re.compile(r"^\s*([A-Za-z0-9_]+)\s*=")


class _Locator:
    """Maps ``section.key`` to a 1-based line number by scanning the text."""

    def __init__(self, text: str):
        self.sections: dict[str, int] = {}
        self.keys: dict[str, int] = {}
        current = ""
        for n, line in enumerate(text.splitlines(), start=1):
            m = _SECTION_RE.match(line)
            if m:
                current = m.group(1)
                self.sections.setdefault(current, n)
                continue
            m = _KEY_RE.match(line)
            if m:
                name = f"{current}.{m.group(1)}" if current else m.group(1)
                self.keys.setdefault(name, n)

    def line(self, section: str, key: str | None = None) -> int:
        if key is not None:
            full = f"{section}.{key}" if section else key
            if full in self.keys:
                return self.keys[full]
        return self.sections.get(section, 1)


@dataclass
class RunConfig:
    path: Path
    text_hash: str
    scene: SlabScene
    source: SourceParams
    n_components: int
    rates: RateConfig | None
    p_ps_from_joint: bool
    output: dict
    resolution: dict
    raw: dict = field(repr=False, default_factory=dict)


class _Section:
    def __init__(self, data: dict, name: str, loc: _Locator, path: Path):
        self.data = data
        self.name = name
        self.loc = loc
        self.path = path

    def error(self, msg: str, key: str | None = None) -> ConfigError:
        return ConfigError(f"{self.path}:{self.loc.line(self.name, key)}: [{self.name}] {msg}")

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, kind=float, default=...):
        if key not in self.data:
            if default is ...:
                raise self.error(f"missing required key '{key}'")
            return default
        value = self.data[key]
        try:
            if kind is float:
                if isinstance(value, bool):
                    raise TypeError
                return float(value)
            if kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                return int(value)
            if kind == "point":
                if len(value) != 2:
                    raise TypeError
                return (float(value[0]), float(value[1]))
            if kind == "floats":
                return [float(v) for v in value]
            if kind is str:
                if not isinstance(value, str):
                    raise TypeError
                return value
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                return value
        except (TypeError, ValueError):
            pass
        else:
            return value
        raise self.error(f"key '{key}' has an invalid value {value!r}", key)

    def sub(self, name: str, required: bool = True) -> "_Section | None":
        if name not in self.data:
            if required:
                raise self.error(f"missing required table '{name}'")
            return None
        full = f"{self.name}.{name}" if self.name else name
        return _Section(self.data[name], full, self.loc, self.path)


def _object(sec: _Section):
    kind = sec.get("kind", str)
    if kind == "double_slit":
        return DoubleSlit(sec.get("d"), sec.get("b"), sec.get("center_y", default=0.0))
    if kind == "single_slit":
        return SingleSlit(sec.get("b"), sec.get("center_y", default=0.0))
    if kind == "transmission":
        y = sec.get("y", "floats")
        re_ = sec.get("re", "floats")
        im = sec.get("im", "floats", default=[0.0] * len(re_))
        if not (len(y) == len(re_) == len(im)) or len(y) < 2:
            raise sec.error("'y', 're' and 'im' must have equal length >= 2", "y")
        return TransmissionProfile(np.array(y), np.array(re_) + 1j * np.array(im))
    if kind == "ring_resonator":
        return RingResonator(sec.get("n_rings", int), sec.get("spacing"), sec.get("center", "point"))
    raise sec.error(f"unknown object kind {kind!r}", "kind")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    text = raw_bytes.decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    loc = _Locator(text)
    top = _Section(data, "", loc, path)
    version = data.get("schema_version")
    if version is None:
        raise ConfigError(f"{path}:1: missing required key 'schema_version'")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}:{loc.line('', 'schema_version')}: unsupported schema_version "
                          f"{version!r} (expected {SCHEMA_VERSION!r})")

    sc = top.sub("scene")
    scene = SlabScene(
        width_x=sc.get("width_x"), width_y=sc.get("width_y"), lambda_spp=sc.get("lambda_spp"),
        injection_center=sc.get("injection_center", "point"),
        injection_waist_s=sc.get("injection_waist_s"), object_x=sc.get("object_x"),
        bucket_center=sc.get("bucket_center", "point"),
        bucket_extent_dy=sc.get("bucket_extent_dy"), object=_object(sc.sub("object")),
        grid_step=sc.get("grid_step", default=None), boundary=sc.get("boundary", str, "apodized"))
    if scene.lambda_spp <= 0:
        raise sc.error("lambda_spp must be positive", "lambda_spp")
    if scene.step <= 0:
        raise sc.error("grid_step must be positive", "grid_step")
    if scene.boundary not in ("apodized", "periodic"):
        raise sc.error("boundary must be 'apodized' or 'periodic'", "boundary")

    src = top.sub("source")
    source = SourceParams.from_photon_energy(
        src.get("electron_energy_kev"), src.get("hbar_omega_ev"), src.get("s"),
        energy_window=src.get("energy_window_mev", default=100.0))
    n_components = src.get("n_components", int, 33)
    if n_components < 3 or n_components % 2 == 0:
        raise src.error("n_components must be odd and >= 3", "n_components")
    bad = [p for p in source.validate() if p != "s < s_0"]
    if bad:
        raise src.error("; ".join(bad))

    rates = None
    from_joint = False
    rt = top.sub("rates", required=False)
    if rt is not None:
        p_ps = rt.data.get("p_ps", 1e-3)
        from_joint = p_ps == "joint"
        try:
            rates = RateConfig(
                current_ie=rt.get("current_pa"), P_SPP=rt.get("p_spp"),
                P_PS=1.0 if from_joint else rt.get("p_ps", default=1e-3),
                window_tau=rt.get("window_ns", default=10.0),
                dead_time=rt.get("dead_time_ns", default=10_000.0),
                dark_rate=rt.get("dark_rate_hz", default=0.0),
                duration=rt.get("duration_s"), rng_seed=rt.get("rng_seed", int, 0),
                delay=rt.get("delay_ns", default=0.0), jitter=rt.get("jitter_ns", default=1.0),
                tag_weights=tuple(rt.get("tag_weights", "floats", [1.0])))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise rt.error(str(exc)) from None
        if rates.duration <= 0:
            raise rt.error("duration_s must be positive", "duration_s")

    out = top.sub("output", required=False)
    output = {"dir": "out", "defocus": [0.0], "beta_peak": 0.1, "n_rings": None,
              "dump_fields": True, "bucket_point": None}
    if out is not None:
        output["dir"] = out.get("dir", str, "out")
        output["defocus"] = out.get("defocus", "floats", [0.0])
        output["beta_peak"] = out.get("beta_peak", default=0.1)
        output["dump_fields"] = out.get("dump_fields", bool, True)
        output["bucket_point"] = out.get("bucket_point", "point", None)

    res = top.sub("resolution", required=False)
    resolution = {"distances": [50.0, 25.0, 20.0, 10.0], "n": 4096}
    if res is not None:
        resolution["distances"] = res.get("distances", "floats", resolution["distances"])
        resolution["n"] = res.get("n", int, 4096)

    return RunConfig(path, hashlib.sha256(raw_bytes).hexdigest(), scene, source, n_components,
                     rates, from_joint, output, resolution, data)
