"""Scenario configuration files.

One scenario per file, INI syntax. Physical quantities carry their unit in
the key name (``period_us``, ``amplitude_nT``, ...). Keys are matched
case-insensitively; unknown keys are rejected so that a mistyped unit
suffix cannot be silently ignored.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .sensor_sim import InfeasibleScenario, SensorModel, check_bandwidth
from .walsh_core import Ordering
from .waveform import (
    Component,
    NeuronConversion,
    Polychromatic,
    RadiatedField,
    Sinusoid,
    SkewNormalAP,
    Waveform,
    read_sampled_csv,
)

__all__ = ["ConfigError", "Scenario", "load_scenario", "resolve_config_path",
           "bundled_scenarios", "PROTOCOLS"]

PROTOCOLS = ("amplitude_sweep", "phase_sweep", "noiseless")

_SCHEMA = {
    "scenario": {"name", "period_us", "order", "n_coefficients", "protocol", "repetitions", "seed",
                 "ordering", "grid_multiplier"},
    "waveform": {"kind", "amplitude_nt", "frequency_khz", "phase_rad", "weights",
                 "frequencies_khz", "phases_rad", "amplitude_vpp", "peak_field_nt",
                 "location_us", "scale_us", "shape", "conversion_ut_per_vpp_khz",
                 "file"},
    "sweep": {"points", "max_phase_rad"},
    "sensor": {"gamma_rad_per_s_nt", "contrast", "s0_counts", "s1_counts",
               "t2_base_us", "stretch_exponent", "t2_scaling", "n_nv", "pi_pulse_us"},
    "compare": {"orders", "repetitions", "trials", "budget", "subset_order",
                "t2_star_us", "min_interval_us", "include_visibility"},
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^\s=:#;\[][^=:]*?)\s*[=:]")


class ConfigError(ValueError):
    """Malformed or invalid scenario file (exit code 2)."""


@dataclass
class CompareSettings:
    orders: tuple = (2, 4, 6)
    repetitions: int = 100_000
    trials: int = 1000
    budget: int = 16
    subset_order: int = 5
    t2_star_us: Optional[float] = None
    min_interval_us: Optional[float] = None
    include_visibility: bool = False


@dataclass
class Scenario:
    name: str
    period_us: float
    order: int
    protocol: str
    waveform: Waveform
    sensor: SensorModel
    repetitions: Optional[int] = None
    seed: int = 0
    ordering: Ordering = Ordering.SEQUENCY
    grid_multiplier: int = 64
    sweep_points: int = 11
    max_phase_rad: float = 0.5
    field_scale_nT: float = 1.0
    compare: CompareSettings = field(default_factory=CompareSettings)
    source: str = "<config>"

    @property
    def N(self) -> int:
        return 1 << self.order


class _Reader:
    def __init__(self, path: Path, text: str):
        self.path = path
        self.lines: dict = {}
        self.section_lines: dict = {}
        section = None
        for no, line in enumerate(text.splitlines(), start=1):
            sm = _SECTION_RE.match(line)
            if sm:
                section = sm.group(1).strip().lower()
                self.section_lines.setdefault(section, no)
                continue
            km = _KEY_RE.match(line)
            if km and section is not None:
                self.lines[(section, km.group(1).strip().lower())] = no
        self.cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"),
                                            interpolation=None)
        try:
            self.cp.read_string(text, source=str(path))
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: missing section header") from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: duplicate key '{exc.option}' "
                              f"in [{exc.section}]") from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: duplicate section "
                              f"[{exc.section}]") from None
        except configparser.ParsingError as exc:
            lineno, line = exc.errors[0]
            raise ConfigError(f"{path}:{lineno}: cannot parse line {line.strip()!r}") \
                from None
        for section in self.cp.sections():
            sec = section.lower()
            if sec not in _SCHEMA:
                raise ConfigError(f"{self.where(sec)}: unknown section [{section}]")
            for key in self.cp[section]:
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"{self.where(sec, key)}: unknown key '{key}' "
                                      f"in [{section}]")

    def where(self, section: str, key: Optional[str] = None) -> str:
        no = self.lines.get((section, key)) if key else None
        if no is None:
            no = self.section_lines.get(section, 1)
        return f"{self.path}:{no}"

    def _section(self, section):
        for s in self.cp.sections():
            if s.lower() == section:
                return self.cp[s]
        return None

    def has(self, section, key) -> bool:
        sec = self._section(section)
        return sec is not None and key in sec

    def raw(self, section, key, required=False):
        sec = self._section(section)
        if sec is None or key not in sec:
            if required:
                raise ConfigError(f"{self.where(section)}: missing required key "
                                  f"'{key}' in [{section}]")
            return None
        return sec[key].strip()

    def get(self, section, key, conv, default=None, required=False):
        value = self.raw(section, key, required)
        if value is None:
            return default
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.where(section, key)}: invalid value for "
                              f"'{key}': {value!r} ({exc})") from None

    def fail(self, section, key, message):
        raise ConfigError(f"{self.where(section, key)}: {message}")


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not a finite number")
    return v


def _int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError("not an integer")
    return int(f)


def _floats(s: str) -> tuple:
    return tuple(_float(x) for x in s.replace(",", " ").split())


def _ints(s: str) -> tuple:
    return tuple(_int(x) for x in s.replace(",", " ").split())


def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _sensor(r: _Reader) -> SensorModel:
    base = SensorModel()
    kw = dict(
        gamma=r.get("sensor", "gamma_rad_per_s_nt", _float, base.gamma),
        contrast=r.get("sensor", "contrast", _float, base.contrast),
        s0=r.get("sensor", "s0_counts", _float, base.s0),
        s1=r.get("sensor", "s1_counts", _float, base.s1),
        t2_base=r.get("sensor", "t2_base_us", _float, base.t2_base),
        p_base=r.get("sensor", "stretch_exponent", _float, base.p_base),
        t2_scaling=r.get("sensor", "t2_scaling", _float, base.t2_scaling),
        n_nv=r.get("sensor", "n_nv", _float, base.n_nv),
        pi_pulse=r.get("sensor", "pi_pulse_us", _float, base.pi_pulse),
    )
    try:
        return SensorModel(**kw)
    except ValueError as exc:
        r.fail("sensor", None, f"invalid sensor parameters: {exc}")


def _waveform(r: _Reader, period: float) -> tuple[Waveform, float]:
    """Build the field; also return its amplitude scale in nT."""
    kind = r.get("waveform", "kind", str, required=True).lower()
    if kind == "sinusoid":
        b = r.get("waveform", "amplitude_nt", _float, required=True)
        nu = r.get("waveform", "frequency_khz", _float, required=True)
        alpha = r.get("waveform", "phase_rad", _float, 0.0)
        return Sinusoid(b, nu, alpha), b
    if kind in ("polychromatic", "bichromatic"):
        b = r.get("waveform", "amplitude_nt", _float, required=True)
        w = r.get("waveform", "weights", _floats, required=True)
        nu = r.get("waveform", "frequencies_khz", _floats, required=True)
        alpha = r.get("waveform", "phases_rad", _floats, tuple(0.0 for _ in w))
        if not len(w) == len(nu) == len(alpha) or not w:
            r.fail("waveform", "weights",
                   "weights, frequencies_kHz and phases_rad must have equal length")
        return Polychromatic(b, tuple(Component(*c) for c in zip(w, nu, alpha))), b
    if kind in ("neuron", "skew_normal"):
        loc = r.get("waveform", "location_us", _float, period / 3.0)
        scale = r.get("waveform", "scale_us", _float, period / 10.0)
        shape = r.get("waveform", "shape", _float, 4.0)
        c = r.get("waveform", "conversion_ut_per_vpp_khz", _float, 25.4)
        if scale <= 0:
            r.fail("waveform", "scale_us", "scale_us must be positive")
        conv = NeuronConversion(c)
        if r.has("waveform", "peak_field_nt"):
            peak = r.get("waveform", "peak_field_nt", _float)
            unit = RadiatedField(SkewNormalAP(1.0, loc, scale, shape), conv)
            t = (np.arange(1 << 14) + 0.5) * (period / (1 << 14))
            top = float(np.max(np.abs(unit.evaluate(t))))
            amp = peak / top
        else:
            amp = r.get("waveform", "amplitude_vpp", _float, required=True)
        fld = RadiatedField(SkewNormalAP(amp, loc, scale, shape), conv)
        t = (np.arange(1 << 14) + 0.5) * (period / (1 << 14))
        return fld, float(np.max(np.abs(fld.evaluate(t))))
    if kind == "sampled":
        name = r.get("waveform", "file", str, required=True)
        path = Path(name)
        if not path.is_absolute():
            path = r.path.parent / path
        try:
            w = read_sampled_csv(path)
        except (OSError, ValueError) as exc:
            r.fail("waveform", "file", f"cannot read sampled waveform: {exc}")
        if abs(w.period - period) > 1e-9 * period:
            r.fail("waveform", "file",
                   f"sampled trace covers {w.period:g} us, period_us is {period:g}")
        return w, float(np.max(np.abs(w.values)))
    r.fail("waveform", "kind", f"unknown waveform kind {kind!r}")


def bundled_scenarios() -> list[str]:
    root = resources.files("walshsense") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_config_path(name) -> Path:
    """Path as given, else a bundled scenario of that name."""
    path = Path(name)
    if path.exists():
        return path
    bundled = resources.files("walshsense") / "scenarios" / path.name
    if bundled.is_file():
        return Path(str(bundled))
    raise ConfigError(f"{name}: no such file or bundled scenario")


def load_scenario(path) -> Scenario:
    path = resolve_config_path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    r = _Reader(path, text)
    if r._section("scenario") is None:
        raise ConfigError(f"{path}:1: missing section [scenario]")
    if r._section("waveform") is None:
        raise ConfigError(f"{path}:1: missing section [waveform]")

    period = r.get("scenario", "period_us", _float, required=True)
    if period <= 0:
        r.fail("scenario", "period_us", "period_us must be positive")
    if r.has("scenario", "n_coefficients"):
        if r.has("scenario", "order"):
            r.fail("scenario", "n_coefficients", "give either order or n_coefficients")
        n_coef = r.get("scenario", "n_coefficients", _int)
        if n_coef < 1 or n_coef & (n_coef - 1):
            r.fail("scenario", "n_coefficients",
                   f"N = {n_coef} is not a power of two")
        order = n_coef.bit_length() - 1
    else:
        order = r.get("scenario", "order", _int, required=True)
    if not 0 <= order <= 20:
        r.fail("scenario", "order", "order must be an integer in [0, 20]")
    protocol = r.get("scenario", "protocol", str, "noiseless").lower()
    if protocol not in PROTOCOLS:
        r.fail("scenario", "protocol", f"protocol must be one of {PROTOCOLS}")
    reps = r.get("scenario", "repetitions", _int, None)
    if protocol != "noiseless":
        if reps is None:
            r.fail("scenario", None, "missing required key 'repetitions' in [scenario] "
                                     f"for protocol {protocol}")
        if reps < 1:
            r.fail("scenario", "repetitions", "repetitions must be >= 1")
    seed = r.get("scenario", "seed", _int, 0)
    if not 0 <= seed < 2 ** 64:
        r.fail("scenario", "seed", "seed must be a 64-bit non-negative integer")
    try:
        ordering = Ordering.parse(r.get("scenario", "ordering", str, "sequency"))
    except ValueError as exc:
        r.fail("scenario", "ordering", str(exc))
    mult = r.get("scenario", "grid_multiplier", _int, 64)
    if mult < 1 or mult & (mult - 1):
        r.fail("scenario", "grid_multiplier", "grid_multiplier must be a power of two")

    sensor = _sensor(r)
    waveform, scale = _waveform(r, period)
    default_points = 16 if protocol == "phase_sweep" else 11
    points = r.get("sweep", "points", _int, default_points)
    if points < 4:
        r.fail("sweep", "points", "points must be >= 4")
    max_phase = r.get("sweep", "max_phase_rad", _float, 0.5)
    if not 0 < max_phase <= 0.5:
        r.fail("sweep", "max_phase_rad",
               "max_phase_rad must lie in (0, 0.5] (linear read-out window)")

    cmp = CompareSettings(
        orders=r.get("compare", "orders", _ints, (2, 4, 6)),
        repetitions=r.get("compare", "repetitions", _int, 100_000),
        trials=r.get("compare", "trials", _int, 1000),
        budget=r.get("compare", "budget", _int, 16),
        subset_order=r.get("compare", "subset_order", _int, 5),
        t2_star_us=r.get("compare", "t2_star_us", _float, None),
        min_interval_us=r.get("compare", "min_interval_us", _float, None),
        include_visibility=r.get("compare", "include_visibility", _bool, False),
    )
    if cmp.repetitions < 1:
        r.fail("compare", "repetitions", "repetitions must be >= 1")
    if cmp.trials < 2:
        r.fail("compare", "trials", "trials must be >= 2")
    if any(not 0 <= o <= 12 for o in cmp.orders) or not cmp.orders:
        r.fail("compare", "orders", "orders must be integers in [0, 12]")

    scenario = Scenario(
        name=r.get("scenario", "name", str, path.stem), period_us=period, order=order,
        protocol=protocol, waveform=waveform, sensor=sensor, repetitions=reps,
        seed=seed, ordering=ordering, grid_multiplier=mult, sweep_points=points,
        max_phase_rad=max_phase, field_scale_nT=scale, compare=cmp,
        source=str(path))
    try:
        check_bandwidth(period, scenario.N, sensor.pi_pulse)
    except InfeasibleScenario as exc:
        key = "n_coefficients" if r.has("scenario", "n_coefficients") else "order"
        raise InfeasibleScenario(f"{r.where('scenario', key)}: {exc}") from None
    return scenario
