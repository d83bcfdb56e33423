"""Sectioned key-value run configuration.

Files look like::

    [kernel]
    family = sum_power
    gamma = 0.5

    [grid]
    n = 256
    N = 64

Unknown keys are rejected so typos surface as errors rather than being
silently ignored.  Every tolerance used by an experiment check lives in
the ``[checks]`` section.
"""
from __future__ import annotations

import configparser
import re
from pathlib import Path

from . import kernels
from .grid import DiffusionProfile
from .simulator import InitialData, SimConfig

SCHEMA = "coagdiff.summary/1"


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (CLI exit code 2)."""


DEFAULTS: dict[str, dict[str, str]] = {
    "kernel": {"family": "sum_power", "C": "1.0", "gamma": "0.5"},
    "diffusion": {"family": "limit", "d_inf": "1.0", "A": "1.0", "r": "1.0"},
    "grid": {"n": "64", "N": "32"},
    "time": {
        "dt": "1e-3", "T": "1.0", "scheme": "rk4", "output_stride": "0",
        "stability_cap": "2.5", "neg_tol": "1e-14", "max_halvings": "12",
    },
    "initial": {"family": "monodisperse", "mass": "1.0", "amplitude": "0.5", "ratio": "0.5"},
    "output": {
        "dir": "out", "moments": "0,1,2", "lp": "2,4", "tail_index": "", "fast": "true",
        "frames": "true", "seed": "0",
    },
    "scan": {"ns": "250,500,1000,2000", "fraction": "0.5"},
    "duality": {
        "a": "0.8", "b": "1.2", "q": "2", "pattern": "checkerboard", "blocks": "4,4",
        "seed": "0", "nx": "64", "nt": "64", "T": "1.0", "forcing": "cos",
        "rtol": "1e-10", "max_iter": "200", "m": "1.0", "samples": "100", "p": "2",
    },
    "checks": {
        "weakform_tol": "1e-10",
        "mass_null_tol": "1e-10",
        "mass_drift_tol": "1e-8",
        "positivity_tol": "1e-14",
        "rho0_abs_tol": "1e-4",
        "rho2_rel_tol": "0.02",
        "gelation_drop": "0.05",
        "gelation_persist": "0.25",
        "propagation_ratio": "1.5",
        "cascade_rel_tol": "0.01",
        "k2_lower_tol": "1e-6",
        "k2_upper_roundoff": "1e-14",
        "contraction_slack": "0.05",
        "residual_rtol": "1e-8",
        "independence_tol": "1e-8",
        "pairing_rel_tol": "5e-3",
        "fast_rel_tol": "1e-12",
        "fast_speedup": "5",
    },
}

KERNEL_KEYS = {"family", "C", "c0", "gamma", "alpha", "beta", "path"}
DIFFUSION_KEYS = {"family", "d", "d_inf", "A", "r", "values"}
INITIAL_KEYS = {"family", "mass", "amplitude", "ratio", "path"}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^#;=:\s][^=:]*?)\s*[=:]")


class Settings:
    """Merged view of defaults, a config file and command-line overrides."""

    def __init__(self, text: str | None = None, source: str = "<config>", base_dir=None):
        self.source = source
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self.lines: dict[tuple[str, str], int] = {}
        self.explicit: set[tuple[str, str]] = set()
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        self.cp.optionxform = str  # keys are case-sensitive (N vs n)
        self.cp.read_dict(DEFAULTS)
        if text is not None:
            self._parse(text)

    @classmethod
    def from_file(cls, path) -> "Settings":
        s = cls()
        s.update_from_file(path)
        return s

    def update_from_file(self, path) -> None:
        """Layer a config file over the current values."""
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        if not text.strip():
            raise ConfigError(f"{path}: config file is empty")
        self.source, self.base_dir = str(path), path.parent
        self._parse(text)

    def _parse(self, text: str):
        section = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            m = _SECTION_RE.match(line)
            if m:
                section = m.group(1).strip()
                if section not in DEFAULTS:
                    raise ConfigError(f"{self.source}:{lineno}: unknown section [{section}]")
                continue
            m = _KEY_RE.match(line)
            if m and section is not None:
                self.lines[(section, m.group(1))] = lineno
        user = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        user.optionxform = str
        try:
            user.read_string(text, source=self.source)
        except configparser.Error as exc:
            raise ConfigError(f"{self.source}: {exc}") from exc
        if not user.sections():
            raise ConfigError(f"{self.source}: no sections found")
        for section in user.sections():
            if section in ("kernel", "diffusion", "initial") and "family" in user[section]:
                # a new family replaces the default parameter set
                for key in list(self.cp[section]):
                    self.cp.remove_option(section, key)
            for key, value in user[section].items():
                self._check_key(section, key)
                self.cp[section][key] = value
                self.explicit.add((section, key))

    def _where(self, section, key) -> str:
        line = self.lines.get((section, key))
        return f"{self.source}:{line}: " if line else ""

    def _check_key(self, section, key):
        allowed = {"kernel": KERNEL_KEYS, "diffusion": DIFFUSION_KEYS,
                   "initial": INITIAL_KEYS}.get(section, set(DEFAULTS[section]))
        if key not in allowed:
            raise ConfigError(f"{self._where(section, key)}unknown key {key!r} in [{section}]")

    def set(self, section: str, key: str, value) -> None:
        """Command-line override of one key."""
        if section not in DEFAULTS:
            raise ConfigError(f"unknown section [{section}]")
        self._check_key(section, key)
        self.cp[section][key] = str(value)
        self.explicit.add((section, key))

    def apply_overrides(self, items) -> None:
        """``section.key=value`` strings as given to ``--set``."""
        for item in items or ():
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            lhs, value = item.split("=", 1)
            section, key = lhs.split(".", 1)
            self.set(section.strip(), key.strip(), value.strip())

    # typed access
    def raw(self, section, key) -> str:
        try:
            return self.cp[section][key]
        except KeyError:
            raise ConfigError(f"missing key {key!r} in [{section}]") from None

    def _typed(self, section, key, conv, what):
        value = self.raw(section, key)
        try:
            return conv(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{self._where(section, key)}[{section}] {key}: "
                              f"invalid {what} {value!r}") from None

    def get_float(self, section, key) -> float:
        return self._typed(section, key, float, "number")

    def get_int(self, section, key) -> int:
        return self._typed(section, key, _int, "integer")

    def get_bool(self, section, key) -> bool:
        return self._typed(section, key, _bool, "boolean")

    def get_floats(self, section, key) -> list[float]:
        return self._typed(section, key, lambda s: [float(v) for v in _split(s)], "number list")

    def get_ints(self, section, key) -> list[int]:
        return self._typed(section, key, lambda s: [_int(v) for v in _split(s)], "integer list")

    def get_optional_int(self, section, key) -> int | None:
        if not self.raw(section, key).strip():
            return None
        return self.get_int(section, key)

    def tol(self, key) -> float:
        return self.get_float("checks", key)

    def section(self, name) -> dict[str, str]:
        return dict(self.cp[name])

    def snapshot(self) -> dict:
        """Resolved configuration, for manifests."""
        return {s: dict(self.cp[s]) for s in self.cp.sections()}

    # builders
    def kernel(self) -> kernels.KernelSpec:
        try:
            return kernels.from_config(self.section("kernel"), self.base_dir)
        except (kernels.KernelError, ValueError, OSError) as exc:
            raise ConfigError(f"[kernel] {exc}") from exc

    def diffusion(self) -> DiffusionProfile:
        try:
            return DiffusionProfile.from_config(self.section("diffusion"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[diffusion] {exc}") from exc

    def initial(self) -> InitialData:
        sec = self.section("initial")
        path = sec.get("path")
        if path and self.base_dir is not None and not Path(path).is_absolute():
            path = str(self.base_dir / path)
        try:
            return InitialData(
                family=sec.get("family", "monodisperse").strip().lower(),
                mass=self._initial_float(sec, "mass"),
                amplitude=self._initial_float(sec, "amplitude"),
                ratio=self._initial_float(sec, "ratio"),
                path=path,
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[initial] {exc}") from exc

    def _initial_float(self, sec, key) -> float:
        # shape parameters are optional for every initial family
        if key not in sec:
            return float(DEFAULTS["initial"][key])
        return self.get_float("initial", key)

    def sim_config(self, homogeneous: bool = False) -> SimConfig:
        try:
            return SimConfig(
                kernel=self.kernel(),
                diffusion=self.diffusion(),
                n=self.get_int("grid", "n"),
                N=1 if homogeneous else self.get_int("grid", "N"),
                dt=self.get_float("time", "dt"),
                T=self.get_float("time", "T"),
                initial=self.initial(),
                scheme=self.raw("time", "scheme").strip(),
                fast=self.get_bool("output", "fast"),
                moments=tuple(_num(v) for v in self.get_floats("output", "moments")),
                lp=tuple(self.get_floats("output", "lp")),
                tail_index=self.get_optional_int("output", "tail_index"),
                output_stride=self.get_int("time", "output_stride"),
                stability_cap=self.get_float("time", "stability_cap"),
                neg_tol=self.get_float("time", "neg_tol"),
                max_halvings=self.get_int("time", "max_halvings"),
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _split(s: str) -> list[str]:
    return [v.strip() for v in s.replace(";", ",").split(",") if v.strip()]


def _num(v: float):
    return int(v) if float(v).is_integer() else v


def _int(s) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError(s)
    return int(f)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)
