"""Run configuration read from a flat ``key = value`` text file.

Grammar, one entry per line::

    # comment                      blank lines and '#' comments are ignored
    seed = 7                       integers
    krr.standardize = false        booleans: true / false
    list.zeta_grid = 0, 0.1, 0.5   lists: comma-separated numbers
    missing = carry_forward        bare strings

Keys are dotted; each key has a fixed type and unknown keys are rejected.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .builder import ListConfig
from .errors import ConfigError
from .krr import KrrSearchConfig
from .pipeline import FitConfig

MISSING_POLICIES = ("drop", "carry_forward")


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _floats(text):
    items = [s.strip() for s in text.split(",")]
    if not items or any(not s for s in items):
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(s) for s in items)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


# key -> (parser, section, field)
KEYS = {
    "seed": (int, None, "seed"),
    "threads": (int, None, "threads"),
    "missing": (_choice(*MISSING_POLICIES), None, "missing"),
    "id_column": (str, None, "id_column"),
    "krr.method": (_choice("quasi_newton", "coordinate", "grid"), "krr", "method"),
    "krr.starts": (int, "krr", "starts"),
    "krr.iterations": (int, "krr", "iterations"),
    "krr.log_gamma_min": (float, "krr", "log_gamma_min"),
    "krr.log_gamma_max": (float, "krr", "log_gamma_max"),
    "krr.log_lambda_min": (float, "krr", "log_lambda_min"),
    "krr.log_lambda_max": (float, "krr", "log_lambda_max"),
    "krr.grid_gamma": (_floats, "krr", "grid_gamma"),
    "krr.grid_lambda": (_floats, "krr", "grid_lambda"),
    "krr.standardize": (_bool, "krr", "standardize"),
    "krr.default_lambda": (float, "krr", "default_lambda"),
    "krr.pooled": (_bool, "krr", "pooled"),
    "krr.center": (_choice("none", "stage", "action"), "krr", "center"),
    "list.l_max": (int, "list", "l_max"),
    "list.folds": (int, "list", "folds"),
    "list.zeta": (float, "list", "zeta"),
    "list.eta": (float, "list", "eta"),
    "list.zeta_grid": (_floats, "list", "zeta_grid"),
    "list.eta_grid": (_floats, "list", "eta_grid"),
    "list.grid_scale": (_choice("sd", "absolute"), "list", "grid_scale"),
    "list.tune": (_bool, "list", "tune"),
}


@dataclass
class RunConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    threads: int = 1
    missing: str = "drop"
    id_column: str = "id"

    @property
    def seed(self) -> int:
        return self.fit.seed


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = (s.strip() for s in line.partition("="))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: key '{key}' given twice")
        try:
            values[key] = KEYS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from None
    return build_config(values)


def build_config(values: dict) -> RunConfig:
    top, krr, lst = {}, {}, {}
    for key, value in values.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key '{key}'")
        _, section, name = KEYS[key]
        {None: top, "krr": krr, "list": lst}[section][name] = value
    base = KrrSearchConfig()
    g_lo, g_hi = base.log_gamma_bounds
    l_lo, l_hi = base.log_lambda_bounds
    krr_kwargs = {k: v for k, v in krr.items() if not k.startswith("log_")}
    krr_kwargs["log_gamma_bounds"] = (krr.get("log_gamma_min", g_lo), krr.get("log_gamma_max", g_hi))
    krr_kwargs["log_lambda_bounds"] = (krr.get("log_lambda_min", l_lo), krr.get("log_lambda_max", l_hi))
    tune = lst.pop("tune", True)
    try:
        if krr_kwargs["log_gamma_bounds"][0] >= krr_kwargs["log_gamma_bounds"][1] or \
                krr_kwargs["log_lambda_bounds"][0] >= krr_kwargs["log_lambda_bounds"][1]:
            raise ValueError("search bounds must satisfy min < max")
        fit = FitConfig(krr=KrrSearchConfig(**krr_kwargs), lists=ListConfig(**lst),
                        seed=int(top.pop("seed", 0)), tune_penalties=tune)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    threads = int(top.get("threads", 1))
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    return RunConfig(fit, threads, top.get("missing", "drop"), top.get("id_column", "id"))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def with_overrides(cfg: RunConfig, seed=None, threads=None) -> RunConfig:
    if seed is not None:
        cfg = replace(cfg, fit=replace(cfg.fit, seed=int(seed)))
    if threads is not None:
        if threads < 1:
            raise ConfigError("threads must be at least 1")
        cfg = replace(cfg, threads=int(threads))
    return cfg
