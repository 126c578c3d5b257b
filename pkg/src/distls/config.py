"""
Run configuration: an INI file with ``[run]``, ``[topology]``,
``[problem]``, ``[linesearch]`` and ``[baseline]`` sections.

Keys left out take experiment-specific defaults (see :func:`defaults`).
``seed`` is the only mandatory key.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields

from .saddle import LinesearchParams

EXPERIMENTS = ("poisson", "poisson_l2", "covariance", "custom")
SOLVERS = ("pgextra_const", "alg2_const", "alg2_sum", "alg2_min", "alg2_sum_W", "alg2_min_W")
TOPOLOGIES = ("ring", "path", "complete", "star", "random_geometric", "edges")


class ConfigError(ValueError):
    """The configuration text is malformed or inconsistent."""


@dataclass
class RunConfig:
    experiment: str
    seed: int
    solvers: list
    output: str = "out"
    max_iter: int = 5000
    tol: float = 1e-3
    tau0: str = "default"
    reference: bool = True
    instance: str = ""
    topology: str = "ring"
    radius: float = 0.5
    edges: str = ""
    n: int = 4
    d: int = 1024
    p: int = 0
    samples_per_agent: int = 1
    l: float = 0.7
    u: float = 1.8
    lam: float = 0.0
    blur: str = "gaussian"
    zero_noise: bool = False
    background: float = 0.1
    intensity: float = 10.0
    beta: float = 1.0
    delta_L: float = 0.5
    delta_K: float = 0.4999
    mu: float = 0.95
    gamma: float = 0.99
    alpha_rule: str = "max"
    max_backtracks: int = 60
    sigma: float = 0.01

    def params(self):
        return LinesearchParams(
            beta=self.beta,
            delta_L=self.delta_L,
            delta_K=self.delta_K,
            mu=self.mu,
            gamma=self.gamma,
            alpha_rule=self.alpha_rule,
            max_backtracks=self.max_backtracks,
        )

    def tau0_value(self, cap):
        """Resolve the ``tau0`` rule against the stepsize cap; ``None`` means solver default."""
        if self.tau0 == "default":
            return None
        if self.tau0 == "cap":
            return None if cap == float("inf") else cap
        return float(self.tau0)


SECTIONS = {
    "run": ("experiment", "seed", "solvers", "output", "max_iter", "tol", "tau0", "reference", "instance"),
    "topology": ("topology", "radius", "edges"),
    "problem": (
        "n", "d", "p", "samples_per_agent", "l", "u", "lam", "blur", "zero_noise", "background", "intensity",
    ),
    "linesearch": ("beta", "delta_L", "delta_K", "mu", "gamma", "alpha_rule", "max_backtracks"),
    "baseline": ("sigma",),
}
# INI key -> field name where they differ
KEY_ALIASES = {("topology", "kind"): "topology"}
FIELD_KEYS = {"topology": "kind"}


def defaults(experiment):
    """Experiment-specific defaults applied before the file's own keys."""
    if experiment in ("poisson", "poisson_l2"):
        return {
            "n": 4,
            "d": 32 * 32,
            "beta": 2.0,
            "delta_L": 0.5,
            "mu": 0.95,
            "gamma": 0.99,
            "lam": 0.001 if experiment == "poisson_l2" else 0.0,
            # uncapped W variants can overshoot by more than 0.95**60
            "max_backtracks": 200,
            "max_iter": 3000,
            "solvers": ["pgextra_const", "alg2_sum", "alg2_min"],
        }
    if experiment == "covariance":
        return {
            "n": 10,
            "d": 5,
            "samples_per_agent": 1,
            "l": 0.7,
            "u": 1.8,
            "beta": 1.0,
            "delta_L": 0.5,
            "mu": 0.95,
            "gamma": 0.99,
            "tau0": "cap",
            "solvers": ["alg2_sum", "alg2_min", "alg2_sum_W", "alg2_min_W"],
        }
    return {"solvers": ["alg2_sum"]}


_BOOL = {"1": True, "yes": True, "true": True, "on": True, "0": False, "no": False, "false": False, "off": False}


def _convert(name, raw):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    raw = raw.strip()
    try:
        if name == "solvers":
            return [s.strip() for s in raw.replace(",", " ").split() if s.strip()]
        if name == "tau0":
            if raw in ("default", "cap"):
                return raw
            val = float(raw)
            if not val > 0:
                raise ConfigError("tau0 must be positive")
            return repr(val)
        if kind == "bool":
            if raw.lower() not in _BOOL:
                raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
            return _BOOL[raw.lower()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{name}: cannot parse {raw!r}") from exc


def parse_config(text):
    """
    Parse configuration text into a validated :class:`RunConfig`.

    Raises
    ------
    ConfigError
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    given = {}
    for sec in cp.sections():
        for key, raw in cp[sec].items():
            name = KEY_ALIASES.get((sec, key), key)
            if name not in SECTIONS[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            given[name] = _convert(name, raw)
    if "seed" not in given:
        raise ConfigError("[run] seed is mandatory")
    experiment = given.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    values = defaults(experiment)
    values.update(given)
    if "delta_K" not in given:
        values["delta_K"] = 0.9999 - values.get("delta_L", 0.5)
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if not cfg.solvers:
        raise ConfigError("at least one solver is required")
    for s in cfg.solvers:
        if s not in SOLVERS:
            raise ConfigError(f"unknown solver {s!r}")
    if len(set(cfg.solvers)) != len(cfg.solvers):
        raise ConfigError("solver list has duplicates")
    if cfg.topology not in TOPOLOGIES:
        raise ConfigError(f"unknown topology kind {cfg.topology!r}")
    if cfg.topology == "edges" and not cfg.edges.strip():
        raise ConfigError("topology kind 'edges' needs an edges list")
    if cfg.experiment == "custom" and not cfg.instance:
        raise ConfigError("experiment 'custom' needs [run] instance = <directory>")
    if cfg.n < 1 or cfg.d < 1 or cfg.samples_per_agent < 1:
        raise ConfigError("n, d and samples_per_agent must be positive")
    if cfg.p not in (0, cfg.d):
        raise ConfigError("p must equal d (or be 0 for the default)")
    if not 0 < cfg.l <= cfg.u:
        raise ConfigError("need 0 < l <= u")
    if cfg.lam < 0:
        raise ConfigError("lam must be nonnegative")
    if cfg.blur not in ("gaussian", "shifted"):
        raise ConfigError(f"unknown blur {cfg.blur!r}")
    if cfg.max_iter < 1:
        raise ConfigError("max_iter must be at least 1")
    if not cfg.tol > 0:
        raise ConfigError("tol must be positive")
    if not cfg.sigma > 0:
        raise ConfigError("sigma must be positive")
    if not (cfg.background > 0 and cfg.intensity > 0):
        raise ConfigError("background and intensity must be positive")
    try:
        cfg.params()
    except ValueError as exc:
        raise ConfigError(f"[linesearch] {exc}") from exc


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg):
    """Render every field so the text parses back to an equal configuration."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for sec, names in SECTIONS.items():
        cp[sec] = {FIELD_KEYS.get(name, name): _fmt(getattr(cfg, name)) for name in names}
    lines = []
    for sec in cp.sections():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in cp[sec].items())
        lines.append("")
    return "\n".join(lines)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)
