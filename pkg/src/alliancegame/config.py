"""Scenario files: flat ``key = value`` sections, validated at load time.

Example::

    [network]
    N = 60000

    [arrival]
    # either raw rates ...
    lambda_c = 50
    lambda_g = 50
    # ... or calibration products (not both)
    # lambda_c_alpha = 50
    # lambda_c_alpha0 = 150
    # lambda_g_alpha = 50

    [observation]
    alpha0 = 3      # mean of the first observation time
    alpha = 1       # mean gap between observations

    [alliance]
    eta = 7000
    rho = 0.7
    eta_range = 0:30000:50

    [cost]
    V = 1e6
    member_cost = 0.001

    [sim]
    seed = 20190704
    replications = 2000

    [modes]
    mode = exact
    initial = geometric
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

from .core import ArrivalModel, BlockRace, DomainError, NetworkParams, ObservationModel
from .decision import AllianceConfig
from .game import CostModel, SweepSpec
from .sim import SimConfig

MODE_NAMES = {"exact": "exact-dp", "paper": "paper-approx", "experimental": "closed-form-experimental"}

SCHEMA = {
    "network": ("N", "threshold"),
    "arrival": ("lambda_c", "lambda_g", "lambda_c_alpha", "lambda_c_alpha0", "lambda_g_alpha"),
    "observation": ("alpha0", "alpha"),
    "alliance": ("eta", "rho", "eta_range"),
    "cost": ("V", "member_cost"),
    "sim": ("seed", "replications", "max_observations", "genuine_initial", "jobs"),
    "modes": ("mode", "initial"),
}
REQUIRED = ("network", "arrival", "observation", "cost")


class ConfigError(DomainError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    node_count: int
    lambda_c: float
    lambda_g: float
    mean_initial: float
    mean_interval: float
    token_value: float
    member_cost: float = 0.0
    eta: int = 0
    rho: float = 0.0
    eta_range: Optional[str] = None
    threshold: Optional[int] = None
    seed: int = 20190704
    replications: int = 10_000
    max_observations: Optional[int] = None
    genuine_initial: Union[str, int] = 0
    jobs: int = 1
    mode: str = "exact"
    initial: Union[str, int] = "geometric"
    source: Optional[str] = field(default=None, compare=False)

    # -- derived model objects ------------------------------------------------

    @property
    def network(self) -> NetworkParams:
        return NetworkParams(self.node_count, self.threshold)

    @property
    def race(self) -> BlockRace:
        return BlockRace(
            ArrivalModel(self.lambda_c, self.lambda_g),
            ObservationModel(self.mean_initial, self.mean_interval),
            self.network,
            self.initial,
        )

    @property
    def alliance(self) -> AllianceConfig:
        return AllianceConfig(self.eta, self.rho)

    @property
    def cost(self) -> CostModel:
        return CostModel(self.token_value, self.member_cost)

    @property
    def method(self) -> str:
        return MODE_NAMES[self.mode]

    def sweep(self) -> SweepSpec:
        if self.eta_range is None:
            return SweepSpec.default(self.node_count)
        return SweepSpec.parse(self.eta_range)

    def sim_config(self, jobs: Optional[int] = None) -> SimConfig:
        return SimConfig(
            master_seed=self.seed,
            replications=self.replications,
            max_observations=self.max_observations,
            genuine_initial=self.genuine_initial,
            jobs=self.jobs if jobs is None else jobs,
        )

    def with_overrides(self, **kw) -> "ScenarioConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        out = replace(self, **kw)
        validate(out)
        return out

    # -- canonical form -----------------------------------------------------

    def canonical(self) -> str:
        rows = [
            ("network", "N", self.node_count),
            ("network", "threshold", self.threshold),
            ("arrival", "lambda_c", self.lambda_c),
            ("arrival", "lambda_g", self.lambda_g),
            ("observation", "alpha0", self.mean_initial),
            ("observation", "alpha", self.mean_interval),
            ("alliance", "eta", self.eta),
            ("alliance", "rho", self.rho),
            ("alliance", "eta_range", self.eta_range),
            ("cost", "V", self.token_value),
            ("cost", "member_cost", self.member_cost),
            ("sim", "seed", self.seed),
            ("sim", "replications", self.replications),
            ("sim", "max_observations", self.max_observations),
            ("sim", "genuine_initial", self.genuine_initial),
            ("sim", "jobs", self.jobs),
            ("modes", "mode", self.mode),
            ("modes", "initial", self.initial),
        ]
        out, current = [], None
        for section, key, value in rows:
            if value is None:
                continue
            if section != current:
                if current is not None:
                    out.append("")
                out.append(f"[{section}]")
                current = section
            out.append(f"{key} = {_fmt(value)}")
        return "\n".join(out) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "source"}
        return d


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of each ``(section, key)`` (and of each section header)."""
    index, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            index[(section, "")] = no
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = no
    return index


class _Reader:
    def __init__(self, parser, lines, source):
        self.parser, self.lines, self.source = parser, lines, source

    def where(self, section, key="") -> str:
        no = self.lines.get((section, key.lower()), self.lines.get((section, "")))
        loc = f"{self.source}:{no}" if no else self.source
        canonical = {k.lower(): k for k in SCHEMA.get(section, ())}
        name = f"{section}.{canonical.get(key.lower(), key)}" if key else f"[{section}]"
        return f"{loc}: {name}"

    def fail(self, section, key, msg):
        raise ConfigError(f"{self.where(section, key)}: {msg}")

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section, key, kind, default=None):
        if not self.has(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        try:
            if kind is int:
                value = float(raw)
                if value != int(value):
                    raise ValueError
                return int(value)
            if kind is float:
                return float(raw)
            return raw
        except ValueError:
            self.fail(section, key, f"expected {kind.__name__}, got {raw!r}")

    def required(self, section, key, kind):
        if not self.has(section, key):
            self.fail(section, key, "missing required key")
        return self.get(section, key, kind)


def loads(text: str, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    r = _Reader(parser, _line_index(text), source)

    for section in parser.sections():
        if section not in SCHEMA:
            r.fail(section, "", f"unknown section (expected one of {', '.join(SCHEMA)})")
        allowed = {k.lower() for k in SCHEMA[section]}
        for key in parser.options(section):
            if key not in allowed:
                r.fail(section, key, f"unknown key (allowed: {', '.join(SCHEMA[section])})")
    for section in REQUIRED:
        if not parser.has_section(section):
            raise ConfigError(f"{source}: missing required section [{section}]")

    node_count = r.required("network", "n", int)
    threshold = r.get("network", "threshold", int)
    alpha = r.required("observation", "alpha", float)
    if not alpha > 0:
        r.fail("observation", "alpha", f"must be > 0, got {alpha!r}")
    alpha0 = r.get("observation", "alpha0", float)

    raw_keys = [k for k in ("lambda_c", "lambda_g") if r.has("arrival", k)]
    cal_keys = [k for k in ("lambda_c_alpha", "lambda_c_alpha0", "lambda_g_alpha") if r.has("arrival", k)]
    if raw_keys and cal_keys:
        r.fail("arrival", cal_keys[0], "give either raw rates or calibration products, not both")
    if cal_keys:
        prod = r.required("arrival", "lambda_c_alpha", float)
        if not prod >= 0:
            r.fail("arrival", "lambda_c_alpha", f"must be >= 0, got {prod!r}")
        lambda_c = prod / alpha
        lambda_g = r.get("arrival", "lambda_g_alpha", float, 0.0) / alpha
        if r.has("arrival", "lambda_c_alpha0"):
            prod0 = r.get("arrival", "lambda_c_alpha0", float)
            if lambda_c == 0:
                r.fail("arrival", "lambda_c_alpha0", "cannot calibrate alpha0 when lambda_c_alpha = 0")
            derived = prod0 / lambda_c
            if alpha0 is not None and abs(alpha0 - derived) > 1e-12 * max(1.0, abs(derived)):
                r.fail("observation", "alpha0", f"conflicts with calibration (lambda_c_alpha0 / lambda_c = {derived!r})")
            alpha0 = derived
    else:
        lambda_c = r.required("arrival", "lambda_c", float)
        lambda_g = r.get("arrival", "lambda_g", float, 0.0)
    if alpha0 is None:
        r.fail("observation", "alpha0", "missing required key")

    cfg = ScenarioConfig(
        node_count=node_count,
        threshold=threshold,
        lambda_c=lambda_c,
        lambda_g=lambda_g,
        mean_initial=alpha0,
        mean_interval=alpha,
        token_value=r.required("cost", "v", float),
        member_cost=r.get("cost", "member_cost", float, 0.0),
        eta=r.get("alliance", "eta", int, 0),
        rho=r.get("alliance", "rho", float, 0.0),
        eta_range=r.get("alliance", "eta_range", str),
        seed=r.get("sim", "seed", int, 20190704),
        replications=r.get("sim", "replications", int, 10_000),
        max_observations=r.get("sim", "max_observations", int),
        genuine_initial=_int_or_word(r, "sim", "genuine_initial", "mirror", 0),
        jobs=r.get("sim", "jobs", int, 1),
        mode=r.get("modes", "mode", str, "exact"),
        initial=_int_or_word(r, "modes", "initial", "geometric", "geometric"),
        source=source,
    )
    validate(cfg, r)
    return cfg


def _int_or_word(r: _Reader, section, key, word, default):
    raw = r.get(section, key, str)
    if raw is None:
        return default
    if raw == word:
        return word
    try:
        return int(raw)
    except ValueError:
        r.fail(section, key, f"expected {word!r} or an integer, got {raw!r}")


# which file key each model field comes from, for error locations
_FIELD_KEYS = {
    "node_count": ("network", "N"),
    "threshold": ("network", "threshold"),
    "lambda_c": ("arrival", "lambda_c"),
    "lambda_g": ("arrival", "lambda_g"),
    "mean_initial": ("observation", "alpha0"),
    "mean_interval": ("observation", "alpha"),
    "eta": ("alliance", "eta"),
    "rho": ("alliance", "rho"),
    "eta_range": ("alliance", "eta_range"),
    "token_value": ("cost", "V"),
    "member_cost": ("cost", "member_cost"),
    "seed": ("sim", "seed"),
    "replications": ("sim", "replications"),
    "mode": ("modes", "mode"),
    "initial": ("modes", "initial"),
}


def _where(r: Optional[_Reader], fieldname: str) -> str:
    section, key = _FIELD_KEYS.get(fieldname, ("sim", fieldname))
    if r is None:
        return f"{section}.{key}"
    if r.has(section, key):
        return r.where(section, key)
    if section == "arrival":
        for alt in ("lambda_c_alpha", "lambda_g_alpha"):
            if alt.startswith(key) and r.has(section, alt):
                return r.where(section, alt)
    return r.where(section)


def validate(cfg: ScenarioConfig, reader: Optional[_Reader] = None) -> None:
    """Enforce every model invariant; errors name the offending file line."""

    def check(fieldname, build):
        try:
            build()
        except (DomainError, ValueError) as exc:
            raise ConfigError(f"{_where(reader, fieldname)}: {exc}") from None

    check("node_count", lambda: NetworkParams(cfg.node_count, cfg.threshold))
    check("lambda_c", lambda: ArrivalModel(cfg.lambda_c, 0.0))
    check("lambda_g", lambda: ArrivalModel(0.0, cfg.lambda_g))
    check("mean_initial", lambda: ObservationModel(cfg.mean_initial, 1.0))
    check("mean_interval", lambda: ObservationModel(0.0, cfg.mean_interval))
    check("eta", lambda: AllianceConfig(cfg.eta, 0.0).check_network(cfg.network))
    check("rho", lambda: AllianceConfig(0, cfg.rho))
    check("token_value", lambda: CostModel(cfg.token_value, 0.0))
    check("member_cost", lambda: CostModel(1.0, cfg.member_cost))
    check("eta_range", cfg.sweep)

    def sweep_bound():
        stop = cfg.sweep().stop
        if stop > -(-cfg.node_count // 2):
            raise DomainError(f"range end {stop} exceeds ceil(N/2)={-(-cfg.node_count // 2)}")

    check("eta_range", sweep_bound)

    def mode():
        if cfg.mode not in MODE_NAMES:
            raise DomainError(f"mode must be one of {', '.join(MODE_NAMES)}, got {cfg.mode!r}")

    check("mode", mode)
    check("initial", lambda: cfg.race)
    check("seed", lambda: cfg.sim_config())


def load(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return loads(text, source=str(path))


def dump(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(cfg.canonical())
