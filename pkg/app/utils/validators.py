"""
Experiment config files.

Configs are INI-style text (sections of key = value) validated by pydantic
models. Unknown sections or keys, malformed values and missing required keys
are all rejected with one diagnostic line per problem before any computation.
"""
import configparser
import math
import re
from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.config import settings
from app.core.errors import ArgumentError, ConfigError
from app.core.liegroup import LieContext


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        parts = [p for p in re.split(r"[,\s]+", value.strip()) if p]
        return parts
    return value


IntList = Annotated[List[int], BeforeValidator(_split_list)]
FloatList = Annotated[List[float], BeforeValidator(_split_list)]


def _split_table(value: Any) -> Any:
    """'16:5.0, 32:7.5' -> {16: '5.0', 32: '7.5'}."""
    if isinstance(value, str):
        entries = {}
        for part in _split_list(value):
            n, sep, r = part.partition(":")
            if not sep:
                raise ValueError(f"table entry {part!r} is not N:R")
            entries[n] = r
        return entries
    return value


RadiusTable = Annotated[Dict[int, float], BeforeValidator(_split_table)]


class ExperimentName(str, Enum):
    GEOMETRY = "geometry"
    LEVY = "levy"
    TRANSLATION = "translation"
    ROTATION = "rotation"
    STAR = "star"
    SEMIDIRECT = "semidirect"
    BROWNIAN = "brownian"
    WITNESS = "witness"
    SELFTEST = "selftest"


DEFECT_EXPERIMENTS = {
    ExperimentName.TRANSLATION,
    ExperimentName.ROTATION,
    ExperimentName.STAR,
    ExperimentName.SEMIDIRECT,
}


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ExperimentSection(Section):
    name: ExperimentName
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output: str = settings.OUTPUT_DIR
    format: Literal["csv", "json"] = "csv"


class GroupSection(Section):
    spec: str = settings.DEFAULT_GROUP

    @field_validator("spec")
    @classmethod
    def parse_spec(cls, value: str) -> str:
        try:
            return LieContext.from_spec(value).label
        except ArgumentError as exc:
            raise ValueError(str(exc)) from exc


class ScheduleSection(Section):
    kind: Literal["power-law", "table"] = "power-law"
    c: float = Field(settings.DEFAULT_SCHEDULE_C, gt=0)
    alpha: Optional[float] = None
    table: Optional[RadiusTable] = None

    @model_validator(mode="after")
    def parameters_for_kind(self) -> "ScheduleSection":
        if self.kind == "power-law" and self.alpha is None:
            raise ValueError("a power-law schedule needs alpha")
        if self.kind == "table":
            if not self.table:
                raise ValueError("a table schedule needs N:R entries")
            if any(n < 1 or r <= 0 for n, r in self.table.items()):
                raise ValueError("table entries need N >= 1 and R > 0")
        return self


class SweepSection(Section):
    N_list: IntList
    M: int = Field(20_000, ge=100)
    max_samples: Optional[int] = Field(None, ge=100)
    law: Literal["uniform-ball", "gaussian"] = "uniform-ball"

    @field_validator("N_list")
    @classmethod
    def ascending(cls, value: List[int]) -> List[int]:
        if len(value) < 3:
            raise ValueError("needs at least 3 entries")
        if any(n < 1 for n in value) or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("must be positive and strictly ascending")
        return value


class PathSection(Section):
    """The path g: shift for translation/star/semidirect defects."""
    kind: Literal["random-smooth", "random", "constant", "zero"] = "random"
    N: int = Field(16, ge=1)
    norm: float = Field(1.0, ge=0)
    axis: int = Field(0, ge=0)
    key: int = Field(1, ge=0)


class FunctionalSection(Section):
    kind: Literal["cosine", "gauss_window"] = "cosine"
    direction: Literal["g", "random", "random-smooth", "constant"] = "random"
    N: int = Field(16, ge=1)
    norm: float = Field(1.0, ge=0)
    axis: int = Field(0, ge=0)
    scale: float = Field(1.0, gt=0)
    key: int = Field(2, ge=0)


class RotationSection(Section):
    kind: Literal["geodesic", "constant", "identity"] = "geodesic"
    axis: int = Field(0, ge=0)
    angle: float = math.pi
    K: int = Field(1024, ge=1)
    control: Literal["plain", "blockwise"] = "plain"


class SemidirectSection(Section):
    k_axis: int = Field(1, ge=0)
    k_angle: float = 1.0
    trace_scale: float = 0.5


class BrownianSection(Section):
    t_list: FloatList = [1.0, 2.0, 4.0, 8.0]
    K: int = Field(64, ge=2)
    at: FloatList = [1.0]
    M: int = Field(20_000, ge=100)
    trace_scale: float = 1.0
    g_axis: int = Field(0, ge=0)
    g_angle: float = 2.0
    haar_t: float = Field(64.0, gt=0)
    haar_M: int = Field(10_000, ge=100)

    @field_validator("t_list")
    @classmethod
    def positive_times(cls, value: List[float]) -> List[float]:
        if not value or any(t <= 0 for t in value):
            raise ValueError("diffusion times must be positive")
        return value

    @field_validator("at")
    @classmethod
    def unit_interval(cls, value: List[float]) -> List[float]:
        if not value or any(not 0.0 <= a <= 1.0 for a in value):
            raise ValueError("observation times must lie in [0, 1]")
        return value


class GeometrySection(Section):
    n_list: IntList = [8, 16, 32, 64, 128, 256, 512]
    exponents: FloatList = [0.6, 0.4]
    mc_points: FloatList = [3, 1.0]
    M: int = Field(100_000, ge=100)

    @field_validator("mc_points")
    @classmethod
    def pairs(cls, value: List[float]) -> List[float]:
        if len(value) % 2:
            raise ValueError("expects (n, s) pairs")
        return value


class LevySection(Section):
    n_list: IntList = [24, 192]
    eps_list: FloatList = [0.1, 0.2]
    M: int = Field(100_000, ge=100)
    block_N: int = Field(64, ge=1)
    block_M: int = Field(10_000, ge=100)


class WitnessSection(Section):
    y_axis: int = Field(0, ge=0)
    y: Optional[FloatList] = None
    eps: float = Field(0.1, ge=0)
    N: int = Field(64, ge=1)
    R_list: FloatList = [10.0, 100.0]


class SelftestSection(Section):
    checks: Annotated[List[str], BeforeValidator(_split_list)] = [
        "liegroup", "cocycle", "roundtrip", "group", "overlap", "witness",
    ]
    cocycle_pairs: int = Field(50, ge=1)
    roundtrip_paths: int = Field(20, ge=1)


class ExperimentConfig(Section):
    experiment: ExperimentSection
    group: GroupSection = GroupSection()
    schedule: ScheduleSection = ScheduleSection(alpha=settings.DEFAULT_SCHEDULE_ALPHA)
    sweep: Optional[SweepSection] = None
    path: PathSection = PathSection()
    functional: FunctionalSection = FunctionalSection()
    rotation: RotationSection = RotationSection()
    semidirect: SemidirectSection = SemidirectSection()
    brownian: BrownianSection = BrownianSection()
    geometry: GeometrySection = GeometrySection()
    levy: LevySection = LevySection()
    witness: WitnessSection = WitnessSection()
    selftest: SelftestSection = SelftestSection()

    @model_validator(mode="after")
    def sections_for_experiment(self) -> "ExperimentConfig":
        if self.experiment.name in DEFECT_EXPERIMENTS and self.sweep is None:
            raise ValueError(f"experiment '{self.experiment.name.value}' needs a [sweep] section")
        if self.schedule.kind == "table":
            needed = set(self.sweep.N_list) if self.sweep is not None else set()
            if self.experiment.name == ExperimentName.LEVY:
                needed.add(self.levy.block_N)
            missing = sorted(needed - set(self.schedule.table))
            if missing:
                raise ValueError(f"schedule table has no radius for N = {missing}")
        return self

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _diagnostics(exc: ValidationError) -> List[str]:
    lines = []
    for error in exc.errors():
        where = ".".join(str(part) for part in error["loc"]) or "config"
        lines.append(f"{where}: {error['msg']}")
    return lines


def parse_ini(text: str, source: str = "<config>") -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lines = [f"line {lineno}: cannot parse {line!r}" for lineno, line in exc.errors]
        raise ConfigError(f"{source}: malformed config", lines) from exc
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: malformed config",
                          [f"line {exc.lineno}: key outside of any [section]"]) from exc
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
        raise ConfigError(f"{source}: malformed config", [f"line {exc.lineno}: {exc.message}"]) from exc
    return {name: dict(parser.items(name)) for name in parser.sections()}


def apply_overrides(raw: Dict[str, Dict[str, Any]], overrides: Dict[str, Any]) -> Dict[str, Dict[str, Any]]:
    """Merge `section.key` overrides (CLI flags) over file values."""
    merged = {name: dict(values) for name, values in raw.items()}
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError("bad override", [f"{dotted}: expected section.key"])
        merged.setdefault(section, {})[key] = value
    return merged


def validate_config(raw: Dict[str, Dict[str, Any]]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError("invalid experiment config", _diagnostics(exc)) from exc


def load_config(path: str, overrides: Optional[Dict[str, Any]] = None) -> Tuple[Dict[str, Dict[str, Any]], ExperimentConfig]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}", [str(exc)]) from exc
    raw = apply_overrides(parse_ini(text, source=path), overrides or {})
    return raw, validate_config(raw)
