"""Run configuration: an INI file resolved against built-in defaults."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import CourseMeta, parse_timestamp
from .seeding import derive_seed

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0", "output": "out", "window": "604800"},
    "network": {"subforums": "each", "dense_edge_warning": "5000"},
    "backbone": {"alpha": "0.05", "method": "analytic", "replicates": "199", "bonferroni": "false"},
    "robustness": {"strategy": "degree_recomputed", "epsilon": "0.05", "replicates": "100"},
    "diffusion": {"beta": "0.2", "steps": "50", "replicates": "100", "seeds": "", "weighted": "false",
                  "temporal": "false"},
    "dialogue": {"coder_a": "", "coder_b": "", "group_by": "subforum", "coder": "", "majority": "false"},
    "typology": {"kmax": "20", "iters": "20000", "tol": "1e-10", "restarts": "1", "a": "0.001", "b": "0.001",
                 "scale": "true", "code_columns": "auto", "behaviours": "posts,comments,threads,views,votes"},
    "experiment": {"weeks": "5", "threads": "5", "open_probability": "0.35", "click_probability": "0.04"},
}
SEEDED_SECTIONS = ("backbone", "robustness", "diffusion", "typology", "experiment")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    base_dir: Path
    course: CourseMeta
    intro_subforums: tuple[str, ...]
    inputs: dict[str, str]
    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    # -- typed access -------------------------------------------------------
    def get(self, section: str, key: str) -> str:
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"missing config value [{section}] {key}") from None

    def getint(self, section: str, key: str) -> int:
        try:
            return int(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be an integer") from None

    def getfloat(self, section: str, key: str) -> float:
        try:
            return float(self.get(section, key))
        except ValueError:
            raise ConfigError(f"[{section}] {key} must be a number") from None

    def getbool(self, section: str, key: str) -> bool:
        value = self.get(section, key).strip().lower()
        if value in ("1", "true", "yes", "on"):
            return True
        if value in ("0", "false", "no", "off", ""):
            return False
        raise ConfigError(f"[{section}] {key} must be a boolean")

    def getlist(self, section: str, key: str) -> list[str]:
        return [x.strip() for x in self.get(section, key).split(",") if x.strip()]

    def set(self, section: str, key: str, value: Any) -> None:
        self.sections.setdefault(section, {})[key] = str(value).lower() if isinstance(value, bool) else str(value)

    @property
    def root_seed(self) -> int:
        return self.getint("run", "seed")

    def stage_seed(self, section: str) -> int:
        """Explicit ``[section] seed`` if given, else derived from the root seed."""
        explicit = self.sections.get(section, {}).get("seed", "")
        return int(explicit) if explicit else derive_seed(self.root_seed, section)

    def input_path(self, name: str) -> Path | None:
        value = self.inputs.get(name, "")
        if not value:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        p = Path(self.get("run", "output"))
        return p if p.is_absolute() else self.base_dir / p

    def resolved(self) -> dict:
        """Everything that determines outputs; the output location itself is excluded."""
        sections = {k: dict(sorted(v.items())) for k, v in sorted(self.sections.items())}
        sections["run"] = {k: v for k, v in sections.get("run", {}).items() if k != "output"}
        return {
            "course": {"start": self.course.start, "end": self.course.end, "enrolled": self.course.enrolled,
                       "introductory_subforums": list(self.intro_subforums)},
            "inputs": dict(sorted(self.inputs.items())),
            "sections": sections,
            "seeds": {"root": self.root_seed, **{s: self.stage_seed(s) for s in SEEDED_SECTIONS}},
        }


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    if not parser.has_section("course"):
        raise ConfigError("config needs a [course] section with start and end")
    course = parser["course"]
    try:
        start = parse_timestamp(course["start"])
        end = parse_timestamp(course["end"])
        enrolled = int(course["enrolled"]) if course.get("enrolled", "").strip() else None
        meta = CourseMeta(start, end, enrolled)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid [course] section: {exc}") from None
    intro = tuple(x.strip() for x in course.get("introductory_subforums", "introductions").split(",") if x.strip())

    sections = {k: dict(v) for k, v in DEFAULTS.items()}
    for name in parser.sections():
        if name in ("course", "inputs"):
            continue
        sections.setdefault(name, {}).update(dict(parser[name]))
    inputs = dict(parser["inputs"]) if parser.has_section("inputs") else {}
    if "events" not in inputs:
        raise ConfigError("[inputs] events is required")
    cfg = RunConfig(path.parent.resolve(), meta, intro, inputs, sections)
    cfg.getint("run", "seed")
    if cfg.getint("run", "window") <= 0:
        raise ConfigError("[run] window must be positive")
    return cfg
