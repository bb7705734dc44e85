"""Run configuration: dataclass, validation and TOML/JSON loading."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .problems import CATALOGUE, SPACE_TIME, get_problem
from .slices import STRATEGIES

MODES = ("space-time", "genalpha", "slices", "converge", "adapt")

#: fields that must be set (not None) for each mode
REQUIRED = {
    "space-time": (),
    "genalpha": ("rho_inf", "tau"),
    "slices": ("slices", "strategy"),
    "converge": ("levels",),
    "adapt": ("theta", "steps"),
}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists one message per bad field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    problem: str
    mode: str
    problem_params: dict = field(default_factory=dict)
    resolution: tuple = (4, 4)
    p: int = 1
    p_q: int | None = None
    dp: int = 1
    levels: int | None = None
    theta: float | None = None
    steps: int | None = None
    tol: float | None = None
    rho_inf: float | None = None
    tau: float | None = None
    t_final: float | None = None
    slices: list | None = None
    strategy: str | None = None
    out: str = "out"
    seed: int = 0
    condense: bool = True
    vtk: bool = True

    def validate(self) -> "RunConfig":
        errs = []
        if self.mode not in MODES:
            errs.append(f"mode: must be one of {MODES}, got {self.mode!r}")
        if self.problem not in CATALOGUE:
            errs.append(f"problem: unknown {self.problem!r}; choose from {sorted(CATALOGUE)}")
        for name in REQUIRED.get(self.mode, ()):
            if getattr(self, name) is None:
                errs.append(f"{name}: required for mode {self.mode!r}")
        res = self.resolution
        if not (isinstance(res, (list, tuple)) and len(res) == 2 and all(isinstance(r, int) and r >= 1 for r in res)):
            errs.append("resolution: expected two positive integers [nx, ny]")
        if self.p not in (1, 2):
            errs.append("p: must be 1 or 2")
        if self.p_q is not None and self.p_q not in (1, 2):
            errs.append("p_q: must be 1 or 2")
        if self.dp not in (0, 1):
            errs.append("dp: must be 0 or 1")
        if self.levels is not None and (not isinstance(self.levels, int) or self.levels < 1):
            errs.append("levels: must be a positive integer")
        if self.theta is not None and not 0 < self.theta <= 1:
            errs.append("theta: must lie in (0, 1]")
        if self.steps is not None and (not isinstance(self.steps, int) or self.steps < (0 if self.mode == "slices" else 1)):
            errs.append("steps: must be a positive integer")
        if self.rho_inf is not None and not 0 <= self.rho_inf <= 1:
            errs.append("rho_inf: must lie in [0, 1]")
        if self.tau is not None and not self.tau > 0:
            errs.append("tau: must be positive")
        if self.t_final is not None and not self.t_final > 0:
            errs.append("t_final: must be positive")
        if self.strategy is not None and self.strategy not in STRATEGIES:
            errs.append(f"strategy: must be one of {STRATEGIES}")
        if self.slices is not None:
            s = list(self.slices)
            if len(s) < 2 or any(b <= a for a, b in zip(s, s[1:])):
                errs.append("slices: boundaries must be strictly increasing with at least two entries")
        if not errs:
            try:
                spec = self.build_problem()
            except (TypeError, ValueError) as exc:
                errs.append(f"problem_params: {exc}")
            else:
                st = spec.mode == SPACE_TIME
                if self.mode in ("space-time", "slices") and not st:
                    errs.append(f"mode: {self.mode!r} needs a space-time problem, {self.problem!r} is spatial")
                if self.mode == "genalpha" and st:
                    errs.append(f"mode: 'genalpha' needs a spatial problem, {self.problem!r} is space-time")
                if not st and self.mode in ("converge", "adapt"):
                    for name in ("rho_inf", "tau"):
                        if getattr(self, name) is None:
                            errs.append(f"{name}: required for time marching of spatial problem {self.problem!r}")
        if errs:
            raise ConfigError(errs)
        return self

    def build_problem(self):
        spec = get_problem(self.problem, **self.problem_params)
        if self.t_final is not None:
            spec = spec.with_time_window(spec.t_start, self.t_final)
        return spec

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def config_from_dict(data: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    errs = [f"{k}: unknown field" for k in unknown]
    for k in ("problem", "mode"):
        if k not in data:
            errs.append(f"{k}: missing")
    if errs:
        raise ConfigError(errs)
    data = dict(data)
    if "resolution" in data and isinstance(data["resolution"], list):
        data["resolution"] = tuple(data["resolution"])
    return RunConfig(**data)


def load_config(path) -> RunConfig:
    """Parse a TOML (``.toml``) or JSON file into an unvalidated config."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc.strerror}"]) from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw.decode())
        else:
            import tomli

            data = tomli.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError([f"config: cannot parse {path}: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["config: top level must be a table/object"])
    return config_from_dict(data)
