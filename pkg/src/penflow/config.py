"""Line-based run configuration.

Format: ``[section]`` headers and ``key = value`` lines, ``#`` comments,
blank lines ignored. Unknown sections or keys are rejected with their
line number; duplicate keys report both line numbers. Values never
contain quoting or escapes; lists are comma separated.
"""

from __future__ import annotations

from dataclasses import dataclass

from penflow.sampling import (DISTRIBUTIONS, PERTURBATION_KINDS,
                              PerturbationSpec)

EXPERIMENTS = ("converge", "cylinder", "custom")
PROFILES = ("ci", "full")
MODES = ("consistent", "ic_only")
FORCINGS = ("rotational", "none")
CFL_FORMS = ("theoretical", "experimental")

CI_MAX_LEVEL = 61
CI_MAX_CYLINDER_T = 10.0


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class SimulationConfig:
    experiment: str = "custom"
    profile: str = "ci"
    threads: int = 1
    mode: str = "consistent"

    levels: tuple[int, ...] = ()
    mesh_m: int | None = None
    mesh_file: str | None = None
    lc: float | None = None

    T: float = 1.0
    dt0: float | None = None
    dt_min: float | None = None
    eps: float | None = None

    nu: float = 1.0
    forcing: str = "rotational"

    members: int = 2
    cfl_form: str = "theoretical"
    cfl_constant: float = 1.0

    perturbation: PerturbationSpec | None = None

    outdir: str = "out"
    snapshot_every: int = 0

    def __post_init__(self):
        def bad(key: str, why: str):
            raise ConfigError(f"config key {key}: {why}")

        if self.experiment not in EXPERIMENTS:
            bad("run.experiment", f"must be one of {EXPERIMENTS}")
        if self.profile not in PROFILES:
            bad("run.profile", f"must be one of {PROFILES}")
        if self.threads < 1:
            bad("run.threads", "must be a positive integer")
        if self.mode not in MODES:
            bad("run.mode", f"must be one of {MODES}")
        if any(m < 1 for m in self.levels):
            bad("mesh.levels", "subdivision counts must be positive")
        if self.mesh_m is not None and self.mesh_m < 1:
            bad("mesh.m", "must be a positive integer")
        if self.lc is not None and not self.lc > 0:
            bad("mesh.lc", "must be positive")
        if not self.T > 0:
            bad("time.T", "must be positive")
        for key, val in (("time.dt0", self.dt0), ("time.dt_min", self.dt_min),
                         ("time.eps", self.eps)):
            if val is not None and not val > 0:
                bad(key, "must be positive")
        if not self.nu > 0:
            bad("physics.nu", "must be positive")
        if self.forcing not in FORCINGS:
            bad("physics.forcing", f"must be one of {FORCINGS}")
        if self.members < 1:
            bad("ensemble.members", "must be a positive integer")
        if self.cfl_form not in CFL_FORMS:
            bad("stability.form", f"must be one of {CFL_FORMS}")
        if not self.cfl_constant > 0:
            bad("stability.constant", "must be positive")
        if self.snapshot_every < 0:
            bad("output.snapshot_every", "must be zero or positive")
        if (self.perturbation is not None
                and self.perturbation.magnitudes is not None
                and len(self.perturbation.magnitudes) != self.members):
            bad("perturbation.magnitudes",
                f"got {len(self.perturbation.magnitudes)} values for "
                f"{self.members} members")
        if self.profile == "ci":
            if self.experiment == "converge" and any(
                    m > CI_MAX_LEVEL for m in self.levels):
                bad("mesh.levels",
                    f"ci profile caps refinement at m = {CI_MAX_LEVEL}; "
                    "use profile = full for finer meshes")
            if self.experiment == "cylinder" and self.T > CI_MAX_CYLINDER_T:
                bad("time.T",
                    f"ci profile caps the cylinder horizon at "
                    f"T = {CI_MAX_CYLINDER_T}; use profile = full")


def default_convergence_config(profile: str = "ci", levels=None,
                               threads: int = 1, mode: str = "consistent",
                               outdir: str = "out") -> SimulationConfig:
    if levels is None:
        levels = (27, 41, 61) if profile == "ci" else (27, 41, 61, 91, 137)
    return SimulationConfig(
        experiment="converge", profile=profile, threads=threads, mode=mode,
        levels=tuple(levels), T=1.0, nu=1.0, members=2,
        cfl_form="theoretical", cfl_constant=1.0,
        perturbation=PerturbationSpec("multiplicative-ic",
                                      magnitudes=(1e-3, -1e-3)),
        outdir=outdir)


def default_cylinder_config(profile: str = "ci", threads: int = 1,
                            outdir: str = "out",
                            mesh_file: str | None = None) -> SimulationConfig:
    lc = 0.1 if profile == "ci" else 0.05
    return SimulationConfig(
        experiment="cylinder", profile=profile, threads=threads,
        mesh_file=mesh_file, lc=lc,
        T=10.0 if profile == "ci" else 100.0,
        nu=1.0 / 150.0, members=2,
        cfl_form="experimental", cfl_constant=1200.0,
        perturbation=PerturbationSpec("bump-ic", magnitudes=(0.1, -0.1)),
        outdir=outdir)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_int(raw: str) -> int:
    return int(raw, 10)


def _parse_float(raw: str) -> float:
    return float(raw)


def _parse_str(raw: str) -> str:
    return raw


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip(), 10) for part in raw.split(","))


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in raw.split(","))


# section -> key -> (SimulationConfig field or perturbation slot, parser)
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {
        "experiment": ("experiment", _parse_str),
        "profile": ("profile", _parse_str),
        "threads": ("threads", _parse_int),
        "mode": ("mode", _parse_str),
    },
    "mesh": {
        "levels": ("levels", _parse_int_list),
        "m": ("mesh_m", _parse_int),
        "file": ("mesh_file", _parse_str),
        "lc": ("lc", _parse_float),
    },
    "time": {
        "T": ("T", _parse_float),
        "dt0": ("dt0", _parse_float),
        "dt_min": ("dt_min", _parse_float),
        "eps": ("eps", _parse_float),
    },
    "physics": {
        "nu": ("nu", _parse_float),
        "forcing": ("forcing", _parse_str),
    },
    "ensemble": {
        "members": ("members", _parse_int),
    },
    "stability": {
        "form": ("cfl_form", _parse_str),
        "constant": ("cfl_constant", _parse_float),
    },
    "perturbation": {
        "kind": ("perturbation.kind", _parse_str),
        "magnitudes": ("perturbation.magnitudes", _parse_float_list),
        "distribution": ("perturbation.distribution", _parse_str),
        "scale": ("perturbation.scale", _parse_float),
        "seed": ("perturbation.seed", _parse_int),
    },
    "output": {
        "dir": ("outdir", _parse_str),
        "snapshot_every": ("snapshot_every", _parse_int),
    },
}


_KEY_TO_SLOT = {f"{sec}.{key}": slot
                for sec, keys in _SCHEMA.items()
                for key, (slot, _) in keys.items()}


def _annotate_line(exc: ConfigError, assigned) -> ConfigError:
    """Prefix a constraint violation with the offending line number."""
    msg = str(exc)
    if msg.startswith("config key "):
        name = msg[len("config key "):].split(":", 1)[0]
        slot = _KEY_TO_SLOT.get(name)
        if slot in assigned:
            return ConfigError(f"line {assigned[slot][1]}: {msg}")
    return exc


def parse_config(text: str) -> SimulationConfig:
    """Parse configuration text; raises :class:`ConfigError` with line
    numbers on any malformed, unknown or duplicated entry."""
    assigned: dict[str, tuple[object, int]] = {}
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header "
                                  f"{line!r}")
            name = line[1:-1].strip()
            if name not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            section = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {line!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key "
                              f"{section}.{key}")
        slot, parser = _SCHEMA[section][key]
        if slot in assigned:
            first = assigned[slot][1]
            raise ConfigError(f"line {lineno}: duplicate key {section}.{key} "
                              f"(first set at line {first})")
        if raw_value == "":
            raise ConfigError(f"line {lineno}: empty value for "
                              f"{section}.{key}")
        try:
            value = parser(raw_value)
        except ValueError:
            kind = {_parse_int: "an integer", _parse_float: "a number",
                    _parse_int_list: "a comma-separated integer list",
                    _parse_float_list: "a comma-separated number list"
                    }.get(parser, "a value")
            raise ConfigError(f"line {lineno}: invalid value {raw_value!r} "
                              f"for {section}.{key} (expected {kind})")
        assigned[slot] = (value, lineno)

    kwargs = {}
    pert_kwargs = {}
    for slot, (value, _) in assigned.items():
        if slot.startswith("perturbation."):
            pert_kwargs[slot.split(".", 1)[1]] = value
        else:
            kwargs[slot] = value
    if pert_kwargs:
        if "kind" not in pert_kwargs:
            raise ConfigError(
                "config key perturbation.kind: required when any "
                "[perturbation] entry is present")
        try:
            kwargs["perturbation"] = PerturbationSpec(**pert_kwargs)
        except ValueError as exc:
            raise ConfigError(f"config section [perturbation]: {exc}")
    try:
        return SimulationConfig(**kwargs)
    except ConfigError as exc:
        raise _annotate_line(exc, assigned) from None
    except ValueError as exc:
        raise ConfigError(str(exc))


def serialize_config(cfg: SimulationConfig) -> str:
    """Emit text that parses back to an equal configuration."""
    lines: list[str] = []

    def emit(section: str, pairs: list[tuple[str, object]]):
        body = [(k, v) for k, v in pairs if v is not None and v != ()]
        if not body:
            return
        lines.append(f"[{section}]")
        for k, v in body:
            if isinstance(v, tuple):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x)
                              for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        lines.append("")

    emit("run", [("experiment", cfg.experiment), ("profile", cfg.profile),
                 ("threads", cfg.threads), ("mode", cfg.mode)])
    emit("mesh", [("levels", cfg.levels), ("m", cfg.mesh_m),
                  ("file", cfg.mesh_file), ("lc", cfg.lc)])
    emit("time", [("T", cfg.T), ("dt0", cfg.dt0), ("dt_min", cfg.dt_min),
                  ("eps", cfg.eps)])
    emit("physics", [("nu", cfg.nu), ("forcing", cfg.forcing)])
    emit("ensemble", [("members", cfg.members)])
    emit("stability", [("form", cfg.cfl_form),
                       ("constant", cfg.cfl_constant)])
    if cfg.perturbation is not None:
        p = cfg.perturbation
        emit("perturbation", [("kind", p.kind), ("magnitudes", p.magnitudes),
                              ("distribution", p.distribution),
                              ("scale", p.scale if p.distribution else None),
                              ("seed", p.seed)])
    emit("output", [("dir", cfg.outdir),
                    ("snapshot_every", cfg.snapshot_every)])
    return "\n".join(lines)
