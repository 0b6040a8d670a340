"""Experiment configuration: an INI-style ``key = value`` file with one
section per module, validated into an :class:`ExperimentConfig`.

Every key and its default is listed in :data:`SCHEMA`; preset-specific
defaults in :data:`PRESET_DEFAULTS` override the generic ones. Values that
take lists are comma separated.
"""
import configparser
import difflib
import math
import re
from dataclasses import dataclass, field

PRESETS = (
    "phase-diagram-sd",
    "stability-trace",
    "hessian-spectrum",
    "lmc-qsl",
    "lmc-distances",
    "critical-scaling",
    "relaxation-stages",
    "deformation-scan",
)


class ConfigError(ValueError):
    """Aggregated configuration errors (``errors`` lists the messages)."""

    def __init__(self, errors, warnings=()):
        self.errors = list(errors)
        self.warnings = list(warnings)
        super().__init__("\n".join(self.errors))


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _all_positive(v):
    return len(v) > 0 and all(x > 0 for x in v)


# section -> key -> (parser, default, check, description)
SCHEMA = {
    "experiment": {
        "preset": (str, None, lambda v: v in PRESETS, "one of " + ", ".join(PRESETS)),
        "problem": (str, "1q", lambda v: v in ("1q", "2q"), "1q or 2q"),
        "seed_base": (int, 0, _non_negative, "first seed; run r uses seed_base + r"),
        "workers": (int, 1, _positive, "worker processes"),
    },
    "grid": {
        "T": (_floats, [], lambda v: all(x > 0 for x in v), "explicit durations (overrides T_min..T_max)"),
        "T_min": (float, 0.1, _positive, "first duration of the grid"),
        "T_max": (float, 4.0, _positive, "last duration of the grid"),
        "T_points": (int, 40, _positive, "number of grid points"),
        "L": (int, 64, lambda v: v >= 2, "time steps of continuous protocols"),
        "N": (int, 200, lambda v: v >= 2, "time steps of bang-bang protocols"),
    },
    "expansion": {
        "kind": (str, "exact", lambda v: v in ("exact", "dyson", "cumulant"), "landscape kind"),
        "order": (int, 2, lambda v: 1 <= v <= 8, "expansion order"),
    },
    "stability": {
        "n_scan": (int, 200, lambda v: v >= 10, "widths scanned per duration"),
        "modes": (_ints, [], lambda v: all(x >= 1 for x in v), "mode indices (1-based) to scan"),
        "x_min": (float, -1.0, lambda v: math.isfinite(v), "deformation range start"),
        "x_max": (float, 1.0, lambda v: math.isfinite(v), "deformation range end"),
        "x_points": (int, 201, lambda v: v >= 3, "deformation grid points"),
    },
    "sampler": {
        "runs": (int, 10, _positive, "independent runs per duration"),
        "beta": (_floats, [1e5], _all_positive, "inverse temperatures"),
        "beta_L": (int, 0, _non_negative, "length multiplying beta in the acceptance exponent (0: grid L)"),
        "sigma": (float, 10**-1.5, lambda v: 0 < v <= 1, "proposal width"),
        "stride": (int, 4096, _positive, "iterations between stored samples"),
        "n_samples": (int, 100, _positive, "samples stored per run"),
        "max_iter": (int, 200_000, _positive, "cap on thermalization iterations"),
        "window": (int, 200, _positive, "thermalization window"),
        "trap_threshold": (float, 1e-6, _positive, "post-selection threshold"),
        "save_runs": (_bool, True, lambda v: True, "write one CSV per run"),
    },
    "field": {
        "kappa": (float, 3.0, _positive, "stiffness of the boundary surrogate"),
        "alpha": (float, 1.0, _positive, "entropy density scale of the bang-bang branch"),
        "L_list": (_ints, [64, 128, 256], lambda v: len(v) > 0 and all(x >= 4 for x in v),
                   "discretizations for the q prediction"),
        "T_qsl": (float, 2.511355674, _positive, "speed-limit duration used for the T offsets"),
        "T_c": (float, 0.9761085877, _positive, "critical duration fixing the central width guess"),
    },
}

PRESET_DEFAULTS = {
    "phase-diagram-sd": {"grid": {"T_min": 0.1, "T_max": 4.0, "T_points": 40}, "sampler": {"runs": 250}},
    "stability-trace": {"grid": {"T_min": 0.1, "T_max": 3.0, "T_points": 30}},
    "hessian-spectrum": {"grid": {"T": [2.52]}},
    "lmc-qsl": {"grid": {"T": [2.4, 2.6]}, "sampler": {"beta": [1e4, 1e5, 1e6]}},
    "lmc-distances": {"grid": {"T": [2.6]}, "sampler": {"runs": 20}},
    "critical-scaling": {"grid": {"T_min": 2.52, "T_max": 2.70, "T_points": 10}},
    "relaxation-stages": {"grid": {"T": [2.0, 2.5, 3.0]},
                          "sampler": {"runs": 10, "max_iter": 20000, "n_samples": 1}},
    "deformation-scan": {"grid": {"T": [2.52]},
                         "stability": {"modes": list(range(3, 21)), "x_min": -1.5, "x_max": 1.5}},
}


@dataclass
class ExperimentConfig:
    preset: str
    problem: str = "1q"
    seed_base: int = 0
    workers: int = 1
    sections: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def get(self, section, key):
        return self.sections[section][key]

    @property
    def T_grid(self):
        g = self.sections["grid"]
        if g["T"]:
            return list(g["T"])
        if g["T_points"] == 1:
            return [g["T_min"]]
        step = (g["T_max"] - g["T_min"]) / (g["T_points"] - 1)
        return [g["T_min"] + i * step for i in range(g["T_points"])]

    def seeds(self, runs=None):
        runs = self.get("sampler", "runs") if runs is None else runs
        return [self.seed_base + r for r in range(runs)]

    def echo(self):
        """Fully resolved configuration as plain data (for the manifest)."""
        out = {"preset": self.preset, "problem": self.problem, "seed_base": self.seed_base}
        out.update({s: dict(v) for s, v in self.sections.items() if s != "experiment"})
        return out


def _key_lines(text):
    """Map (section, key) to the line where it is set."""
    where, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            where[(section, m.group(1).strip())] = no
    return where


def validate_config(text, preset=None, overrides=None):
    """Parse and validate configuration text.

    ``preset`` (from the command line) takes precedence over the file;
    ``overrides`` maps ``(section, key)`` to already-typed values.
    Raises :class:`ConfigError` with every problem found.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    errors, warnings = [], []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"])
    lines = _key_lines(text)

    def at(section, key):
        no = lines.get((section, key))
        return f"line {no}: " if no else ""

    given = {}
    for section in parser.sections():
        if section not in SCHEMA:
            near = difflib.get_close_matches(section, SCHEMA, n=1)
            hint = f" (did you mean [{near[0]}]?)" if near else ""
            warnings.append(f"unknown section [{section}]{hint}; ignored")
            continue
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                near = difflib.get_close_matches(key, SCHEMA[section], n=1)
                hint = f"; nearest valid key is {near[0]!r}" if near else ""
                warnings.append(f"{at(section, key)}unknown key {section}.{key}{hint}; ignored")
                continue
            conv, _, check, desc = SCHEMA[section][key]
            try:
                value = conv(raw)
            except ValueError:
                errors.append(f"{at(section, key)}{section}.{key} = {raw!r}: cannot parse ({desc})")
                continue
            if not check(value):
                errors.append(f"{at(section, key)}{section}.{key} = {raw!r} out of range ({desc})")
                continue
            given[(section, key)] = value

    name = preset or given.get(("experiment", "preset"))
    if name is None:
        errors.append("experiment.preset is required (" + ", ".join(PRESETS) + ")")
    elif name not in PRESETS:
        errors.append(f"unknown preset {name!r} (" + ", ".join(PRESETS) + ")")
    for k, v in (overrides or {}).items():
        conv, _, check, desc = SCHEMA[k[0]][k[1]]
        if not check(v):
            errors.append(f"{k[0]}.{k[1]} = {v!r} out of range ({desc})")
        given[k] = v
    if errors:
        raise ConfigError(errors, warnings)

    sections = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    for s, keys in PRESET_DEFAULTS.get(name, {}).items():
        sections[s].update(keys)
    explicit_range = any(k in given for k in (("grid", "T_min"), ("grid", "T_max"), ("grid", "T_points")))
    if explicit_range and ("grid", "T") not in given:
        sections["grid"]["T"] = []
    for (s, k), v in given.items():
        sections[s][k] = v
    sections["experiment"]["preset"] = name

    g = sections["grid"]
    if not g["T"] and g["T_max"] < g["T_min"]:
        errors.append(f"{at('grid', 'T_max')}grid.T_max must be >= grid.T_min")
    if sections["stability"]["x_max"] <= sections["stability"]["x_min"]:
        errors.append(f"{at('stability', 'x_max')}stability.x_max must exceed stability.x_min")
    if errors:
        raise ConfigError(errors, warnings)
    e = sections["experiment"]
    return ExperimentConfig(name, e["problem"], e["seed_base"], e["workers"], sections, warnings)
