"""Pipeline configuration: a versioned JSON document with per-stage sections."""

from __future__ import annotations

import copy
import math

from .errors import DomainError
from .io import read_json, write_json

__all__ = ["SCHEMA_VERSION", "DEFAULTS", "PipelineConfig", "load_config"]

SCHEMA_VERSION = 1

DEFAULTS = {
    "version": SCHEMA_VERSION,
    "plant": {"d": 0.2, "w1": 10.0, "k": 1.0},
    "excitation": {
        "kind": "chirp",
        "fs": 100.0,
        "T": 60.0,
        # plant integrated on a grid this many times finer than fs
        "oversample": 10,
        "params": {
            "chirp": {"f0": 0.01, "f1": 50.0, "amp": 1.0},
            "prbs": {"chip_min": 1, "chip_max": 10, "levels": [0.0, 1.0], "seed": 0},
            "impulse": {"width": 1, "amp": 1.0},
        },
    },
    "estimation": {"f_max": None, "min_input_mag_rel": 1e-3},
    "loewner": {"f_max_fraction": 1.0 / 3.0, "undersample": 5, "tol": 1e-8},
    "reduction": {"r": 2, "tol": 1e-6, "max_iter": 100},
    "synthesis": {
        "nc": 2,
        "Wu": [1.0, 1.0, 1e-3, 1.0],
        "We": [10.0, 10.0, 1.0, 0.0],
        "Wk": 1e-9,
        "multistarts": 20,
        "max_evals": 20000,
        "seed": 0,
    },
    "discretization": {
        "Ts": [0.01, 0.05, 0.1, 0.2, 0.5],
        "compare_fraction": 0.1,
        "grid_points": 600,
        "f_min_hz": 1e-3,
        # common band edge for the sample-time sweep; None means half the
        # smallest Nyquist frequency in the list
        "sweep_f_max_hz": None,
    },
    "hybrid": {"N": 10, "u_min": 0.0, "u_max": 1.0, "Tend": 10.0, "amplitude": 1.0, "M": 20},
    "output": "loopsmith_out",
}

_KINDS = ("chirp", "prbs", "impulse")


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise DomainError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and base[key] and isinstance(val, dict):
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _positive(x, name):
    if not (isinstance(x, (int, float)) and math.isfinite(x) and x > 0):
        raise DomainError(f"{name} must be a positive number, got {x!r}")


class PipelineConfig:
    """Validated configuration. Sections are plain dicts reachable as attributes.

    Missing keys take their defaults; unknown keys are rejected.
    """

    SECTIONS = ("plant", "excitation", "estimation", "loewner", "reduction", "synthesis", "discretization", "hybrid")

    def __init__(self, doc=None):
        doc = {} if doc is None else dict(doc)
        version = doc.get("version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise DomainError(f"unsupported configuration version {version!r}")
        self._doc = _merge(DEFAULTS, doc)
        self._validate()

    def __getattr__(self, name):
        if name in PipelineConfig.SECTIONS or name == "output":
            return self._doc[name]
        raise AttributeError(name)

    def __eq__(self, other):
        return isinstance(other, PipelineConfig) and self.to_dict() == other.to_dict()

    def to_dict(self):
        return copy.deepcopy(self._doc)

    def subset(self, *sections):
        """Copy of the named sections, for embedding in stage reports."""
        return {s: copy.deepcopy(self._doc[s]) for s in sections}

    def with_seed(self, seed):
        doc = self.to_dict()
        doc["synthesis"]["seed"] = int(seed)
        return PipelineConfig(doc)

    def with_output(self, out):
        doc = self.to_dict()
        doc["output"] = str(out)
        return PipelineConfig(doc)

    def save(self, path):
        return write_json(path, self._doc)

    @property
    def f_nyquist(self):
        return self.excitation["fs"] / 2

    @property
    def sweep_f_max(self):
        d = self.discretization
        if d["sweep_f_max_hz"] is not None:
            return float(d["sweep_f_max_hz"])
        return 0.5 * 0.5 / max(d["Ts"])

    def _validate(self):
        p = self._doc["plant"]
        if not 0 < p["d"] < 1:
            raise DomainError(f"plant.d must lie in (0, 1), got {p['d']}")
        _positive(p["w1"], "plant.w1")
        if p["k"] == 0:
            raise DomainError("plant.k must be nonzero")
        ex = self._doc["excitation"]
        if ex["kind"] not in _KINDS:
            raise DomainError(f"excitation.kind must be one of {_KINDS}, got {ex['kind']!r}")
        _positive(ex["fs"], "excitation.fs")
        _positive(ex["T"], "excitation.T")
        if int(ex["oversample"]) != ex["oversample"] or ex["oversample"] < 1:
            raise DomainError("excitation.oversample must be a positive integer")
        lw = self._doc["loewner"]
        if not 0 < lw["f_max_fraction"] <= 1:
            raise DomainError("loewner.f_max_fraction must lie in (0, 1]")
        if int(lw["undersample"]) != lw["undersample"] or lw["undersample"] < 1:
            raise DomainError("loewner.undersample must be a positive integer")
        red = self._doc["reduction"]
        if int(red["r"]) != red["r"] or red["r"] < 1:
            raise DomainError("reduction.r must be a positive integer")
        syn = self._doc["synthesis"]
        for key in ("Wu", "We"):
            if len(syn[key]) != 4:
                raise DomainError(f"synthesis.{key} must be [b1, b0, a1, a0]")
        if syn["nc"] < 1 or syn["multistarts"] < 1 or syn["max_evals"] < 1:
            raise DomainError("synthesis.nc, multistarts and max_evals must be positive")
        if syn["Wk"] < 0:
            raise DomainError("synthesis.Wk must be nonnegative")
        ts = self._doc["discretization"]["Ts"]
        if not ts:
            raise DomainError("discretization.Ts must list at least one sample time")
        for t in ts:
            _positive(t, "discretization.Ts entries")
        hy = self._doc["hybrid"]
        if int(hy["N"]) != hy["N"] or hy["N"] < 2:
            raise DomainError("hybrid.N must be an integer >= 2")
        if not hy["u_min"] < hy["u_max"]:
            raise DomainError("hybrid.u_min must be below hybrid.u_max")
        _positive(hy["Tend"], "hybrid.Tend")


def load_config(path=None):
    """Read a configuration file; ``None`` gives the defaults."""
    return PipelineConfig(None if path is None else read_json(path))
