"""Experiment configuration, dispatch and reproducible persistence.

A configuration is a UTF-8 JSON object::

    {"kind": "simulate", "seed": 3, "params": {"nu": 1.0, "dt": 0.01, ...}}

``params`` keys are validated against the schema of the kind (see
:data:`SCHEMAS` or ``torus-sns describe <kind>``); unknown keys, type
mismatches and precondition violations are each reported by name.

Runs are written to ``<root>/<kind>-<fingerprint[:12]>`` where ``root`` is the
config's ``output``, else ``$TORUS_SNS_OUTPUT``, else ``./runs``.  Files are
built in a hidden sibling directory and renamed into place, so an
interrupted run never leaves a partial result directory.  Numeric outputs
carry no timestamps: rerunning a manifest reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
import shutil
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DomainError, NumericAbort

OUTPUT_ENV = "TORUS_SNS_OUTPUT"
CONFIG_VERSION = 1

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RunManifest",
    "SCHEMAS",
    "parse_config",
    "build_config",
    "parse_override",
    "load_manifest",
    "serialize",
    "run_experiment",
    "verify_run",
    "list_experiments",
    "describe",
    "KINDS",
    "OUTPUT_ENV",
]


class ConfigError(ValueError):
    """Invalid configuration; ``diagnostics`` lists ``(key, reason)`` pairs."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(f"{k}: {r}" for k, r in self.diagnostics))


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Key:
    type: str  # int | float | bool | str | floats | ints | strs | triples | tuples4 | field
    default: object
    help: str
    check: object = None  # callable(value) -> error message or None
    choices: tuple | None = None


def _pos(v):
    return None if v > 0 else "must be positive"


def _nonneg(v):
    return None if v >= 0 else "must be non-negative"


def _atleast(n):
    return lambda v: None if v >= n else f"must be >= {n}"


def _all(check):
    def f(vs):
        for v in vs:
            msg = check(v)
            if msg:
                return f"every entry {msg}"
        return None

    return f


def _nonempty(vs):
    return None if len(vs) else "must not be empty"


FIELD_HELP = (
    "initial field: {\"kind\": \"zero\"} | {\"kind\": \"random\", \"decay\": d, \"norm\": r, \"alpha\": a} "
    "| {\"kind\": \"file\", \"path\": p}"
)

_NOISE = {
    "nu": Key("float", 1.0, "viscosity", _pos),
    "alpha0": Key("float", 0.25, "noise regularity alpha0 (sigma_k = c0 |k|^-(3/2 + 2 alpha0))", _pos),
    "c0": Key("float", 1.0, "noise amplitude", _nonneg),
    "N": Key("int", 2, "mode cutoff max |k|_inf", _atleast(1)),
}
_STEP = {
    "dt": Key("float", 0.01, "time step", _pos),
    "integrator": Key("str", "exp-euler", "time integrator", choices=("exp-euler", "exp-midpoint")),
    "bilinear": Key("str", "auto", "bilinear term evaluation", choices=("auto", "fft", "direct")),
}
_CUT = {
    "cutoff": Key("bool", True, "multiply the nonlinearity by chi_R(||u||_alpha)"),
    "alpha": Key("float", 1.2, "cut-off regularity alpha"),
    "R": Key("float", 5.0, "cut-off radius", _atleast(1)),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "simulate": {
        **_NOISE, **_STEP, **_CUT,
        "T": Key("float", 1.0, "horizon", _pos),
        "record_norms": Key("floats", [0.0, 1.0], "Sobolev indices whose norms are recorded"),
        "snapshot_every": Key("int", 0, "store fields every n steps (0: none)", _nonneg),
        "diagnostics": Key("bool", False, "also run the mild-bound, continuity and uniqueness diagnostics"),
        "diag_samples": Key("int", 200, "ensemble size of the mild-bound diagnostic", _atleast(1)),
        "x": Key("field", {"kind": "random", "decay": 2.0, "norm": 1.0, "alpha": 1.2}, FIELD_HELP),
    },
    "couple": {
        **_NOISE, **_STEP, **_CUT,
        "c0": Key("float", 4.0, _NOISE["c0"].help, _nonneg),
        "T": Key("float", 1.0, "horizon", _pos),
        "n_seeds": Key("int", 50, "number of Stokes paths (seeds seed .. seed+n-1)", _atleast(1)),
        "x_fraction": Key("float", 1 / 3, "||x||_alpha as a fraction of R", lambda v: None if 0 < v <= 1 else "must be in (0, 1]"),
        "x_decay": Key("float", 2.0, "spectral slope of the random initial field"),
    },
    "tails": {
        **_NOISE,
        "beta": Key("float", 1.0, "Sobolev index of the supremum"),
        "eps": Key("floats", [0.01, 0.005], "window lengths", _all(_pos)),
        "K_scaled": Key("floats", list(np.round(np.linspace(7.8, 9.2, 8), 3)), "levels K / sqrt(eps)", _nonempty),
        "samples": Key("int", 10000, "Monte Carlo replicas per window", _atleast(10)),
        "substeps": Key("int", 16, "grid points per window for the supremum", _atleast(1)),
        "min_exceed": Key("int", 10, "minimum exceedances for a point to enter the fit", _atleast(1)),
        "bootstrap": Key("int", 200, "bootstrap resamples for the slope interval", _nonneg),
    },
    "blowup": {
        **_NOISE,
        "alpha0": Key("float", 1.25, _NOISE["alpha0"].help, _pos),
        "c0": Key("float", 2.0, _NOISE["c0"].help, _nonneg),
        "alpha": Key("float", 1.2, "regularity of the stopping norm"),
        "R": Key("floats", [4.0, 5.0, 6.0], "cut-off radii of the inclusion check", _all(_atleast(1))),
        "tail_R": Key("floats", [1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5], "radii of the tail sweep", _all(_atleast(1))),
        "samples": Key("int", 1000, "training replicas", _atleast(10)),
        "validation_samples": Key("int", 1000, "fresh replicas for the inclusion check", _atleast(1)),
        "dt": Key("float", 0.0005, "time step", _pos),
        "T_max": Key("float", 0.04, "horizon", _pos),
        "T_grid": Key("floats", [0.005, 0.01, 0.015, 0.02, 0.03, 0.04], "horizons of the tail sweep", _all(_pos)),
        "safety": Key("float", 0.5, "factor applied to the fitted c'", lambda v: None if 0 < v <= 1 else "must be in (0, 1]"),
        "eps": Key("float", 0.1, "regularity margin used when alpha = 3/2", lambda v: None if 0 < v < 1 else "must be in (0, 1)"),
        "min_exceed": Key("int", 10, "minimum hits for a tail point to enter the fit", _atleast(1)),
        "max_p": Key("float", 0.5, "largest probability counted as tail in the fit", lambda v: None if 0 < v <= 1 else "must be in (0, 1]"),
        "x": Key("field", {"kind": "zero"}, FIELD_HELP),
    },
    "inequalities": {
        "triples": Key("triples", [[1, 1, -0.5], [1, 1, 0], [2, 2, -2], [1, 0.5, 0], [0.75, 0.75, 0], [0, 0, 0]],
                       "(a, b, c) exponents of the bilinear inequality", _nonempty),
        "N_values": Key("ints", [2, 4, 6, 8], "mode cutoffs of the sweep", _all(_atleast(1))),
        "trials": Key("int", 16, "random starts per (triple, N)", _atleast(1)),
        "iters": Key("int", 15, "ascent sweeps per start", _nonneg),
        "ball_sum_alphas": Key("floats", [0.0, -2.0, -3.0, -4.0], "exponents for the lattice ball sum"),
        "ball_sum_k0": Key("floats", [1, 2, 4, 8, 16, 32, 64], "radii for the lattice ball sum", _all(_atleast(1))),
        "shell_sum_params": Key("triples", [[1, 1, 0], [0.5, 1, 0], [1, 2, 0]], "(alpha, beta, gamma) for the shell sum"),
        "shell_sum_l": Key("ints", [2, 3, 4, 6, 8, 12, 16, 24, 32], "magnitudes |l| of the sweep", _all(_atleast(2))),
        "weight_tuples": Key("int", 20, "random (x, y, delta, eta) tuples", _atleast(1)),
        "cutoff_ratio_points": Key("int", 1000, "grid size for the cut-off regularity ratio", _atleast(2)),
    },
    "feller": {
        **_NOISE, **_STEP, **_CUT,
        "dt": Key("float", 0.05, _STEP["dt"].help, _pos),
        "functional": Key("str", "coord:k=1,0,0:e=0,1,0:squash=tanh:scale=1", "bounded test functional"),
        "h_norms": Key("floats", [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625], "||h||_alpha values (decreasing)",
                       _all(lambda v: None if 0 < v < 1 else "must be in (0, 1)")),
        "times": Key("floats", [0.25, 1.0], "evaluation times", _all(_pos)),
        "samples": Key("int", 10000, "replicas", _atleast(2)),
        "x": Key("field", {"kind": "random", "decay": 2.0, "norm": 1.0, "alpha": 1.2}, FIELD_HELP),
        "h": Key("field", {"kind": "random", "decay": 2.0, "norm": 1.0, "alpha": 1.2}, FIELD_HELP),
    },
    "bel": {
        **_NOISE, **_STEP, **_CUT,
        "functionals": Key("strs", ["coord:k=1,0,0:e=0,1,0:squash=tanh:scale=1",
                                    "coord:k=1,1,0:e=0,0,1:squash=tanh:scale=0.5",
                                    "smooth_norm:alpha=1:scale=3"], "bounded test functionals", _nonempty),
        "t": Key("float", 0.5, "evaluation time", _pos),
        "samples": Key("int", 10000, "replicas", _atleast(2)),
        "fd_eps": Key("float", 1e-3, "central-difference step (0: skip)", _nonneg),
        "weight": Key("str", "ito", "stochastic weight", choices=("ito", "discrete")),
        "nonlinear": Key("bool", True, "include the bilinear term"),
        "x": Key("field", {"kind": "random", "decay": 1.0, "norm": 5 / 3, "alpha": 1.2}, FIELD_HELP),
        "h": Key("field", {"kind": "random", "decay": 1.0, "norm": 1.0, "alpha": 1.2}, FIELD_HELP),
    },
}
KINDS = tuple(SCHEMAS)
TOP_KEYS = {"kind", "seed", "output", "params", "version"}


def _coerce(key: str, spec: Key, value):
    """Return ``(value, error)`` after type checking / light coercion."""
    t = spec.type
    num = (int, float)
    if t == "int":
        if isinstance(value, bool) or not isinstance(value, num) or float(value) != int(value):
            return None, f"expected an integer, got {value!r}"
        return int(value), None
    if t == "float":
        if isinstance(value, bool) or not isinstance(value, num) or not math.isfinite(value):
            return None, f"expected a number, got {value!r}"
        return float(value), None
    if t == "bool":
        if not isinstance(value, bool):
            return None, f"expected true/false, got {value!r}"
        return value, None
    if t == "str":
        if not isinstance(value, str):
            return None, f"expected a string, got {value!r}"
        return value, None
    if t in ("floats", "ints", "strs", "triples"):
        if not isinstance(value, list):
            return None, f"expected a list, got {value!r}"
        out = []
        for v in value:
            if t == "strs":
                if not isinstance(v, str):
                    return None, f"expected strings, got {v!r}"
                out.append(v)
            elif t == "triples":
                if not (isinstance(v, list) and len(v) == 3 and all(isinstance(q, num) and not isinstance(q, bool) for q in v)):
                    return None, f"expected [a, b, c] number triples, got {v!r}"
                out.append([float(q) for q in v])
            else:
                sub = Key("int" if t == "ints" else "float", None, "")
                c, err = _coerce(key, sub, v)
                if err:
                    return None, err
                out.append(c)
        return out, None
    if t == "field":
        if not isinstance(value, dict) or value.get("kind") not in ("zero", "random", "file"):
            return None, "expected an object with kind zero | random | file"
        allowed = {"zero": {"kind"}, "random": {"kind", "decay", "norm", "alpha", "stream"}, "file": {"kind", "path"}}
        extra = set(value) - allowed[value["kind"]]
        if extra:
            return None, f"unknown field options {sorted(extra)}"
        return dict(value), None
    raise AssertionError(t)


def _preconditions(kind: str, p: dict) -> list:
    """Cross-key checks that mirror the operations' preconditions."""
    diags = []
    window = (0.5, 1.0 + 2.0 * p.get("alpha0", 0.0))
    if kind in ("simulate", "couple", "feller", "bel") and p.get("cutoff", False):
        if not window[0] < p["alpha"] < window[1]:
            diags.append(("alpha", f"alpha={p['alpha']} outside (1/2, 1 + 2 alpha0) = ({window[0]}, {window[1]})"))
    if kind == "blowup" and not window[0] < p["alpha"] < window[1]:
        diags.append(("alpha", f"alpha={p['alpha']} outside (1/2, 1 + 2 alpha0) = ({window[0]}, {window[1]})"))
    if "dt" in p and "T" in p:
        n = p["T"] / p["dt"]
        if p["dt"] >= p["T"]:
            diags.append(("dt", "need dt < T"))
        elif abs(n - round(n)) > 1e-9 * n:
            diags.append(("T", "T must be a whole number of steps"))
    if kind == "blowup":
        if p["alpha"] == 1.5 and "eps" not in p:
            diags.append(("eps", "alpha = 3/2 needs eps"))
        for T in p["T_grid"]:
            if T > p["T_max"]:
                diags.append(("T_grid", f"{T} exceeds T_max"))
        n = p["T_max"] / p["dt"]
        if abs(n - round(n)) > 1e-9 * n:
            diags.append(("T_max", "T_max must be a whole number of steps"))
    if kind == "tails":
        if p["beta"] >= 1 + 2 * p["alpha0"]:
            pass  # allowed: flagged in the output, not rejected
        if p["c0"] == 0:
            diags.append(("c0", "tails need c0 > 0"))
    if kind == "bel" and p["c0"] == 0:
        diags.append(("c0", "the gradient formula needs c0 > 0 (invertible covariance)"))
    if kind == "feller":
        hs = p["h_norms"]
        if any(b >= a for a, b in zip(hs, hs[1:])):
            diags.append(("h_norms", "must be strictly decreasing"))
    if kind in ("feller", "bel"):
        times = p["times"] if kind == "feller" else [p["t"]]
        for t in times:
            n = t / p["dt"]
            if abs(n - round(n)) > 1e-9 * max(n, 1):
                diags.append(("times" if kind == "feller" else "t", f"{t} is not a whole number of steps"))
    if kind == "couple" and not p.get("cutoff", True):
        diags.append(("cutoff", "coupling compares the cut-off system with the free one; cutoff must be on"))
    return diags


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    seed: int = 0
    output: str | None = None

    def canonical(self) -> dict:
        doc = {"version": CONFIG_VERSION, "kind": self.kind, "seed": self.seed, "params": self.params}
        if self.output is not None:
            doc["output"] = self.output
        return doc

    def fingerprint(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def serialize(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.canonical(), sort_keys=True, indent=2) + "\n"


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a JSON configuration (plus optional ``key -> value`` overrides)."""
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError([("<document>", f"not valid JSON: {exc}")]) from None
    if not isinstance(doc, dict):
        raise ConfigError([("<document>", "top level must be an object")])
    return build_config(doc, overrides)


def build_config(doc: dict, overrides: dict | None = None) -> ExperimentConfig:
    diags = []
    doc = dict(doc)
    for k in sorted(set(doc) - TOP_KEYS):
        diags.append((k, "unknown key"))
    kind = doc.get("kind")
    if kind not in SCHEMAS:
        raise ConfigError(diags + [("kind", f"must be one of {', '.join(KINDS)}, got {kind!r}")])
    if doc.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        diags.append(("version", f"unsupported config version {doc.get('version')!r}"))
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        diags.append(("seed", f"expected a non-negative integer, got {seed!r}"))
        seed = 0
    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        diags.append(("output", "expected a path string"))
        output = None
    raw = doc.get("params", {})
    if not isinstance(raw, dict):
        raise ConfigError(diags + [("params", "expected an object")])
    raw = dict(raw)
    overrides = dict(overrides or {})
    for top in ("seed", "output"):
        if top in overrides:
            val = overrides.pop(top)
            if top == "seed":
                if isinstance(val, bool) or not isinstance(val, int) or val < 0:
                    diags.append(("seed", f"expected a non-negative integer, got {val!r}"))
                else:
                    seed = val
            else:
                output = str(val)
    raw.update(overrides)
    schema = SCHEMAS[kind]
    params = {}
    for k in sorted(raw):
        if k not in schema:
            diags.append((k, "unknown key"))
    for k, spec in schema.items():
        value = raw.get(k, spec.default)
        v, err = _coerce(k, spec, value)
        if err:
            diags.append((k, err))
            continue
        if spec.choices and v not in spec.choices:
            diags.append((k, f"must be one of {', '.join(spec.choices)}"))
            continue
        if spec.check is not None:
            msg = spec.check(v)
            if msg:
                diags.append((k, msg))
                continue
        params[k] = v
    if not diags:
        diags += _preconditions(kind, params)
    if diags:
        raise ConfigError(diags)
    return ExperimentConfig(kind, params, seed, output)


def parse_override(kind: str, key: str, text: str):
    """Parse a command-line ``--key value`` according to the schema type."""
    key = key.replace("-", "_")
    if key == "seed":
        try:
            return key, int(text)
        except ValueError:
            raise ConfigError([("seed", f"expected an integer, got {text!r}")]) from None
    if key == "output":
        return key, text
    spec = SCHEMAS[kind].get(key)
    if spec is None:
        raise ConfigError([(key, "unknown key")])
    t = spec.type
    try:
        if t == "bool":
            low = text.lower()
            if low in ("on", "true", "yes", "1"):
                return key, True
            if low in ("off", "false", "no", "0"):
                return key, False
            raise ValueError
        if t == "int":
            return key, int(text)
        if t == "float":
            return key, float(text)
        if t == "str":
            return key, text
        if t == "floats":
            return key, [float(v) for v in text.split(",") if v]
        if t == "ints":
            return key, [int(v) for v in text.split(",") if v]
        if t == "strs":
            return key, [v for v in text.split(";") if v]
        return key, json.loads(text)
    except (ValueError, json.JSONDecodeError):
        raise ConfigError([(key, f"cannot parse {text!r} as {t}")]) from None


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

REGISTRY = {
    "simulate": (
        "Integrate the free or cut-off Galerkin system along one Stokes path and record norms and the energy ledger.",
        [
            "noise covariance decay sigma_k = c0 |k|^-(3/2 + 2 alpha0)",
            "abstract stochastic Navier-Stokes equation (free Galerkin system)",
            "cylindrical Wiener process expansion",
            "Stokes (Ornstein-Uhlenbeck) equation for z",
            "pathwise equation for v = u - z",
            "cut-off system with chi_R(||u||_alpha)",
            "pathwise cut-off equation for v",
            "energy functional E_t(v, z)",
            "energy balance of the cut-off system",
            "smooth cut-off chi and its regularity",
            "stopping time tau = first time ||u||_alpha >= R",
            "mild-solution bounds (diagnostic)",
            "semigroup smoothing of e^{-nu A t}",
            "continuity in the initial condition",
            "uniqueness of the cut-off system",
            "noise assumptions (n1) boundedness and (n2) invertibility",
        ],
    ),
    "couple": (
        "Run the cut-off and free systems on common Stokes paths and compare them before and after tau.",
        ["weak-strong uniqueness (cut-off and free solutions agree up to tau)", "stopping time tau"],
    ),
    "tails": (
        "Monte Carlo tail of sup_{s <= eps} ||z(s)||_beta with Wilson intervals and a log-tail fit against K^2/eps.",
        ["Gaussian tail bound for the supremum of the Stokes process"],
    ),
    "blowup": (
        "Blow-up time probe: inclusion of the event sup ||z||_alpha <= R/3 in {tau >= T} for T = c' R^-gamma, "
        "and the tail of P[tau <= T] against R^2/T.",
        ["blow-up time estimate (early exit probability of the cut-off solution)", "stopping time tau"],
    ),
    "inequalities": (
        "Deterministic checks: the trilinear estimate of B with its admissibility rule and the smoothing exponent it implies, "
        "the lattice ball and shell sums, the weight function convolution bound and the cut-off regularity ratio.",
        [
            "trilinear estimate <B(u,v),w> <= c ||u||_a ||v||_b ||w||_{c+1}",
            "smoothing exponent delta of B implied by the trilinear estimate",
            "lattice ball sum bound",
            "lattice shell sum bound",
            "weight function convolution bound (Beta/Gamma)",
            "cut-off regularity |chi(x)-chi(y)|(1+x)(1+y) <= c|x-y|",
        ],
    ),
    "feller": (
        "Strong-Feller modulus: |P_t phi(x+h) - P_t phi(x)| against ||h|| log(e/||h||) with common random numbers.",
        ["log-Lipschitz strong Feller estimate", "transition semigroup E phi(u_x(t))"],
    ),
    "bel": (
        "Bismut-Elworthy-Li gradient formula for the cut-off semigroup, checked against central differences "
        "on common noise paths.",
        [
            "Bismut-Elworthy-Li gradient formula",
            "tangent (derivative) flow equation",
            "weight bound via ||Q^{-1/2} D_h u||",
            "tangent bounds in V_alpha (diagnostic)",
        ],
    ),
}


def list_experiments() -> str:
    lines = []
    for kind in KINDS:
        summary, _ = REGISTRY[kind]
        lines.append(f"{kind:13s} {summary}")
    return "\n".join(lines)


def describe(kind: str) -> str:
    if kind not in REGISTRY:
        raise KeyError(f"unknown experiment kind {kind!r}; choose from {', '.join(KINDS)}")
    summary, results = REGISTRY[kind]
    out = [f"{kind}: {summary}", "", "Exercises:"]
    out += [f"  - {r}" for r in results]
    out += ["", "Parameters:"]
    for k, spec in SCHEMAS[kind].items():
        extra = f" (one of {', '.join(spec.choices)})" if spec.choices else ""
        out.append(f"  {k:20s} {spec.type:8s} default={json.dumps(spec.default)}  {spec.help}{extra}")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    fingerprint: str
    seed: int
    kind: str
    version: str
    started: str
    finished: str
    status: str  # ok | numeric-abort
    directory: str
    outputs: dict  # file name -> sha256
    config: dict
    message: str = ""
    checks: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "fingerprint": self.fingerprint, "seed": self.seed, "kind": self.kind,
            "tool_version": self.version, "started": self.started, "finished": self.finished,
            "status": self.status, "outputs": self.outputs, "config": self.config,
            "message": self.message, "checks": self.checks,
        }


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o)}")


def _clean(o):
    """Replace non-finite floats (JSON has no inf/nan) by strings."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return o


class _Writer:
    def __init__(self, path: Path):
        self.path = path
        self.files = []

    def json(self, name: str, obj) -> None:
        with open(self.path / name, "w", encoding="utf-8") as fh:
            json.dump(_clean(obj), fh, sort_keys=True, indent=2, default=_json_default)
            fh.write("\n")
        self.files.append(name)

    def csv(self, name: str, rows: list, columns: list | None = None) -> None:
        columns = columns or (list(rows[0]) if rows else [])
        with open(self.path / name, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(columns)
            for r in rows:
                wr.writerow([_fmt(r[c]) for c in columns])
        self.files.append(name)

    def add(self, name: str) -> None:
        self.files.append(name)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def output_root(cfg: ExperimentConfig, root=None) -> Path:
    if root is not None:
        return Path(root)
    if cfg.output is not None:
        return Path(cfg.output)
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def run_experiment(cfg: ExperimentConfig, root=None) -> RunManifest:
    """Run ``cfg`` and persist its outputs and manifest atomically."""
    from . import experiments

    base = output_root(cfg, root)
    fp = cfg.fingerprint()
    final = base / f"{cfg.kind}-{fp[:12]}"
    try:
        base.mkdir(parents=True, exist_ok=True)
        tmp = base / f".partial-{uuid.uuid4().hex}"
        tmp.mkdir()
    except OSError as exc:
        raise OSError(f"cannot create output directory under {base}: {exc}") from exc
    started = _now()
    writer = _Writer(tmp)
    status, message, checks = "ok", "", {}
    try:
        checks = experiments.RUNNERS[cfg.kind](cfg, writer) or {}
    except NumericAbort as exc:
        status, message = "numeric-abort", str(exc)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    try:
        outputs = {name: _sha256(tmp / name) for name in sorted(writer.files)}
        with open(tmp / "config.json", "w", encoding="utf-8") as fh:
            fh.write(serialize(cfg))
        manifest = RunManifest(fp, cfg.seed, cfg.kind, __version__, started, _now(), status, str(final),
                               outputs, cfg.canonical(), message, _clean(checks))
        with open(tmp / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest.as_dict(), fh, sort_keys=True, indent=2, default=_json_default)
            fh.write("\n")
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except OSError as exc:
        shutil.rmtree(tmp, ignore_errors=True)
        raise OSError(f"failed writing results to {final}: {exc}") from exc
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def verify_run(path, root=None) -> tuple[bool, dict]:
    """Rerun a manifest's configuration and compare output digests file by file."""
    man = load_manifest(path)
    cfg = build_config(man["config"])
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        new = run_experiment(cfg, root=root or tmp)
    diff = {name: (digest, new.outputs.get(name)) for name, digest in man["outputs"].items()
            if new.outputs.get(name) != digest}
    return (not diff and set(new.outputs) == set(man["outputs"])), diff
