"""Scenario files: JSON description of a network, its disturbances and run settings.

Layout::

    {
      "name": "...",
      "network": {"nodes": ["Area 1", ...],
                  "edges": [{"from": 0, "to": 1, "susceptance": 100.0}, ...]},
      "areas": [{"D": .., "R": .., "alpha": .., "beta": .., "Tg": .., "Tl": .., "M": ..,
                 "gamma_lambda": .., "gamma_g": .., "gamma_l": ..,
                 "pg_limits": [lo, hi], "pl_limits": [lo, hi],
                 "initial_pg_actual": .., "initial_pl_actual": ..}, ...],
      "disturbances": [{"t": 10.0, "node": 0, "delta_mw": 90.0}, ...],
      "integrator": {"h": 0.001, "horizon": 60.0, "sample": 0.01},
      "mode": "measured", "formulation": "physical",
      "omega_dot_estimator": "exact", "track_mu": false,
      "allow_boundary_limits": false,
      "reference": {"pg_actual": [...], "pl_actual": [...], "tolerance_mw": 0.5}
    }

``pg_limits``/``pl_limits`` are deviations from the scheduled point. As an
alternative ``pg_limits_actual``/``pl_limits_actual`` give absolute MW, which
are shifted by the initial values on load. ``gamma_g``/``gamma_l`` default to
``1/Tg``/``1/Tl`` and ``gamma_lambda`` to 1.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..netmodel import AreaParams, ModelError, NetworkModel

log = logging.getLogger(__name__)

MODES = ("ideal", "measured", "unsaturated")
FORMULATIONS = ("physical", "projected", "both")
ESTIMATORS = ("exact", "backward")

AREA_FIELDS = ("D", "R", "alpha", "beta", "Tg", "Tl", "M", "gamma_lambda", "gamma_g",
               "gamma_l", "pg_limits", "pl_limits", "pg_limits_actual", "pl_limits_actual",
               "initial_pg_actual", "initial_pl_actual")
REQUIRED_AREA_FIELDS = ("D", "R", "alpha", "beta", "Tg", "Tl", "M")
TOP_FIELDS = ("name", "network", "areas", "disturbances", "integrator", "mode", "formulation",
              "omega_dot_estimator", "track_mu", "allow_boundary_limits", "reference")
INTEGRATOR_FIELDS = ("h", "horizon", "sample")


class ScenarioError(ValueError):
    """Schema violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Disturbance:
    t: float
    node: int
    delta_mw: float


@dataclass(frozen=True)
class Reference:
    pg_actual: tuple
    pl_actual: tuple
    tolerance_mw: float = 0.5


@dataclass
class Scenario:
    network: NetworkModel
    disturbances: list[Disturbance] = field(default_factory=list)
    initial_pg_actual: np.ndarray | None = None
    initial_pl_actual: np.ndarray | None = None
    h: float = 1e-3
    horizon: float = 60.0
    sample: float = 1e-2
    mode: str = "measured"
    formulation: str = "physical"
    omega_dot_estimator: str = "exact"
    track_mu: bool = False
    allow_boundary_limits: bool = False
    reference: Reference | None = None
    name: str = "scenario"

    def __post_init__(self):
        n = self.network.node_count
        if self.initial_pg_actual is None:
            self.initial_pg_actual = np.zeros(n)
        if self.initial_pl_actual is None:
            self.initial_pl_actual = np.zeros(n)
        self.initial_pg_actual = np.asarray(self.initial_pg_actual, dtype=float)
        self.initial_pl_actual = np.asarray(self.initial_pl_actual, dtype=float)
        self.validate()

    def validate(self):
        if not self.h > 0:
            raise ScenarioError("integrator.h", "must be > 0")
        if not self.sample >= self.h * (1 - 1e-12):
            raise ScenarioError("integrator.sample", "must be >= h")
        last = max((d.t for d in self.disturbances), default=0.0)
        if not self.horizon >= last:
            raise ScenarioError("integrator.horizon", "must be >= the last disturbance time")
        if self.mode not in MODES:
            raise ScenarioError("mode", f"must be one of {MODES}")
        if self.formulation not in FORMULATIONS:
            raise ScenarioError("formulation", f"must be one of {FORMULATIONS}")
        if self.omega_dot_estimator not in ESTIMATORS:
            raise ScenarioError("omega_dot_estimator", f"must be one of {ESTIMATORS}")
        for k, d in enumerate(self.disturbances):
            if not 0 <= d.node < self.network.node_count:
                raise ScenarioError(f"disturbances[{k}].node", "unknown node")
            if d.t < 0:
                raise ScenarioError(f"disturbances[{k}].t", "must be >= 0")
        if self.formulation in ("projected", "both"):
            if not self.network.prescribed_gains:
                raise ModelError("projected formulation requires gamma_g = 1/Tg and gamma_l = 1/Tl")
            if self.mode == "unsaturated":
                raise ScenarioError("formulation", "projected form is inherently saturated")

    # derived quantities ----------------------------------------------------

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.h))

    @property
    def sample_every(self) -> int:
        return max(1, int(round(self.sample / self.h)))

    def step_index(self, t: float) -> int:
        """Grid index a disturbance time snaps to."""
        return int(round(t / self.h))

    def disturbance_at_step(self, k: int) -> np.ndarray:
        """Zero-order-hold disturbance vector in force during step k -> k+1."""
        p = np.zeros(self.network.node_count)
        for d in self.disturbances:
            if self.step_index(d.t) <= k:
                p[d.node] += d.delta_mw
        return p

    def final_disturbance(self) -> np.ndarray:
        return self.disturbance_at_step(self.steps)

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)

    @property
    def saturated(self) -> bool:
        return self.mode != "unsaturated"


# parsing -------------------------------------------------------------------

def _num(value, path, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    v = float(value)
    if not np.isfinite(v):
        raise ScenarioError(path, "must be finite")
    if positive and v <= 0:
        raise ScenarioError(path, "must be > 0")
    return v


def _pair(value, path):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ScenarioError(path, "expected [lower, upper]")
    return _num(value[0], f"{path}[0]"), _num(value[1], f"{path}[1]")


def _get(d, key, path):
    if key not in d:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return d[key]


def scenario_from_dict(data: dict) -> Scenario:
    """Build a Scenario; schema problems raise ScenarioError, model problems ModelError."""
    if not isinstance(data, dict):
        raise ScenarioError("<root>", "expected an object")
    for key in data:
        if key not in TOP_FIELDS:
            raise ScenarioError(key, "unknown field")
    allow_boundary = data.get("allow_boundary_limits", False)
    if not isinstance(allow_boundary, bool):
        raise ScenarioError("allow_boundary_limits", "expected true/false")

    network = _get(data, "network", "")
    if not isinstance(network, dict):
        raise ScenarioError("network", "expected an object")
    areas_raw = _get(data, "areas", "")
    if not isinstance(areas_raw, list) or not areas_raw:
        raise ScenarioError("areas", "expected a non-empty list")
    names = network.get("nodes")
    if names is not None and (not isinstance(names, list) or len(names) != len(areas_raw)):
        raise ScenarioError("network.nodes", "must list one name per area")

    areas, pg0, pl0 = [], [], []
    for j, a in enumerate(areas_raw):
        path = f"areas[{j}]"
        if not isinstance(a, dict):
            raise ScenarioError(path, "expected an object")
        for key in a:
            if key not in AREA_FIELDS:
                raise ScenarioError(f"{path}.{key}", "unknown field")
        kw = {k: _num(_get(a, k, path), f"{path}.{k}") for k in REQUIRED_AREA_FIELDS}
        for k in ("gamma_lambda", "gamma_g", "gamma_l"):
            if k in a:
                kw[k] = _num(a[k], f"{path}.{k}")
        g0 = _num(a.get("initial_pg_actual", 0.0), f"{path}.initial_pg_actual")
        l0 = _num(a.get("initial_pl_actual", 0.0), f"{path}.initial_pl_actual")
        for kind, base in (("pg", g0), ("pl", l0)):
            if f"{kind}_limits" in a and f"{kind}_limits_actual" in a:
                raise ScenarioError(f"{path}.{kind}_limits", "give either deviation or actual limits")
            if f"{kind}_limits" in a:
                lo, hi = _pair(a[f"{kind}_limits"], f"{path}.{kind}_limits")
            elif f"{kind}_limits_actual" in a:
                lo, hi = _pair(a[f"{kind}_limits_actual"], f"{path}.{kind}_limits_actual")
                lo, hi = lo - base, hi - base
            else:
                raise ScenarioError(f"{path}.{kind}_limits", "missing required field")
            kw[f"{kind}_min"], kw[f"{kind}_max"] = lo, hi
        try:
            areas.append(AreaParams(**kw, allow_boundary_limits=allow_boundary))
        except ModelError as exc:
            raise ModelError(f"{path}: {exc}") from None
        pg0.append(g0)
        pl0.append(l0)

    edges_raw = _get(network, "edges", "network")
    if not isinstance(edges_raw, list):
        raise ScenarioError("network.edges", "expected a list")
    edges, sus = [], []
    for e, ed in enumerate(edges_raw):
        path = f"network.edges[{e}]"
        if not isinstance(ed, dict):
            raise ScenarioError(path, "expected an object")
        i, k = _get(ed, "from", path), _get(ed, "to", path)
        if not isinstance(i, int) or not isinstance(k, int) or isinstance(i, bool):
            raise ScenarioError(path, "from/to must be integer node indices")
        edges.append((i, k))
        sus.append(_num(_get(ed, "susceptance", path), f"{path}.susceptance"))
    net = NetworkModel(edges, sus, areas, names)

    dist = []
    for k, d in enumerate(data.get("disturbances", [])):
        path = f"disturbances[{k}]"
        if not isinstance(d, dict):
            raise ScenarioError(path, "expected an object")
        node = _get(d, "node", path)
        if not isinstance(node, int) or isinstance(node, bool):
            raise ScenarioError(f"{path}.node", "expected an integer")
        dist.append(Disturbance(_num(_get(d, "t", path), f"{path}.t"), node,
                                _num(_get(d, "delta_mw", path), f"{path}.delta_mw")))

    integ = data.get("integrator", {})
    if not isinstance(integ, dict):
        raise ScenarioError("integrator", "expected an object")
    for key in integ:
        if key not in INTEGRATOR_FIELDS:
            raise ScenarioError(f"integrator.{key}", "unknown field")
    kw = {k: _num(integ[k], f"integrator.{k}", positive=True) for k in INTEGRATOR_FIELDS if k in integ}

    for key, choices in (("mode", MODES), ("formulation", FORMULATIONS),
                         ("omega_dot_estimator", ESTIMATORS)):
        if key in data:
            if data[key] not in choices:
                raise ScenarioError(key, f"must be one of {choices}")
            kw[key] = data[key]
    if "track_mu" in data:
        if not isinstance(data["track_mu"], bool):
            raise ScenarioError("track_mu", "expected true/false")
        kw["track_mu"] = data["track_mu"]

    ref = None
    if "reference" in data:
        r = data["reference"]
        if not isinstance(r, dict):
            raise ScenarioError("reference", "expected an object")
        n = len(areas)
        vals = {}
        for key in ("pg_actual", "pl_actual"):
            v = _get(r, key, "reference")
            if not isinstance(v, list) or len(v) != n:
                raise ScenarioError(f"reference.{key}", f"expected {n} numbers")
            vals[key] = tuple(_num(x, f"reference.{key}[{i}]") for i, x in enumerate(v))
        tol = _num(r.get("tolerance_mw", 0.5), "reference.tolerance_mw", positive=True)
        ref = Reference(vals["pg_actual"], vals["pl_actual"], tol)

    return Scenario(network=net, disturbances=dist, initial_pg_actual=np.array(pg0),
                    initial_pl_actual=np.array(pl0), allow_boundary_limits=allow_boundary,
                    reference=ref, name=str(data.get("name", "scenario")), **kw)


def scenario_to_dict(sc: Scenario) -> dict:
    """Inverse of scenario_from_dict; limits are written in deviation form."""
    net = sc.network
    areas = []
    for j, a in enumerate(net.areas):
        areas.append({
            "D": a.D, "R": a.R, "alpha": a.alpha, "beta": a.beta, "Tg": a.Tg, "Tl": a.Tl,
            "M": a.M, "gamma_lambda": a.gamma_lambda, "gamma_g": a.gamma_g,
            "gamma_l": a.gamma_l, "pg_limits": [a.pg_min, a.pg_max],
            "pl_limits": [a.pl_min, a.pl_max],
            "initial_pg_actual": float(sc.initial_pg_actual[j]),
            "initial_pl_actual": float(sc.initial_pl_actual[j]),
        })
    out = {
        "name": sc.name,
        "network": {"nodes": list(net.names),
                    "edges": [{"from": i, "to": k, "susceptance": float(b)}
                              for (i, k), b in zip(net.edges, net.B)]},
        "areas": areas,
        "disturbances": [{"t": d.t, "node": d.node, "delta_mw": d.delta_mw}
                         for d in sc.disturbances],
        "integrator": {"h": sc.h, "horizon": sc.horizon, "sample": sc.sample},
        "mode": sc.mode,
        "formulation": sc.formulation,
        "omega_dot_estimator": sc.omega_dot_estimator,
        "track_mu": sc.track_mu,
        "allow_boundary_limits": sc.allow_boundary_limits,
    }
    if sc.reference is not None:
        out["reference"] = {"pg_actual": list(sc.reference.pg_actual),
                            "pl_actual": list(sc.reference.pl_actual),
                            "tolerance_mw": sc.reference.tolerance_mw}
    return out


def _set_or_drop(target: dict, key: str, value):
    if value is None:
        target.pop(key, None)
    else:
        target[key] = value


def apply_overrides(data: dict, overrides: dict) -> dict:
    """Apply dotted-path overrides (``integrator.h``, ``areas.*.gamma_g``, ``areas.2.M``).

    A ``None`` value removes the field so its default applies. The shortcut key
    ``gains`` sets every area's controller gains: ``"prescribed"`` restores
    ``1/Tg``, ``1/Tl``; a number ``c`` sets ``c/Tg``, ``c/Tl``.
    """
    data = copy.deepcopy(data)
    for key, value in overrides.items():
        parts = key.split(".")
        if key == "gains":
            if value == "prescribed":
                value = 1.0
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise ScenarioError("gains", "expected 'prescribed' or a positive multiplier")
            for j, a in enumerate(data.get("areas", [])):
                if value == 1.0:
                    a.pop("gamma_g", None)
                    a.pop("gamma_l", None)
                else:
                    a["gamma_g"] = value / _num(_get(a, "Tg", f"areas[{j}]"), f"areas[{j}].Tg")
                    a["gamma_l"] = value / _num(_get(a, "Tl", f"areas[{j}]"), f"areas[{j}].Tl")
        elif parts[0] == "integrator" and len(parts) == 2 and parts[1] in INTEGRATOR_FIELDS:
            _set_or_drop(data.setdefault("integrator", {}), parts[1], value)
        elif parts[0] == "areas" and len(parts) == 3 and parts[2] in AREA_FIELDS:
            areas = data.get("areas", [])
            if parts[1] == "*":
                targets = areas
            else:
                try:
                    targets = [areas[int(parts[1])]]
                except (ValueError, IndexError):
                    raise ScenarioError(key, "no such area") from None
            for a in targets:
                _set_or_drop(a, parts[2], value)
        elif len(parts) == 1 and parts[0] in TOP_FIELDS and parts[0] not in (
                "network", "areas", "disturbances", "integrator", "reference"):
            _set_or_drop(data, parts[0], value)
        else:
            raise ScenarioError(key, "override does not name a schema field")
    return data


def parse_override_value(text: str):
    """Interpret an override value as JSON when possible, else as a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_scenario_dict(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError("<root>", f"invalid JSON: {exc}") from None


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    data = read_scenario_dict(path)
    if overrides:
        data = apply_overrides(data, overrides)
    sc = scenario_from_dict(data)
    if sc.allow_boundary_limits:
        touching = [j for j, a in enumerate(sc.network.areas)
                    if 0.0 in (a.pg_min, a.pg_max, a.pl_min, a.pl_max)]
        if touching:
            log.warning("areas %s start on a capacity limit (A1.1 relaxed by allow_boundary_limits)",
                        touching)
    return sc


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n", encoding="utf-8")


BUNDLED_DIR = Path(__file__).resolve().parent.parent / "scenarios"


def bundled_scenarios() -> list[str]:
    return sorted(p.name for p in BUNDLED_DIR.glob("*.scenario"))


def resolve_scenario_path(path) -> Path:
    """Return ``path`` if it exists, else the bundled scenario of that file name."""
    p = Path(path)
    if p.exists():
        return p
    candidate = BUNDLED_DIR / p.name
    if p.parent == Path(".") and candidate.exists():
        return candidate
    raise FileNotFoundError(f"scenario file not found: {path}")
