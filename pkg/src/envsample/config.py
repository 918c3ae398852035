"""Model configuration files (YAML) and their translation into event tables.

A configuration names a state space, a list of events and sampler options::

    schema_version: 1
    name: mm1
    params: {lam: 1/2}
    queues:
      - {capacity: 3, mu: 1, lam: $lam}
    events:
      - {kind: jackson}
    sampler: {algorithm: epsa}

Numbers are integers, ``"p/q"`` strings or decimals (read exactly).  A
string ``$name`` is replaced by ``params[name]``, which is how sweeps vary
a parameter.  Queue indices are 1-based, 0 being the outside.  Unknown
fields are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

from . import queueing as q
from .ashe import Ashe
from .automaton import EventTable, ModelError, StateSpace
from .sampler import ALGORITHMS, DEFAULT_CAP, DEFAULT_STATE_CAP
from .zones import MODES, Hyperplane, PiecewiseEvent, Zone

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration, with the file, line and field that caused it."""


class _Map(dict):
    lines: dict

    def __init__(self, *args):
        super().__init__(*args)
        self.lines = {}


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    out = _Map()
    out.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ConfigError(f"line {key_node.start_mark.line + 1}: duplicate field {key!r}")
        out[key] = loader.construct_object(value_node, deep=True)
        out.lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


@dataclass
class SamplerOptions:
    algorithm: str = "epsa"
    mode: str = "lp"
    threshold: int | None = None
    cap: int = DEFAULT_CAP
    state_cap: int = DEFAULT_STATE_CAP
    minimal: bool = True


@dataclass
class Model:
    name: str
    table: EventTable
    sampler: SamplerOptions
    params: dict[str, Fraction] = field(default_factory=dict)
    sweep: tuple[str, list[Fraction]] | None = None
    metrics: list[str] = field(default_factory=list)
    source: str = ""


class _Ctx:
    """Field path plus line number for error messages."""

    def __init__(self, source: str, path: str = "", line: int | None = None):
        self.source, self.path, self.line = source, path, line

    def child(self, key, container=None) -> _Ctx:
        path = f"{self.path}.{key}" if isinstance(key, str) else f"{self.path}[{key}]"
        line = self.line
        if isinstance(container, _Map):
            line = container.lines.get(key, getattr(container, "line", line))
        return _Ctx(self.source, path.lstrip("."), line)

    def error(self, msg: str) -> ConfigError:
        where = self.source + (f":{self.line}" if self.line else "")
        return ConfigError(f"{where}: field '{self.path or '<root>'}': {msg}")


def _mapping(obj, ctx: _Ctx, allowed: set[str], required: set[str] = frozenset()) -> dict:
    if not isinstance(obj, dict):
        raise ctx.error(f"expected a mapping, got {type(obj).__name__}")
    if isinstance(obj, _Map) and ctx.line is None:
        ctx.line = obj.line
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ctx.child(unknown[0], obj).error(f"unknown field (allowed: {', '.join(sorted(allowed))})")
    missing = sorted(required - set(obj))
    if missing:
        raise ctx.error(f"missing required field {missing[0]!r}")
    return obj


class _Reader:
    def __init__(self, source: str, params: dict[str, Fraction]):
        self.source, self.params = source, params

    def resolve(self, value, ctx: _Ctx):
        if isinstance(value, str) and value.startswith("$"):
            name = value[1:]
            if name not in self.params:
                raise ctx.error(f"unknown parameter {name!r}")
            return self.params[name]
        return value

    def number(self, value, ctx: _Ctx) -> Fraction:
        value = self.resolve(value, ctx)
        if isinstance(value, bool):
            raise ctx.error("expected a number, got a boolean")
        if not isinstance(value, (int, float, Fraction, str)):
            raise ctx.error(f"expected an integer or 'p/q' rational, got {value!r}")
        try:
            return q.rational(value)
        except (ValueError, ZeroDivisionError):
            raise ctx.error(f"expected an integer or 'p/q' rational, got {value!r}") from None

    def integer(self, value, ctx: _Ctx, lo: int | None = None) -> int:
        x = self.number(value, ctx)
        if x.denominator != 1:
            raise ctx.error(f"expected an integer, got {x}")
        if lo is not None and x < lo:
            raise ctx.error(f"must be >= {lo}, got {x}")
        return int(x)

    def ints(self, value, ctx: _Ctx, n: int | None = None, lo: int | None = None) -> list[int]:
        if not isinstance(value, list):
            raise ctx.error("expected a list")
        if n is not None and len(value) != n:
            raise ctx.error(f"expected {n} entries, got {len(value)}")
        return [self.integer(v, ctx.child(i), lo) for i, v in enumerate(value)]

    def pairs(self, value, ctx: _Ctx) -> list[tuple[int, int]]:
        if not isinstance(value, list):
            raise ctx.error("expected a list of [i, j] pairs")
        return [tuple(self.ints(p, ctx.child(k), 2, 0)) for k, p in enumerate(value)]

    def choice(self, value, ctx: _Ctx, options) -> str:
        value = self.resolve(value, ctx)
        if value not in options:
            raise ctx.error(f"expected one of {', '.join(map(str, options))}, got {value!r}")
        return value


_COMMON = {"kind", "label", "rate"}
_EVENT_FIELDS = {
    "ashe": _COMMON | {"v", "blocking"},
    "piecewise": _COMMON | {"hyperplanes", "zones", "validate"},
    "jackson": {"kind", "routing", "policy"},
    "fork": _COMMON | {"source", "targets", "blocking"},
    "join": _COMMON | {"inputs", "target", "policy"},
    "negative": _COMMON | {"source", "target"},
    "batch": _COMMON | {"source", "target", "K", "L", "policy"},
    "multiserver": _COMMON | {"source", "target", "servers"},
    "jsw": _COMMON | {"queues", "eps"},
    "comparison": {"kind", "mu1", "mu2", "lam", "capacity", "eps"},
}
_NEEDS_RATE = {"ashe", "piecewise", "fork", "join", "negative", "batch", "multiserver", "jsw"}


def load_model(path: str | Path, overrides: dict[str, Any] | None = None, mode: str | None = None) -> Model:
    """Parse and build the model in ``path``; ``overrides`` replace ``params`` entries."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read: {exc.strerror}") from None
    return parse_model(text, str(path), overrides, mode)


def parse_model(
    text: str, source: str = "<string>", overrides: dict[str, Any] | None = None, mode: str | None = None
) -> Model:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else "?"
        raise ConfigError(f"{source}:{line}: YAML syntax error: {exc.problem}") from None
    root = _Ctx(source)
    doc = _mapping(
        doc,
        root,
        {"schema_version", "name", "params", "capacities", "queues", "events", "sampler", "sweep", "metrics"},
        {"schema_version", "events"},
    )
    if doc["schema_version"] != SCHEMA_VERSION:
        raise root.child("schema_version", doc).error(
            f"unsupported schema version {doc['schema_version']!r} (expected {SCHEMA_VERSION})"
        )

    params: dict[str, Fraction] = {}
    raw_params = doc.get("params") or {}
    pctx = root.child("params", doc)
    if not isinstance(raw_params, dict):
        raise pctx.error("expected a mapping")
    reader = _Reader(source, params)
    for k, v in raw_params.items():
        params[str(k)] = reader.number(v, pctx.child(k, raw_params))
    for k, v in (overrides or {}).items():
        if k not in params:
            raise pctx.error(f"cannot override unknown parameter {k!r}")
        params[k] = q.rational(v)

    sampler = _sampler_options(doc.get("sampler") or {}, root.child("sampler", doc), reader)
    if mode is not None:
        sampler.mode = mode
    table = _build_table(doc, root, reader, sampler.mode)

    sweep = None
    if "sweep" in doc:
        sctx = root.child("sweep", doc)
        s = _mapping(doc["sweep"], sctx, {"param", "values"}, {"param", "values"})
        if s["param"] not in params:
            raise sctx.child("param", s).error(f"sweep parameter {s['param']!r} is not in params")
        vals = s["values"]
        if not isinstance(vals, list) or not vals:
            raise sctx.child("values", s).error("expected a nonempty list")
        sweep = (s["param"], [reader.number(v, sctx.child("values", s).child(i)) for i, v in enumerate(vals)])

    metrics = list(doc.get("metrics") or [])
    for i, m in enumerate(metrics):
        if m not in METRICS:
            raise root.child("metrics", doc).child(i).error(f"unknown metric {m!r} (known: {', '.join(METRICS)})")
    if any(ev.get("kind") == "comparison" for ev in doc["events"] if isinstance(ev, dict)):
        if "load_diff" not in metrics:
            metrics.append("load_diff")
    name = str(doc.get("name") or Path(source).stem)
    return Model(name, table, sampler, params, sweep, metrics, source)


METRICS = {"load_diff": q.comparison_load_difference}


def _sampler_options(obj, ctx: _Ctx, reader: _Reader) -> SamplerOptions:
    s = _mapping(obj, ctx, {"algorithm", "mode", "threshold", "cap", "state_cap", "minimal"})
    out = SamplerOptions()
    if "algorithm" in s:
        out.algorithm = reader.choice(s["algorithm"], ctx.child("algorithm", s), ALGORITHMS)
    if "mode" in s:
        out.mode = reader.choice(s["mode"], ctx.child("mode", s), MODES)
    if "threshold" in s:
        out.threshold = reader.integer(s["threshold"], ctx.child("threshold", s), 1)
    if "cap" in s:
        out.cap = reader.integer(s["cap"], ctx.child("cap", s), 1)
    if "state_cap" in s:
        out.state_cap = reader.integer(s["state_cap"], ctx.child("state_cap", s), 1)
    if "minimal" in s:
        if not isinstance(s["minimal"], bool):
            raise ctx.child("minimal", s).error("expected true or false")
        out.minimal = s["minimal"]
    return out


def _queues(doc, root: _Ctx, reader: _Reader) -> list[q.QueueSpec]:
    qctx = root.child("queues", doc)
    if not isinstance(doc["queues"], list) or not doc["queues"]:
        raise qctx.error("expected a nonempty list of queues")
    specs = []
    for i, raw in enumerate(doc["queues"]):
        c = qctx.child(i)
        m = _mapping(raw, c, {"capacity", "mu", "lam", "servers"}, {"capacity"})
        try:
            specs.append(
                q.QueueSpec(
                    reader.integer(m["capacity"], c.child("capacity", m), 0),
                    reader.number(m.get("mu", 1), c.child("mu", m)),
                    reader.number(m.get("lam", 0), c.child("lam", m)),
                    reader.integer(m.get("servers", 1), c.child("servers", m), 1),
                )
            )
        except ModelError as exc:
            raise c.error(str(exc)) from None
    return specs


def _build_table(doc, root: _Ctx, reader: _Reader, mode: str) -> EventTable:
    events = doc["events"]
    ectx = root.child("events", doc)
    if not isinstance(events, list) or not events:
        raise ectx.error("expected a nonempty list of events")
    kinds = [ev.get("kind") if isinstance(ev, dict) else None for ev in events]
    if "comparison" in kinds:
        if len(events) != 1:
            raise ectx.error("a 'comparison' entry defines the whole model and must be the only event")
        c = ectx.child(0)
        m = _mapping(events[0], c, _EVENT_FIELDS["comparison"], {"kind", "mu1", "mu2", "lam", "capacity"})
        try:
            return q.build_comparison_network(
                reader.number(m["mu1"], c.child("mu1", m)),
                reader.number(m["mu2"], c.child("mu2", m)),
                reader.number(m["lam"], c.child("lam", m)),
                reader.integer(m["capacity"], c.child("capacity", m), 0),
                reader.number(m["eps"], c.child("eps", m)) if "eps" in m else None,
                mode,
            )
        except ModelError as exc:
            raise c.error(str(exc)) from None

    specs = None
    if "queues" in doc:
        specs = _queues(doc, root, reader)
        caps = [s.capacity for s in specs]
        if "capacities" in doc:
            raise root.child("capacities", doc).error("give either 'capacities' or 'queues', not both")
    elif "capacities" in doc:
        caps = reader.ints(doc["capacities"], root.child("capacities", doc), lo=0)
        if not caps:
            raise root.child("capacities", doc).error("need at least one capacity")
    else:
        raise root.error("missing 'capacities' or 'queues'")
    space = StateSpace(tuple(caps))
    table = EventTable(space)
    for n, raw in enumerate(events):
        c = ectx.child(n)
        if not isinstance(raw, dict):
            raise c.error("expected a mapping")
        kind = reader.choice(raw.get("kind"), c.child("kind", raw), sorted(_EVENT_FIELDS))
        required = {"kind", "rate"} if kind in _NEEDS_RATE else {"kind"}
        m = _mapping(raw, c, _EVENT_FIELDS[kind], required)
        try:
            for label, rate, sem in _event_entries(kind, m, c, reader, space, specs, mode, n):
                if any(ev.label == label for ev in table.events):
                    raise c.error(f"duplicate event label {label!r}")
                table.add(label, rate, sem)
        except ModelError as exc:
            raise c.error(f"{type(exc).__name__}: {exc}") from None
    return table


def _event_entries(kind, m, c: _Ctx, reader: _Reader, space: StateSpace, specs, mode, n):
    d = space.d
    label = str(m.get("label", f"{kind}{n + 1}"))
    rate = reader.number(m["rate"], c.child("rate", m)) if "rate" in m else None
    if rate is not None and rate <= 0:
        raise c.child("rate", m).error("rate must be positive")
    policy = reader.choice(m.get("policy", "CL"), c.child("policy", m), q.POLICIES)

    def idx(key, outside=True):
        i = reader.integer(m[key], c.child(key, m), 0 if outside else 1)
        if i > d:
            raise c.child(key, m).error(f"queue index {i} out of range [0, {d}]")
        return i

    if kind == "ashe":
        v = reader.ints(m.get("v"), c.child("v", m), d)
        pairs = reader.pairs(m.get("blocking", []), c.child("blocking", m))
        return [(label, rate, _ashe_from_config(v, pairs, d, c.child("blocking", m)))]
    if kind == "piecewise":
        return [(label, rate, _piecewise(m, c, reader, space, mode))]
    if kind == "jackson":
        if specs is None:
            raise c.error("'jackson' needs a top-level 'queues' list")
        routing = m.get("routing") or [[0] * d for _ in range(d)]
        rctx = c.child("routing", m)
        if not isinstance(routing, list) or len(routing) != d:
            raise rctx.error(f"expected a {d}x{d} matrix")
        P = []
        for i, row in enumerate(routing):
            if not isinstance(row, list) or len(row) != d:
                raise rctx.child(i).error(f"expected {d} entries")
            P.append([reader.number(p, rctx.child(i).child(j)) for j, p in enumerate(row)])
        table = q.build_jackson(specs, q.RoutingSpec(P, policy), mode)
        return [(ev.label, ev.weight, ev.semantics) for ev in table.events]
    if kind == "fork":
        targets = reader.ints(m.get("targets"), c.child("targets", m), lo=1)
        relation = reader.pairs(m["blocking"], c.child("blocking", m)) if "blocking" in m else None
        return [(label, rate, q.fork_event(d, idx("source"), targets, relation))]
    if kind == "join":
        inputs = reader.ints(m.get("inputs"), c.child("inputs", m), 2, 1)
        return [(label, rate, q.join_event(d, inputs, idx("target"), policy))]
    if kind == "negative":
        return [(label, rate, q.negative_customer(d, idx("source", False), idx("target", False)))]
    if kind == "batch":
        K = reader.integer(m.get("K", 1), c.child("K", m), 1)
        L = reader.integer(m.get("L", 1), c.child("L", m), 1)
        return [(label, rate, q.batch_event(d, idx("source"), idx("target"), K, L, policy))]
    if kind == "multiserver":
        servers = reader.integer(m.get("servers", 1), c.child("servers", m), 1)
        evs = q.multiserver_events(space, idx("source", False), idx("target"), servers, rate, mode)
        return [(f"{label}_{k + 1}", w, ev) for k, (_, w, ev) in enumerate(evs)]
    if kind == "jsw":
        if specs is None:
            raise c.error("'jsw' needs a top-level 'queues' list for service rates")
        pair = reader.ints(m.get("queues", [1, 2]), c.child("queues", m), 2, 1)
        eps = reader.number(m["eps"], c.child("eps", m)) if "eps" in m else None
        chosen = [specs[i - 1] for i in pair]
        return [(label, rate, q.jsw_routing_event(space, tuple(pair), chosen, eps, mode))]
    raise c.error(f"unsupported kind {kind!r}")


def _ashe_from_config(v, pairs, d, ctx: _Ctx) -> Ashe:
    for i, j in pairs:
        if not (1 <= i <= d and 1 <= j <= d):
            raise ctx.error(f"blocking pair {(i, j)} must use components 1..{d}")
    return Ashe(tuple(v), frozenset((i - 1, j - 1) for i, j in pairs))


def _piecewise(m, c: _Ctx, reader: _Reader, space: StateSpace, mode: str) -> PiecewiseEvent:
    d = space.d
    hctx = c.child("hyperplanes", m)
    raw_h = m.get("hyperplanes") or []
    if not isinstance(raw_h, list):
        raise hctx.error("expected a list")
    hps = []
    for i, h in enumerate(raw_h):
        hc = hctx.child(i)
        h = _mapping(h, hc, {"normal", "offset"}, {"normal", "offset"})
        normal = h["normal"]
        if not isinstance(normal, list) or len(normal) != d:
            raise hc.child("normal", h).error(f"expected {d} entries")
        nvec = [reader.number(a, hc.child("normal", h).child(k)) for k, a in enumerate(normal)]
        try:
            hps.append(Hyperplane(nvec, reader.number(h["offset"], hc.child("offset", h))))
        except ModelError as exc:
            raise hc.error(str(exc)) from None
    zctx = c.child("zones", m)
    raw_z = m.get("zones")
    if not isinstance(raw_z, list) or not raw_z:
        raise zctx.error("expected a nonempty list of zones")
    zones = []
    for i, z in enumerate(raw_z):
        zc = zctx.child(i)
        z = _mapping(z, zc, {"signs", "v", "blocking", "name"}, {"v"})
        signs = str(z.get("signs", ""))
        v = reader.ints(z["v"], zc.child("v", z), d)
        pairs = reader.pairs(z.get("blocking", []), zc.child("blocking", z))
        zones.append(Zone(signs, _ashe_from_config(v, pairs, d, zc.child("blocking", z)), str(z.get("name", ""))))
    validate = m.get("validate", True)
    return PiecewiseEvent(space, hps, zones, mode=mode, validate=bool(validate), name=str(m.get("label", "")))
