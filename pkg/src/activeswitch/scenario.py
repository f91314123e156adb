"""Scenario files: YAML documents describing a network, its policy and a workload.

Schema problems are reported as :class:`SchemaError` carrying the dotted
field path and the line it came from.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .annotation import RESERVED_OCTETS, parse_mac
from .controller import FABRIC_ENCODINGS, MESH_ENCODINGS, ControllerError, PolicyChain
from .metrics import ROLES, parse_linear
from .middlebox import Originating, behavior_from_dict
from .packet import ip_to_int
from .switch import MatchSpec
from .topology import (DEVICE_KINDS, MAX_FABRIC_PORT, MAX_MESH_PORTS, DeviceRef, Fabric,
                       MeshTopology, TopologyError)

SHIPPED = ("fig1-fabric", "mesh5", "analysis")
SWITCH_ROLES = ROLES + ("",)


class SchemaError(ValueError):
    def __init__(self, message: str, path: str = "", line: Optional[int] = None, source: str = ""):
        self.path = path
        self.line = line
        self.source = source
        where = source or "<scenario>"
        if line is not None:
            where += f":{line}"
        field_part = f" field '{path}':" if path else ""
        super().__init__(f"{where}:{field_part} {message}")


class _LineDict(dict):
    line: int = 0
    lines: dict

    def line_of(self, key) -> int:
        return self.lines.get(key, self.line)


class _LineList(list):
    line: int = 0
    lines: list


class _Loader(yaml.SafeLoader):
    pass


def _mapping(loader, node):
    loader.flatten_mapping(node)
    out = _LineDict()
    out.line = node.start_mark.line + 1
    out.lines = {}
    for knode, vnode in node.value:
        key = loader.construct_object(knode, deep=True)
        out[key] = loader.construct_object(vnode, deep=True)
        out.lines[key] = vnode.start_mark.line + 1
    return out


def _sequence(loader, node):
    out = _LineList(loader.construct_object(v, deep=True) for v in node.value)
    out.line = node.start_mark.line + 1
    out.lines = [v.start_mark.line + 1 for v in node.value]
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _sequence)


@dataclass
class Scenario:
    name: str
    topology: Any
    chains: list
    roles: dict = field(default_factory=dict)
    default_actions: dict = field(default_factory=dict)
    encoding: Optional[str] = None
    reannotation: str = "table"
    hop_budget: Optional[int] = None
    seed: int = 0
    workload: dict = field(default_factory=dict)
    expectations: dict = field(default_factory=dict)
    upstream_macs: dict = field(default_factory=dict)
    addresses: dict = field(default_factory=dict)
    source: str = ""


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def fail(self, msg, path, node=None, key=None):
        line = None
        if isinstance(node, _LineDict):
            line = node.line_of(key) if key is not None else node.line
        elif isinstance(node, _LineList):
            line = node.lines[key] if isinstance(key, int) and key < len(node.lines) else node.line
        raise SchemaError(msg, path, line, self.source)

    def get(self, node, key, path, kind=None, required=False, default=None):
        p = f"{path}.{key}" if path else key
        if not isinstance(node, dict):
            self.fail("expected a mapping", path, node)
        if key not in node or node[key] is None:
            if required:
                self.fail("missing required field", p, node)
            return default
        value = node[key]
        if kind is not None and not isinstance(value, kind) or isinstance(value, bool) and kind is int:
            names = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            self.fail(f"expected {names}, got {type(value).__name__}", p, node, key)
        return value

    def known(self, node, keys, path):
        for k in node:
            if k not in keys:
                p = f"{path}.{k}" if path else str(k)
                self.fail(f"unknown field (expected one of {', '.join(sorted(keys))})", p, node, k)


def _resolve_path(ref) -> Path:
    p = Path(ref)
    if p.exists() or p.suffix in (".yaml", ".yml") or "/" in str(ref):
        return p
    if str(ref) in SHIPPED:
        return Path(str(resources.files("activeswitch") / "scenarios" / f"{ref}.yaml"))
    return p


def load_scenario(ref) -> Scenario:
    """Load a scenario from a path or by shipped name (``fig1-fabric``, ``mesh5``, ``analysis``)."""
    path = _resolve_path(ref)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read scenario: {exc.strerror or exc}", source=str(path)) from None
    return parse_scenario(text, str(path))


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SchemaError(f"invalid YAML: {getattr(exc, 'problem', exc)}", "",
                          mark.line + 1 if mark else None, source) from None
    r = _Reader(source)
    if not isinstance(doc, dict):
        raise SchemaError("scenario must be a mapping", "", 1, source)
    r.known(doc, {"name", "seed", "topology", "devices", "policy", "controller", "engine",
                  "workload", "expectations"}, "")
    name = r.get(doc, "name", "", str, default=Path(source).stem)
    seed = r.get(doc, "seed", "", int, default=0)

    topo = r.get(doc, "topology", "", dict, required=True)
    r.known(topo, {"type", "switches", "links", "next_hop", "ingress"}, "topology")
    ttype = r.get(topo, "type", "topology", str, required=True)
    if ttype not in ("fabric", "mesh"):
        r.fail("must be 'fabric' or 'mesh'", "topology.type", topo, "type")
    switches, roles, defaults = [], {}, {}
    sw_list = r.get(topo, "switches", "topology", list, required=True)
    for i, sw in enumerate(sw_list):
        p = f"topology.switches[{i}]"
        if isinstance(sw, str):
            sw = _LineDict(id=sw)
            sw.line, sw.lines = sw_list.lines[i], {}
        r.known(sw, {"id", "role", "default"}, p)
        sid = str(r.get(sw, "id", p, (str, int), required=True))
        role = r.get(sw, "role", p, str, default="")
        if role not in SWITCH_ROLES:
            r.fail(f"role must be one of {', '.join(ROLES)}", f"{p}.role", sw, "role")
        default = r.get(sw, "default", p, str, default="drop")
        if default not in ("drop", "controller"):
            r.fail("must be 'drop' or 'controller'", f"{p}.default", sw, "default")
        if sid in roles:
            r.fail(f"duplicate switch id {sid!r}", f"{p}.id", sw, "id")
        switches.append(sid)
        roles[sid] = role
        defaults[sid] = default

    devices, upstream, addresses = [], {}, {}
    dev_list = r.get(doc, "devices", "", list, required=True)
    port_max = MAX_FABRIC_PORT if ttype == "fabric" else MAX_MESH_PORTS
    for i, d in enumerate(dev_list):
        p = f"devices[{i}]"
        r.known(d, {"id", "kind", "switch", "port", "ident", "behavior", "encapsulation",
                    "interface_model", "upstream_mac", "address"}, p)
        did = str(r.get(d, "id", p, (str, int), required=True))
        kind = r.get(d, "kind", p, str, required=True)
        if kind not in DEVICE_KINDS:
            r.fail(f"kind must be one of {', '.join(DEVICE_KINDS)}", f"{p}.kind", d, "kind")
        sw = str(r.get(d, "switch", p, (str, int), required=True))
        if sw not in roles:
            r.fail(f"unknown switch {sw!r}", f"{p}.switch", d, "switch")
        port = r.get(d, "port", p, int, required=True)
        if not 1 <= port <= port_max or (ttype == "fabric" and port in RESERVED_OCTETS):
            r.fail(f"port {port} outside 1..{port_max}", f"{p}.port", d, "port")
        ident = r.get(d, "ident", p, int)
        if ttype == "mesh" and ident is None:
            r.fail("mesh devices need an 8-bit identifier", f"{p}.ident", d)
        if ident is not None and (not 1 <= ident <= 253):
            r.fail(f"identifier {ident} outside 1..253", f"{p}.ident", d, "ident")
        behavior, config = None, {}
        if kind == "middlebox":
            spec = r.get(d, "behavior", p, (dict, str), default={"type": "transparent"})
            if isinstance(spec, str):
                spec = {"type": spec}
            try:
                behavior = behavior_from_dict(spec)
            except (TypeError, ValueError, KeyError) as exc:
                r.fail(str(exc), f"{p}.behavior", d, "behavior")
            model = r.get(d, "interface_model", p, str, default="ingress/egress")
            if model not in ("ingress/egress", "upstream/downstream"):
                r.fail("must be 'ingress/egress' or 'upstream/downstream'",
                       f"{p}.interface_model", d, "interface_model")
            config["interface_model"] = model
            enc = r.get(d, "encapsulation", p, dict)
            if enc is not None:
                ep = f"{p}.encapsulation"
                r.known(enc, {"mode", "key_fields", "tag_pool", "default_dscp"}, ep)
                mode = r.get(enc, "mode", ep, str, default="assoc")
                if mode not in ("assoc", "dscp"):
                    r.fail("must be 'assoc' or 'dscp'", f"{ep}.mode", enc, "mode")
                block = {"mode": mode}
                if "key_fields" in enc:
                    block["key_fields"] = tuple(r.get(enc, "key_fields", ep, list))
                if "tag_pool" in enc:
                    block["tag_pool"] = tuple(r.get(enc, "tag_pool", ep, list))
                if "default_dscp" in enc:
                    block["default_dscp"] = r.get(enc, "default_dscp", ep, int)
                config["encapsulation"] = block
        elif "behavior" in d:
            r.fail("only middleboxes have a behaviour", f"{p}.behavior", d, "behavior")
        if kind == "gateway" and "upstream_mac" in d:
            try:
                upstream[did] = parse_mac(r.get(d, "upstream_mac", p, str))
            except ValueError as exc:
                r.fail(str(exc), f"{p}.upstream_mac", d, "upstream_mac")
        if "address" in d:
            addr = r.get(d, "address", p, str)
            try:
                ip_to_int(addr)
            except ValueError:
                r.fail(f"not an IPv4 address: {addr!r}", f"{p}.address", d, "address")
            addresses[did] = addr
        devices.append(DeviceRef(did, kind, sw, port, ident, behavior, config))

    try:
        if ttype == "fabric":
            for k in ("links", "next_hop"):
                if k in topo:
                    r.fail("only meshes have this field", f"topology.{k}", topo, k)
            topology = Fabric(switches, devices)
        else:
            links = []
            for i, link in enumerate(r.get(topo, "links", "topology", list, default=[])):
                if not (isinstance(link, list) and len(link) == 4):
                    r.fail("a link is [switch, port, switch, port]", f"topology.links[{i}]",
                           topo["links"], i)
                a, pa, b, pb = link
                links.append((str(a), pa, str(b), pb))
            overrides = r.get(topo, "next_hop", "topology", dict, default={})
            ingress = [s for s in switches if roles[s] == "ingress"]
            topology = MeshTopology(switches, links, devices,
                                    {str(s): dict(t) for s, t in overrides.items()}, ingress)
    except TopologyError as exc:
        raise SchemaError(str(exc), "topology", topo.line, source) from None

    chains = []
    for i, c in enumerate(r.get(doc, "policy", "", list, default=[])):
        p = f"policy[{i}]"
        r.known(c, {"name", "match", "stages", "destination"}, p)
        cname = str(r.get(c, "name", p, (str, int), default=f"chain{i}"))
        m = r.get(c, "match", p, dict, default={})
        r.known(m, {"src_ip", "dst_ip", "src_port", "dst_port", "protocol"}, f"{p}.match")
        fields = {}
        for k, v in m.items():
            if k.endswith("_ip"):
                try:
                    fields[k] = ip_to_int(str(v))
                except ValueError:
                    r.fail(f"not an IPv4 address: {v!r}", f"{p}.match.{k}", m, k)
            else:
                fields[k] = r.get(m, k, f"{p}.match", int)
        stages = []
        for j, st in enumerate(r.get(c, "stages", p, list, default=[])):
            group = [st] if isinstance(st, str) else st
            if not isinstance(group, list) or not group:
                r.fail("a stage is an instance id or a nonempty list of them",
                       f"{p}.stages[{j}]", c, "stages")
            stages.append(tuple(str(x) for x in group))
        dest = r.get(c, "destination", p, (str, list), required=True)
        dest = (dest,) if isinstance(dest, str) else tuple(str(x) for x in dest)
        try:
            chain = PolicyChain(cname, MatchSpec(**fields), tuple(stages), dest)
            chain.check(topology)
        except ControllerError as exc:
            r.fail(str(exc), p, c)
        chains.append(chain)

    ctl = r.get(doc, "controller", "", dict, default={})
    r.known(ctl, {"encoding", "reannotation"}, "controller")
    encoding = r.get(ctl, "encoding", "controller", str)
    allowed = FABRIC_ENCODINGS if ttype == "fabric" else MESH_ENCODINGS
    if encoding is not None and encoding not in allowed:
        r.fail(f"must be one of {', '.join(allowed)} on a {ttype}", "controller.encoding",
               ctl, "encoding")
    reann = r.get(ctl, "reannotation", "controller", str, default="table")
    if reann not in ("table", "controller"):
        r.fail("must be 'table' or 'controller'", "controller.reannotation", ctl, "reannotation")

    eng = r.get(doc, "engine", "", dict, default={})
    r.known(eng, {"hop_budget"}, "engine")
    budget = r.get(eng, "hop_budget", "engine", int)
    if budget is not None and budget < 1:
        r.fail("must be at least 1", "engine.hop_budget", eng, "hop_budget")

    wl = r.get(doc, "workload", "", dict, default={})
    r.known(wl, {"flows", "packets_per_flow", "pattern", "start"}, "workload")
    workload = {
        "flows": r.get(wl, "flows", "workload", int, default=1),
        "packets": r.get(wl, "packets_per_flow", "workload", int, default=1),
        "pattern": r.get(wl, "pattern", "workload", str, default="downstream"),
        "start": r.get(wl, "start", "workload", int, default=0),
    }
    if workload["pattern"] not in ("downstream", "upstream", "bidirectional"):
        r.fail("must be downstream, upstream or bidirectional", "workload.pattern", wl, "pattern")

    exp = r.get(doc, "expectations", "", dict, default={})
    expectations = {}
    for mode, expr in exp.items():
        if mode not in ("active", "baseline"):
            r.fail("expectations are keyed by 'active' or 'baseline'", f"expectations.{mode}", exp, mode)
        try:
            parse_linear(str(expr))
        except ValueError as exc:
            r.fail(str(exc), f"expectations.{mode}", exp, mode)
        expectations[mode] = str(expr)

    has_origin = any(isinstance(d.behavior, Originating) for d in devices)
    if not topology.gateways() and not has_origin and chains:
        raise SchemaError("no gateway or originating middlebox to inject traffic", "devices",
                          dev_list.line, source)
    return Scenario(name, topology, chains, roles, defaults, encoding, reann, budget, seed,
                    workload, expectations, upstream, addresses, source)


def validate(scenario: Scenario) -> None:
    """Checks beyond the schema: connectivity (meshes) and next-hop totality."""
    t = scenario.topology
    t.check_connected()
    if isinstance(t, MeshTopology):
        t.compute_next_hop_tables()
