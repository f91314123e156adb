"""Acceptance criteria 1-9.

Each test prints one ``criterion N: PASS|FAIL`` line; the same lines are
repeated in the pytest terminal summary.  Run directly with
``python tests/test_acceptance.py`` for just the summary.
"""
import itertools
import random
import sys
import time
from collections import Counter
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from activeswitch.annotation import (HOST_MAC, NotForwarding, decode_path, encode_extended_path,  # noqa: E402
                                     encode_octet_path, format_mac, parse_mac, shift_nibble,
                                     shift_octet, step_extended)
from activeswitch.cli import census_series, scenario_workload  # noqa: E402
from activeswitch.encapsulation import EncapBox, TagPoolExhausted  # noqa: E402
from activeswitch.engine import Engine, FlowSpec, Workload  # noqa: E402
from activeswitch.metrics import check_affinity, check_symmetricality  # noqa: E402
from activeswitch.middlebox import (ManglingRouter, MiddleboxInstance, Terminating,  # noqa: E402
                                    Translucent)
from activeswitch.packet import SimPacket  # noqa: E402
from activeswitch.scenario import load_scenario  # noqa: E402
from activeswitch.switch import (Drop, FlowRule, LoadField, MatchSpec, OutputFixed, StoreField,  # noqa: E402
                                 SwitchState, compile_edge_shift_program)
from activeswitch.topology import compute_next_hop_tables  # noqa: E402

from helpers import chain, fabric_scenario, key, mesh_scenario  # noqa: E402

RESULTS: dict[int, str] = {}

# per-switch egress port for each destination id in the five-switch mesh,
# transcribed from the published table
NEXT_HOP_TABLE = {
    "A": {9: 1, 1: 2, 2: 2, 3: 3, 4: 3, 5: 4, 6: 4, 7: 5, 8: 5},
    "B": {9: 6, 1: 1, 2: 2, 3: 3, 4: 3, 5: 4, 6: 4, 7: 5, 8: 5},
    "C": {9: 5, 1: 6, 2: 6, 3: 1, 4: 2, 5: 3, 6: 3, 7: 4, 8: 4},
    "D": {9: 4, 1: 5, 2: 5, 3: 6, 4: 6, 5: 1, 6: 2, 7: 3, 8: 3},
    "E": {9: 3, 1: 4, 2: 4, 3: 5, 4: 5, 5: 6, 6: 6, 7: 1, 8: 2},
}


def report(n, failures, detail="", started=None):
    took = f" ({time.perf_counter() - started:.1f}s)" if started else ""
    status = "PASS" if not failures else "FAIL"
    line = f"criterion {n}: {status}{took} {detail}".rstrip()
    if failures:
        line += " | " + "; ".join(str(f) for f in failures[:5])
    RESULTS[n] = line
    print(line)
    assert not failures, line


def visits(trace, pid):
    """(location, egress port or None) for every hop of one payload."""
    return [(e.loc, e.port) for e in trace.for_payload(pid)
            if e.kind in ("SwitchProcess", "MiddleboxTraverse", "Deliver")]


# ---------------------------------------------------------------------------

def test_criterion_1_annotation_fidelity():
    t0 = time.perf_counter()
    bad = []
    if format_mac(encode_octet_path([2, 5, 4])) != "00:00:ff:04:05:02":
        bad.append("encode([2,5,4])")
    s = load_scenario("fig1-fabric")
    e = Engine(s)
    trace = e.run(scenario_workload(s))
    if e.controller.plans and next(iter(e.controller.plans.values())).instances != ("RE1", "IPS"):
        bad.append("seed did not select RE1")
    want = [("S1", 2), ("RE1", None), ("S2", 5), ("IPS", None), ("S5", 4), ("H", None)]
    if visits(trace, 1) != want:
        bad.append(f"path {visits(trace, 1)}")
    hops = [ev for ev in trace.for_payload(1) if ev.kind == "SwitchProcess"]
    dsts = [format_mac(ev.packet.dst_mac) for ev in hops]
    if dsts != ["00:00:00:ff:04:05", "00:00:00:00:ff:04", "00:00:00:00:00:ff"]:
        bad.append(f"dst sequence {dsts}")
    report(1, bad, "fabric ports 2,5,4; intermediate dst 00:00:00:ff:04:05", t0)


def test_criterion_2_nibble_fidelity():
    t0 = time.perf_counter()
    bad = []
    s = load_scenario("mesh5")
    e = Engine(s, encoding="nibble")
    trace = e.run(scenario_workload(s))
    [ingress] = [r for r in e.switches["A"] if r.note == "ingress"]
    if ingress.actions[0].value != parse_mac("00:00:00:ff:25:12"):
        bad.append(f"annotation {format_mac(ingress.actions[0].value)}")
    want = [("A", 2), ("B", 1), ("h1", None), ("B", 5), ("E", 2), ("h8", None)]
    if visits(trace, 1) != want:
        bad.append(f"path {visits(trace, 1)}")
    final = trace.of_kind("Deliver")
    if len(final) != 1 or final[0].packet.dst_mac != HOST_MAC:
        bad.append("final dst")
    report(2, bad, "A-2-B-1-h1-B-5-E-2-h8, final dst 00:00:00:00:00:ff", t0)


def test_criterion_3_destination_encoding():
    t0 = time.perf_counter()
    bad = []
    s = load_scenario("mesh5")
    e = Engine(s, encoding="destination")
    e.program()
    e.inject("gw", SimPacket(key(), e.new_payload(), parse_mac("00:00:00:ff:08:01")))
    hops = [(ev.loc, ev.port, format_mac(ev.packet.dst_mac))
            for ev in e.trace.of_kind("SwitchProcess")]
    want = [("A", 2, "00:00:00:ff:08:01"), ("B", 1, "00:00:00:00:ff:08"),
            ("B", 5, "00:00:00:00:ff:08"), ("E", 2, "00:00:00:00:00:ff")]
    if hops != want:
        bad.append(f"hops {hops}")
    if [ev.loc for ev in e.trace.of_kind("Deliver")] != ["h8"]:
        bad.append("not delivered to h8")
    tables = compute_next_hop_tables(s.topology)
    cells = 0
    for sw, row in NEXT_HOP_TABLE.items():
        for ident, port in row.items():
            cells += 1
            if tables[sw][ident] != port:
                bad.append(f"next_hop({sw},{ident})={tables[sw][ident]} not {port}")
    report(3, bad, f"example path exact; {cells}/45 next-hop cells", t0)


def test_criterion_4_state_space_table():
    t0 = time.perf_counter()
    bad = []
    s = load_scenario("analysis")
    rng = random.Random(2024)
    randoms = sorted(rng.randint(1, 10_000) for _ in range(20))
    ns = [1, 10, 100] + randoms
    series = {mode: census_series(s, mode, ns) for mode in ("active", "baseline")}
    table = {1: (4, 12), 10: (22, 111), 100: (202, 1101)}
    for n, (act, base) in table.items():
        a, b = series["active"][n], series["baseline"][n]
        if a.row() != (n + 1, 1, n, act):
            bad.append(f"active n={n} {a.row()}")
        if b.row() != (n + 1, 8 * n, 2 * n, base):
            bad.append(f"baseline n={n} {b.row()}")
    for n in randoms:
        if series["active"][n].total != 2 * n + 2:
            bad.append(f"active n={n} total {series['active'][n].total}")
        if series["baseline"][n].total != 11 * n + 1:
            bad.append(f"baseline n={n} total {series['baseline'][n].total}")
    report(4, bad, f"table rows exact; 20 random n up to {randoms[-1]} match 2n+2 / 11n+1", t0)


def test_criterion_5_constant_middlebox_state():
    t0 = time.perf_counter()
    bad = []
    s = load_scenario("analysis")
    mbox = [sw for sw, role in s.roles.items() if role == "middlebox"]
    ns = [0, 1, 2, 10, 100, 1000]
    series = census_series(s, "active", ns)
    for n, c in series.items():
        for sw in mbox:
            if c.per_switch[sw] != 1:
                bad.append(f"n={n} {sw} holds {c.per_switch[sw]}")
    # fig1 has one middlebox per switch; check those too under load
    f = load_scenario("fig1-fabric")
    e = Engine(f, record=False)
    e.run(scenario_workload(f, flows=500, packets=2, pattern="bidirectional"))
    for sw, role in f.roles.items():
        if role == "middlebox" and e.switches[sw].rule_count != 1:
            bad.append(f"fig1 {sw} holds {e.switches[sw].rule_count}")
    report(5, bad, f"1 rule per middlebox switch for n in {ns}", t0)


def _extended_net(mbox_ports, end_ports):
    devs = [("gw", "gateway", "I", 1)]
    devs += [(f"m{p}", "middlebox", "M", p) for p in mbox_ports]
    devs += [(f"h{p}", "endpoint", "E", p) for p in end_ports]
    s = fabric_scenario(devs, encoding="extended",
                        roles={"I": "ingress", "M": "middlebox", "E": "endpoint"})
    e = Engine(s)
    e.program()
    return e


def _drive(e, paths):
    bad = []
    for i, path in enumerate(paths):
        k = key(i)
        k = k._replace(src_port=1024 + i % 60000, src_ip=k.src_ip + i // 60000)
        ann = e.controller.install_flow_path(k, "gw", path)
        if decode_path(ann, "extended") != list(path):
            bad.append(f"round trip {path}")
        pid = e.new_payload()
        start = len(e.trace)
        e.inject("gw", SimPacket(k, pid))
        tail = e.trace.events[start:]
        ports = [ev.port for ev in tail if ev.kind == "SwitchProcess"]
        ok = ports == list(path) and tail[-1].kind == "Deliver" and tail[-1].loc == f"h{path[-1]}"
        if not ok:
            bad.append(f"path {list(path)} gave {ports}")
    return bad


def test_criterion_6_extended_paths():
    t0 = time.perf_counter()
    rng = random.Random(6)
    mbox_ports = list(range(2, 40))
    end_ports = list(range(200, 210))
    e = _extended_net(mbox_ports, end_ports)
    paths = []
    for _ in range(1000):
        n = rng.randint(6, 10)
        paths.append([rng.choice(mbox_ports) for _ in range(n - 1)] + [rng.choice(end_ports)])
    bad = _drive(e, paths)
    # exhaustive: five middlebox hops and a final endpoint hop, 4 ports each
    e2 = _extended_net([2, 3, 4, 5], [10, 11, 12, 13])
    exhaustive = [list(m) + [h] for m in itertools.product([2, 3, 4, 5], repeat=5)
                  for h in (10, 11, 12, 13)]
    bad += _drive(e2, exhaustive)
    for path in itertools.product((1, 2, 253), repeat=6):
        if decode_path(encode_extended_path(path), "extended") != list(path):
            bad.append(f"codec {path}")
    report(6, bad, f"1000 random + {len(exhaustive)} exhaustive length-6 paths delivered exactly", t0)


def test_criterion_7_affinity_symmetricality():
    t0 = time.perf_counter()
    bad = []
    s = load_scenario("fig1-fabric")
    e = Engine(s)
    trace = e.run(scenario_workload(s, flows=1000, packets=4, pattern="bidirectional"))
    aff = check_affinity(trace)
    sym = check_symmetricality(trace)
    bad += aff + sym
    if trace.of_kind("Drop") or len(trace.of_kind("Deliver")) != 4000:
        bad.append("not every packet delivered")
    counts = Counter(choice.instances[0] for _, choice in e.controller.affinity.items())
    for inst in ("RE1", "RE2"):
        if abs(counts[inst] - 500) > 100:
            bad.append(f"{inst} chosen {counts[inst]} times")
    report(7, bad, f"0 affinity / 0 symmetry violations; RE1={counts['RE1']} RE2={counts['RE2']}", t0)


def _router_scenario(encap):
    config = {"encapsulation": encap} if encap else {}
    devs = [("gw", "gateway", "I", 1),
            ("ids", "middlebox", "M", 2),
            ("r", "middlebox", "R", 3, ManglingRouter(seed=8), config),
            ("h", "endpoint", "E", 4)]
    return fabric_scenario(devs, [chain([["ids"], ["r"]], "h", dst_port=80)],
                           roles={"I": "ingress", "M": "middlebox", "R": "middlebox", "E": "endpoint"})


def _encap_run(encap):
    s = _router_scenario(encap)
    e = Engine(s)
    box = e.devices["r"]
    pairs = []
    inner = box.traverse

    def observed(p):
        out = inner(p)
        pairs.extend((p, q) for q in out)
        return out

    box.traverse = observed
    flows = tuple(FlowSpec(key(i), 4, "bidirectional", start=i % 7) for i in range(250))
    trace = e.run(Workload(flows))
    return e, trace, pairs


def test_criterion_8_encapsulation():
    t0 = time.perf_counter()
    bad = []
    for mode in ("assoc", "dscp"):
        e, trace, pairs = _encap_run({"mode": mode})
        if len(pairs) != 1000:
            bad.append(f"{mode}: {len(pairs)} traversals")
        failures = e.drops.get("reassociation", 0) + e.drops.get("dscp-exhausted", 0)
        if failures:
            bad.append(f"{mode}: {failures} reassociation failures")
        changed = sum((p.src_mac, p.dst_mac) != (q.src_mac, q.dst_mac) for p, q in pairs)
        if changed:
            bad.append(f"{mode}: {changed} packets changed L2 headers")
        if e.counts["delivered"] != 1000:
            bad.append(f"{mode}: delivered {e.counts['delivered']}")
        if sum(p.flow_key != q.flow_key for p, q in pairs) != len(pairs):
            bad.append(f"{mode}: inner router did not mangle")
    e, trace, pairs = _encap_run(None)
    if e.counts["delivered"] != 0 or e.counts["dropped"] != 1000:
        bad.append(f"bare router delivered {e.counts['delivered']}")
    # 65th live continuation, twice over for determinism
    outcomes = []
    for _ in range(2):
        b = EncapBox("x", MiddleboxInstance("r", ManglingRouter()), mode="dscp")
        ok = 0
        try:
            for i in range(65):
                b.upstream_outer_receive(SimPacket(key(i), i, encode_octet_path([1 + i % 200, 1 + i // 200])))
                ok += 1
        except TagPoolExhausted:
            pass
        outcomes.append(ok)
    if outcomes != [64, 64]:
        bad.append(f"tag pool gave out after {outcomes}")
    report(8, bad, "assoc+dscp: 0 failures, L2 preserved over 1000 packets; bare router 0% delivery; "
           "65th tag refused", t0)


def _equivalence_pair(rng):
    """A fabric and a fully connected mesh with one device per interior switch."""
    idents = list(range(2, 8))
    kinds = {2: "middlebox", 3: "middlebox", 4: "middlebox", 5: "middlebox",
             6: "endpoint", 7: "endpoint"}
    chains = []
    for j in range(6):
        boxes = rng.sample([2, 3, 4, 5], rng.randint(0, 4))
        chains.append(chain([[f"d{b}"] for b in boxes], f"d{rng.choice([6, 7])}", f"c{j}",
                            dst_port=8000 + j))
    fab_devs = [("gw", "gateway", "I", 1)] + [(f"d{i}", kinds[i], f"S{i}", i) for i in idents]
    fabric = fabric_scenario(fab_devs, chains)
    names = ["A"] + [f"S{i}" for i in idents]
    links, next_port = [], {n: 2 for n in names}
    for a, b in itertools.combinations(names, 2):
        links.append((a, next_port[a], b, next_port[b]))
        next_port[a] += 1
        next_port[b] += 1
    mesh_devs = [("gw", "gateway", "A", 1, 1)] + [(f"d{i}", kinds[i], f"S{i}", 1, i) for i in idents]
    mesh = mesh_scenario(names, links, mesh_devs, chains, encoding="destination")
    return fabric, mesh, chains


def test_criterion_9_property_suite():
    t0 = time.perf_counter()
    bad = []
    rng = random.Random(9)

    # replay determinism
    for name in ("fig1-fabric", "mesh5", "analysis"):
        s = load_scenario(name)
        wl = scenario_workload(s, flows=50, packets=3, pattern="bidirectional")
        for mode in ("active", "baseline") if name != "mesh5" else ("active",):
            if Engine(s, mode).run(wl).render() != Engine(s, mode).run(wl).render():
                bad.append(f"replay {name}/{mode}")

    # conservation under lossy and terminating boxes
    devs = [("gw", "gateway", "I", 1), ("t", "middlebox", "M", 2, Translucent(3, 0.4)),
            ("x", "middlebox", "M", 3, Terminating()), ("h", "endpoint", "E", 4)]
    s = fabric_scenario(devs, [chain([["t"]], "h", "a", dst_port=80),
                               chain([["x"]], "h", "b", dst_port=25)])
    flows = tuple(FlowSpec(key(i, dport=rng.choice([80, 25, 22])), rng.randint(1, 5),
                           rng.choice(["downstream", "bidirectional"]), rng.randint(0, 9))
                  for i in range(300))
    e = Engine(s)
    trace = e.run(Workload(flows))
    kinds = Counter(ev.kind for ev in trace)
    if kinds["Inject"] != kinds["Deliver"] + kinds["Drop"] + kinds["Absorb"]:
        bad.append(f"conservation {dict(kinds)}")

    # register isolation
    sw = SwitchState("S")
    sw.install(FlowRule(2, MatchSpec(in_port=1), (LoadField("dst_mac", 0, 6, 5), OutputFixed(2))))
    sw.install(FlowRule(1, MatchSpec(), (StoreField(5, "dscp", 0, 6), OutputFixed(3))))
    for i in range(2000):
        port = rng.choice([1, 2])
        out = sw.process(port, SimPacket(key(), i, rng.getrandbits(48), dscp=rng.randrange(64)))
        if port == 2 and out.packet.dscp != 0:
            bad.append("register leaked between packets")
            break

    # interpreter / codec agreement
    for mode, codec, top in (("octet", shift_octet, 253), ("nibble", shift_nibble, 14)):
        edge = SwitchState("S", ports=range(1, top + 1))
        for m, acts in compile_edge_shift_program(mode):
            edge.install(FlowRule(10, m, acts))
        for _ in range(10_000):
            a = rng.getrandbits(48) if rng.random() < 0.5 else rng.getrandbits(16)
            out = edge.process(1, SimPacket(key(), 0, a))
            try:
                port, rest = codec(a)
            except NotForwarding:
                if not isinstance(out, Drop):
                    bad.append(f"{mode} {a:#x} should drop")
                continue
            if isinstance(out, Drop) or (out.port, out.packet.dst_mac) != (port, rest):
                bad.append(f"{mode} {a:#x}")
    edge = SwitchState("S", ports=range(1, 254))
    prog = compile_edge_shift_program("extended")
    for i, (m, acts) in enumerate(prog):
        edge.install(FlowRule(11 - i, m, acts))
    for _ in range(3000):
        dst, src = encode_extended_path([rng.randint(1, 253) for _ in range(rng.randint(1, 10))])
        while (dst, src) != (HOST_MAC, 0):
            out = edge.process(1, SimPacket(key(), 0, dst, src))
            port, (dst, src) = step_extended(dst, src)
            if (out.port, out.packet.dst_mac, out.packet.src_mac) != (port, dst, src):
                bad.append("extended step")
                break

    # fabric / mesh equivalence
    compared = 0
    for round_ in range(5):
        fabric, mesh, chains = _equivalence_pair(random.Random(round_))
        flows = tuple(FlowSpec(key(i, dport=8000 + i % len(chains)), 2, "bidirectional")
                      for i in range(60))
        wl = Workload(flows)
        ef, em = Engine(fabric), Engine(mesh)
        tf, tm = ef.run(wl), em.run(wl)
        for k in (f.key for f in flows):
            if ef.controller.plans[k].annotation != em.controller.plans[k].annotation:
                bad.append(f"annotation differs for {k}")
        devices_f, devices_m = {}, {}
        for t, out in ((tf, devices_f), (tm, devices_m)):
            for ev in t:
                if ev.kind in ("MiddleboxTraverse", "Deliver"):
                    out.setdefault(ev.packet.payload_id, []).append(ev.loc)
        ports_f = tf.ports_by_payload()
        idents = {d.name: d.ident for d in mesh.topology.devices.values()}
        for pid, seq in devices_m.items():
            compared += 1
            if devices_f.get(pid) != seq:
                bad.append(f"payload {pid}: fabric {devices_f.get(pid)} mesh {seq}")
            elif ports_f[pid] != [idents[n] for n in seq]:
                bad.append(f"payload {pid}: fabric ports {ports_f[pid]}")
        if len(devices_m) != 120 or tf.of_kind("Drop") or tm.of_kind("Drop"):
            bad.append("equivalence run lost packets")
    report(9, bad, f"replay, conservation, registers, codec agreement, {compared} fabric/mesh paths", t0)


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
