"""Rule counting and trace-level checks of the steering requirements."""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

ROLES = ("ingress", "middlebox", "endpoint")


@dataclass
class Census:
    per_switch: dict = field(default_factory=dict)
    per_role: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.per_role.get(r, 0) for r in ROLES)

    def row(self) -> tuple:
        return tuple(self.per_role.get(r, 0) for r in ROLES) + (self.total,)


def rule_census(switches) -> Census:
    """Live rules per switch and per role label.

    ``switches`` is an engine, or an iterable of switch states.  Switches
    labelled with anything other than the three roles (gateway devices, for
    one) are listed per switch but left out of the total.
    """
    if hasattr(switches, "switches"):
        switches = switches.switches.values()
    c = Census(per_role={r: 0 for r in ROLES})
    for sw in switches:
        c.per_switch[sw.id] = sw.rule_count
        if sw.role:
            c.per_role[sw.role] = c.per_role.get(sw.role, 0) + sw.rule_count
    return c


def _flow_paths(trace) -> dict:
    """flow -> list of (direction, instance sequence) for delivered packets."""
    seqs: dict[int, list[str]] = {}
    delivered: set[int] = set()
    keys: dict[int, tuple] = {}
    for e in trace:
        p = e.packet
        if p is None:
            continue
        if e.kind == "MiddleboxTraverse":
            seqs.setdefault(p.payload_id, []).append(e.loc)
            keys.setdefault(p.payload_id, (p.flow_key, p.direction))
        elif e.kind == "Deliver":
            delivered.add(p.payload_id)
            keys.setdefault(p.payload_id, (p.flow_key, p.direction))
    flow_of = getattr(trace, "flow_of", {})
    out: dict = {}
    for pid in sorted(delivered):
        if pid in flow_of:
            flow, direction = flow_of[pid]
        else:
            key, direction = keys[pid]
            flow = min(key, key.reverse())
        out.setdefault(flow, []).append((direction, tuple(seqs.get(pid, ()))))
    return out


def check_affinity(trace) -> list[str]:
    """Flows whose delivered packets did not all cross the same instances."""
    problems = []
    for flow, paths in _flow_paths(trace).items():
        sets = {frozenset(seq) for _, seq in paths}
        if len(sets) > 1:
            shown = " vs ".join(sorted(",".join(sorted(s)) or "-" for s in sets))
            problems.append(f"flow {flow}: instances changed mid-flow ({shown})")
    return problems


def check_symmetricality(trace) -> list[str]:
    """Flows whose return traffic did not retrace the forward instances backwards."""
    problems = []
    for flow, paths in _flow_paths(trace).items():
        down = {seq for d, seq in paths if d == "downstream"}
        up = {seq for d, seq in paths if d == "upstream"}
        if not down or not up:
            continue
        if {tuple(reversed(s)) for s in down} != up:
            problems.append(f"flow {flow}: forward {sorted(down)} but return {sorted(up)}")
    return problems


def parse_linear(expr: str) -> tuple[int, int]:
    """``"11n+1"`` -> (11, 1)."""
    text = expr.replace(" ", "").replace("*", "")
    if not text or not re.fullmatch(r"[+-]?(\d+n?|n)([+-](\d+n?|n))*", text):
        raise ValueError(f"not a linear expression in n: {expr!r}")
    a = b = 0
    for sign, num, var in re.findall(r"([+-]?)(\d*)(n?)", text):
        if not num and not var:
            continue
        value = int(num) if num else 1
        if sign == "-":
            value = -value
        if var:
            a += value
        else:
            b += value
    return a, b


def evaluate_linear(expr: str, n: int) -> int:
    a, b = parse_linear(expr)
    return a * n + b


def emit_comparison(censuses: Mapping, ns: Iterable[int] = None) -> tuple[str, str]:
    """Text table and CSV from ``{(n, mode): Census}``, ordered by n then mode."""
    keys = sorted(censuses)
    if ns is not None:
        wanted = set(ns)
        keys = [k for k in keys if k[0] in wanted]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "mode", *ROLES, "total"])
    rows = []
    for n, mode in keys:
        row = [n, mode, *censuses[(n, mode)].row()]
        w.writerow(row)
        rows.append([str(x) for x in row])
    header = ["n", "mode", *ROLES, "total"]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(wd) for h, wd in zip(header, widths))]
    lines += ["  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n", buf.getvalue()
