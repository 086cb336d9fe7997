"""Run reports, rebuilt from a trace file and nothing else.

The ``run`` command writes its report through the same function that
``report`` applies to a saved trace, so both outputs are byte-identical.
"""

from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import dataclass, field

from .harness import TRACE_HEADER
from .ledger import AccountId, Ledger, TraceRecord

_HEADER_RE = re.compile(rf"^{re.escape(TRACE_HEADER)} name=(.*) seed=(-?\d+)$")


class TraceFormatError(ValueError):
    pass


@dataclass
class RunReport:
    scenario: str
    seed: int
    phases: "OrderedDict[str, str]" = field(default_factory=OrderedDict)
    acknowledgments: list[tuple[int, str, str]] = field(default_factory=list)
    payouts: list[tuple[int, str, str, str, int]] = field(default_factory=list)
    escrow: list[tuple[str, str, int]] = field(default_factory=list)
    linkage: list[tuple[int, str]] = field(default_factory=list)
    rejections: int = 0

    def payout_totals(self) -> "OrderedDict[str, tuple[int, int]]":
        totals: OrderedDict = OrderedDict()
        for _, kind, _, _, amount in self.payouts:
            count, total = totals.get(kind, (0, 0))
            totals[kind] = (count + 1, total + amount)
        return totals

    def render(self) -> str:
        out = [f"scenario {self.scenario}  seed {self.seed}", ""]
        out.append(f"{'instance':<18}{'final phase':<14}")
        for iid, phase in self.phases.items():
            out.append(f"{iid:<18}{phase:<14}")
        out += ["", f"acknowledgments: {len(self.acknowledgments)}"]
        for block, iid, donor in self.acknowledgments:
            out.append(f"  block {block:<6}instance {iid}  donor {donor[:12]}")
        out += ["", f"{'payout kind':<24}{'count':>6}{'total':>10}"]
        for kind, (count, total) in self.payout_totals().items():
            out.append(f"{kind:<24}{count:>6}{total:>10}")
        if self.escrow:
            out += ["", "held on acknowledged deposits (terminal escrow)"]
            for iid, sd, balance in self.escrow:
                out.append(f"  instance {iid}  deposit {sd[:12]}  {balance}")
        if self.linkage:
            out += ["", "linkage analyzer correct-guess rate"]
            for block, rate in self.linkage:
                out.append(f"  block {block:<6}{rate}")
        out += ["", f"rejected actions: {self.rejections}", "", "# machine-readable"]
        out.append(f"scenario|{self.scenario}")
        out.append(f"seed|{self.seed}")
        for iid, phase in self.phases.items():
            out.append(f"instance|{iid}|{phase}")
        for block, iid, donor in self.acknowledgments:
            out.append(f"ack|{block}|{iid}|{donor}")
        for block, kind, src, dst, amount in self.payouts:
            out.append(f"payout|{block}|{kind}|{src}|{dst}|{amount}")
        for iid, sd, balance in self.escrow:
            out.append(f"escrow|{iid}|{sd}|{balance}")
        for block, rate in self.linkage:
            out.append(f"linkage|{block}|{rate}")
        return "\n".join(out) + "\n"


def parse_trace(text: str) -> tuple[str, int, list[TraceRecord]]:
    lines = text.splitlines()
    if not lines:
        raise TraceFormatError("empty trace")
    m = _HEADER_RE.match(lines[0])
    if m is None:
        raise TraceFormatError(f"first line must start with {TRACE_HEADER!r}")
    records = []
    for n, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            records.append(TraceRecord.parse(line))
        except ValueError as exc:
            raise TraceFormatError(f"line {n}: {exc}") from None
    return m.group(1), int(m.group(2)), records


def build_report(trace_text: str) -> RunReport:
    name, seed, records = parse_trace(trace_text)
    report = RunReport(name, seed)
    deposits = {}
    for rec in records:
        if rec.kind == "OPEN":
            deposits[rec.actor] = rec.payload.decode()
        elif rec.kind == "PHASE":
            report.phases[rec.actor] = rec.payload.decode().split()[-1]
        elif rec.kind == "ACK":
            report.acknowledgments.append((rec.block, rec.actor, rec.payload.decode()))
        elif rec.kind == "PAYOUT":
            kind, src, dst, amount = rec.payload.decode().split()[:4]
            report.payouts.append((rec.block, kind, src, dst, int(amount)))
        elif rec.kind == "LINKAGE":
            report.linkage.append((rec.block, rec.payload.decode()))
        elif rec.kind == "REJECT":
            report.rejections += 1
    if report.acknowledgments:
        ledger = Ledger.replay(records)
        for _, iid, _ in report.acknowledgments:
            sd = deposits[iid]
            report.escrow.append((iid, sd, ledger.balance_of(AccountId.from_hex(sd))))
    return report
