"""Run metrics derived from event logs, and parameter sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from statistics import fmean
from typing import Iterable

from .simnet import LogRecord, SimConfig, SimResult, run

log = logging.getLogger(__name__)

CSV_HEADER = [
    "topology", "lambda", "seed", "requests", "success_rate", "immediate_pct",
    "mean_comp", "mean_comp_queued", "max_retries", "expired",
]


class MalformedLog(ValueError):
    pass


@dataclass(frozen=True)
class SessionOutcome:
    session: str
    created_at: int
    completed_at: int | None
    queued: bool
    queue_wait: int
    retries: int
    bsa_used: int | None
    expired: bool
    attempted_costs: tuple[int, ...] = ()
    candidates: int = 0

    @property
    def completion_time(self) -> int | None:
        if self.completed_at is None:
            return None
        return self.completed_at - self.created_at


@dataclass
class RunSummary:
    requests: int
    completed: int
    success_rate: float | None
    immediate_completion_pct: float | None
    mean_comp: float | None
    max_comp: int | None
    mean_comp_queued: float | None
    max_comp_queued: int | None
    max_retries: int
    sessions_per_bsa: dict[int, int] = field(default_factory=dict)
    expired: int = 0
    immediate: int = 0
    queued_completed: int = 0
    unfinished: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        d["sessions_per_bsa"] = {str(k): v for k, v in sorted(self.sessions_per_bsa.items())}
        return json.dumps(d, sort_keys=True, indent=2)

    def lines(self) -> list[str]:
        def fmt(x, spec=".2f"):
            return "n/a" if x is None else format(x, spec)

        busiest = max(self.sessions_per_bsa.values(), default=0)
        return [
            f"requests           {self.requests}",
            f"completed          {self.completed}  (success {fmt(self.success_rate, '.1%')})",
            f"immediate          {self.immediate}  ({fmt(self.immediate_completion_pct, '.1%')})",
            f"mean comp time     {fmt(self.mean_comp)}  (max {self.max_comp})",
            f"mean comp (queued) {fmt(self.mean_comp_queued)}  (max {self.max_comp_queued})",
            f"max retries        {self.max_retries}",
            f"expired            {self.expired}",
            f"busiest BSA        {busiest} sessions",
        ]


def outcomes(records: Iterable[LogRecord]) -> dict[str, SessionOutcome]:
    created: dict[str, int] = {}
    result: dict[str, SessionOutcome] = {}
    for rec in records:
        try:
            if rec.event == "request":
                created[rec.session] = rec.time
            elif rec.event == "active":
                d = rec.detail
                if rec.session not in created:
                    raise MalformedLog(f"session {rec.session} completed without a request record")
                result[rec.session] = SessionOutcome(
                    session=rec.session, created_at=d["created_at"], completed_at=d["completed_at"],
                    queued=bool(d["queued"]), queue_wait=d["queue_wait"], retries=d["retries"],
                    bsa_used=d["bsa"], expired=False,
                    attempted_costs=tuple(d.get("attempted_costs", ())), candidates=d.get("candidates", 0),
                )
            elif rec.event == "expired":
                result[rec.session] = SessionOutcome(
                    session=rec.session, created_at=created.get(rec.session, rec.time), completed_at=None,
                    queued=True, queue_wait=rec.time - created.get(rec.session, rec.time), retries=0,
                    bsa_used=None, expired=True,
                )
        except (KeyError, TypeError, AttributeError) as exc:
            raise MalformedLog(f"bad record {rec!r}: {exc}") from exc
    return result


def summarize(records: Iterable[LogRecord], unfinished: int = 0) -> RunSummary:
    """Compute the per-run metrics.

    Immediate completion means the request never entered the queue; retries
    that resolve without queueing still count as immediate.
    """
    records = list(records)
    for rec in records:
        if not isinstance(rec, LogRecord) or not isinstance(rec.detail, dict):
            raise MalformedLog(f"not a log record: {rec!r}")
    requests = sum(1 for r in records if r.event == "request")
    per_bsa: dict[int, int] = {}
    for r in records:
        if r.event == "bsa_ready":
            per_bsa[r.node] = per_bsa.get(r.node, 0) + 1
    outs = list(outcomes(records).values())
    done = [o for o in outs if not o.expired]
    direct = [o for o in done if not o.queued]
    queued = [o for o in done if o.queued]
    expired = sum(1 for o in outs if o.expired)

    def mean(xs):
        return fmean(xs) if xs else None

    return RunSummary(
        requests=requests,
        completed=len(done),
        success_rate=len(done) / requests if requests else None,
        immediate_completion_pct=len(direct) / requests if requests else None,
        mean_comp=mean([o.completion_time for o in direct]),
        max_comp=max((o.completion_time for o in direct), default=None),
        mean_comp_queued=mean([o.completion_time for o in queued]),
        max_comp_queued=max((o.completion_time for o in queued), default=None),
        max_retries=max((o.retries for o in done), default=0),
        sessions_per_bsa=per_bsa,
        expired=expired,
        immediate=len(direct),
        queued_completed=len(queued),
        unfinished=unfinished,
    )


def summarize_result(result: SimResult) -> RunSummary:
    return summarize(result.log, unfinished=result.unfinished)


def read_log(lines: Iterable[str]) -> list[LogRecord]:
    out = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(LogRecord.from_json(line))
        except (ValueError, KeyError) as exc:
            raise MalformedLog(f"line {n}: {exc}") from exc
    return out


@dataclass
class SweepRow:
    topology: str
    lam: float
    seed: int
    summary: RunSummary | None
    error: str | None = None

    def csv_fields(self) -> list:
        s = self.summary
        if s is None:
            return [self.topology, _num(self.lam), self.seed, "", "", "", "", "", "", ""]
        return [
            self.topology, _num(self.lam), self.seed, s.requests,
            _fmt(s.success_rate), _fmt(s.immediate_completion_pct),
            _fmt(s.mean_comp), _fmt(s.mean_comp_queued), s.max_retries, s.expired,
        ]


def _num(x: float):
    return int(x) if float(x).is_integer() else x


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def sweep(configs: Iterable[SimConfig]) -> list[SweepRow]:
    """Run every config; a failing run becomes an error row instead of aborting."""
    rows = []
    for cfg in configs:
        topo = cfg.resolve_topology()
        try:
            summary = summarize_result(run(cfg))
            rows.append(SweepRow(topo.name, cfg.lam, cfg.seed, summary))
        except Exception as exc:  # noqa: BLE001 - reported per row
            log.error("run %s lambda=%s seed=%s failed: %s", topo.name, cfg.lam, cfg.seed, exc)
            rows.append(SweepRow(topo.name, cfg.lam, cfg.seed, None, error=f"{type(exc).__name__}: {exc}"))
    return rows


def to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.csv_fields())
    return buf.getvalue()
