"""Human-in-the-loop inspection: session state, stopping rule, and metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence


class SessionClosedError(RuntimeError):
    """A verdict arrived after the session stopped."""


class TriageMode(Enum):
    SELECTION = "selection"
    PRIORITIZATION = "prioritization"


@dataclass(frozen=True)
class TriageEvent:
    rank: int
    vulnerable: bool
    at: str


@dataclass
class TriageReport:
    tp: int
    fp: int
    precision: float
    recall: float | None
    f1: float | None
    inspected: int
    dc: int | None = None
    zero_vulnerable: bool = False

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "inspected": self.inspected,
            "dc": self.dc,
            "zero_vulnerable": self.zero_vulnerable,
        }


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class TriageSession:
    """Sequential inspection over a ranking; verdicts are append-only events.

    With a stopping condition the session is in selection mode and closes once
    that many consecutive not-vulnerable verdicts accumulate; without one it
    is in prioritization mode and closes when every host has been inspected.
    """

    def __init__(self, ranking: Sequence, sc: int | None = None,
                 clock: Callable[[], str] | None = None):
        if sc is not None and sc <= 0:
            raise ValueError("the stopping condition must be positive")
        self.ranking = list(ranking)
        self.sc = sc
        self.mode = TriageMode.SELECTION if sc is not None else TriageMode.PRIORITIZATION
        self.events: list[TriageEvent] = []
        self.consecutive_fp = 0
        self.stopped = not self.ranking
        self._clock = clock or _utc_now

    @property
    def n_hosts(self) -> int:
        return len(self.ranking)

    @property
    def cursor(self) -> int:
        """1-based rank of the next host to inspect."""
        return len(self.events) + 1

    @property
    def inspected(self) -> int:
        return len(self.events)

    def current(self):
        if self.stopped:
            return None
        return self.ranking[self.cursor - 1]

    def record_verdict(self, vulnerable: bool) -> TriageEvent:
        if self.stopped:
            raise SessionClosedError("session already stopped")
        event = TriageEvent(rank=self.cursor, vulnerable=vulnerable, at=self._clock())
        self.events.append(event)
        if vulnerable:
            self.consecutive_fp = 0
        else:
            self.consecutive_fp += 1
        if self.mode is TriageMode.SELECTION and self.consecutive_fp >= self.sc:
            self.stopped = True
        if self.cursor > self.n_hosts:
            self.stopped = True
        return event

    def report(self, total_vulnerable: int | None = None,
               count_terminal_fp: bool = True) -> TriageReport:
        """Metrics over the inspected prefix.

        ``count_terminal_fp=False`` excludes the run of false positives that
        triggered the stop from the tp/fp counts. When the denominator for
        recall is unknown (no ground truth supplied or attached) recall and
        f1 are None.
        """
        verdicts = [event.vulnerable for event in self.events]
        counted = verdicts
        if not count_terminal_fp and self.mode is TriageMode.SELECTION \
                and self.stopped and self.consecutive_fp >= (self.sc or 0):
            counted = verdicts[: len(verdicts) - self.sc]
        tp = sum(counted)
        fp = len(counted) - tp

        if total_vulnerable is None:
            flags = [getattr(host, "vulnerable", None) for host in self._entries()]
            if all(flag is not None for flag in flags) and flags:
                total_vulnerable = sum(bool(flag) for flag in flags)

        precision = tp / (tp + fp) if (tp + fp) > 0 else 0.0
        zero_vulnerable = total_vulnerable == 0
        if total_vulnerable is None:
            recall: float | None = None
            f1: float | None = None
        elif total_vulnerable == 0:
            recall = 1.0  # nothing to find
            f1 = 0.0 if precision == 0.0 else 2 * precision * recall / (precision + recall)
        else:
            recall = tp / total_vulnerable
            f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)

        dc = None
        if self.mode is TriageMode.PRIORITIZATION and self.inspected == self.n_hosts:
            true_ranks = [event.rank for event in self.events if event.vulnerable]
            dc = max(true_ranks) if true_ranks else None
        return TriageReport(
            tp=tp, fp=fp, precision=precision, recall=recall, f1=f1,
            inspected=self.inspected, dc=dc, zero_vulnerable=zero_vulnerable,
        )

    def _entries(self):
        for host in self.ranking:
            yield getattr(host, "entry", host)

    def to_event_log(self) -> dict:
        return {
            "sc": self.sc,
            "mode": self.mode.value,
            "n_hosts": self.n_hosts,
            "events": [
                {"rank": e.rank, "vulnerable": e.vulnerable, "at": e.at}
                for e in self.events
            ],
        }

    def write_event_log(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_event_log(), indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def replay(cls, ranking: Sequence, log: dict) -> "TriageSession":
        session = cls(ranking, sc=log.get("sc"))
        for event in log["events"]:
            session.record_verdict(bool(event["vulnerable"]))
        return session


def run_selection(ranking: Sequence, sc: int, oracle: Callable[[object], bool],
                  total_vulnerable: int | None = None,
                  count_terminal_fp: bool = True) -> TriageReport:
    """Simulate selection-mode triage with ground-truth verdicts.

    ``total_vulnerable`` is the denominator for recall; by default it is the
    number of vulnerable hosts within the ranking.
    """
    if sc <= 0:
        raise ValueError("the stopping condition must be positive")
    if total_vulnerable is None:
        total_vulnerable = sum(bool(oracle(host)) for host in ranking)
    session = TriageSession(ranking, sc=sc)
    while not session.stopped:
        session.record_verdict(bool(oracle(session.current())))
    return session.report(total_vulnerable=total_vulnerable,
                          count_terminal_fp=count_terminal_fp)


def debugging_cost(ranking: Sequence, oracle: Callable[[object], bool]) -> int:
    """Rank of the last vulnerable host: inspections needed to find them all."""
    true_ranks = [i + 1 for i, host in enumerate(ranking) if oracle(host)]
    if not true_ranks:
        raise ValueError("debugging cost is undefined without vulnerable hosts")
    return max(true_ranks)
