"""Pair hosts across two scans and report per-port state changes.

Reassigning an IP or MAC during a reconfiguration must not be mistaken for a
host disappearing and a new one appearing, so entries of the two scans are
paired by a greedy score-maximizing matching before the diff is taken.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .scans import (
    HostScan,
    PortKey,
    PortState,
    PORT_STATES,
    ScanDataError,
    ScanDataset,
)

IP_WEIGHT = 0.2
MAC_WEIGHT = 0.2
PORTS_WEIGHT = 0.6

_STATE_INDEX = {state: i for i, state in enumerate(PORT_STATES)}
_CLOSED = _STATE_INDEX[PortState.CLOSED]


@dataclass(frozen=True)
class StateChangeLabel:
    """A "<From>To<To>" transition over the four port states."""

    from_state: PortState
    to_state: PortState

    @property
    def token(self) -> str:
        return f"{self.from_state.value}To{self.to_state.value}"

    @property
    def unchanged(self) -> bool:
        return self.from_state == self.to_state

    @classmethod
    def from_token(cls, token: str) -> StateChangeLabel:
        for from_state in PORT_STATES:
            prefix = f"{from_state.value}To"
            if token.startswith(prefix):
                rest = token[len(prefix):]
                for to_state in PORT_STATES:
                    if rest == to_state.value:
                        return cls(from_state, to_state)
        raise ScanDataError(f"unknown state change label {token!r}")


#: All 16 labels, from-state outer and to-state inner.
ALL_LABELS: tuple[StateChangeLabel, ...] = tuple(
    StateChangeLabel(f, t) for f in PORT_STATES for t in PORT_STATES
)


@dataclass(frozen=True)
class MatchScore:
    score_ip: float
    score_mac: float
    score_ports: float

    @property
    def total(self) -> float:
        return self.score_ip + self.score_mac + self.score_ports


@dataclass
class MatchedPair:
    """Correspondence between an initial and an updated entry; one side may be absent."""

    initial: HostScan | None
    updated: HostScan | None
    score: MatchScore | None = None

    def __post_init__(self) -> None:
        if self.initial is None and self.updated is None:
            raise ValueError("a matched pair needs at least one side")


@dataclass
class NscrEntry:
    """One row of the network state-change report."""

    ip_initial: str | None
    ip_updated: str | None
    mac: str | None
    changes: dict[PortKey, StateChangeLabel]
    vulnerable: bool | None = None

    @property
    def has_change(self) -> bool:
        return any(not label.unchanged for label in self.changes.values())

    def changed_ports(self) -> dict[PortKey, StateChangeLabel]:
        return {key: label for key, label in self.changes.items() if not label.unchanged}


def matching_score(a: HostScan, b: HostScan) -> MatchScore:
    """Score how likely two entries describe the same host.

    The port component considers only ports not closed in at least one of the
    two entries; when there is no such port the two entries are port-identical
    and the component is granted in full.
    """
    score_ip = IP_WEIGHT if a.ip == b.ip else 0.0
    score_mac = MAC_WEIGHT if a.mac is not None and a.mac == b.mac else 0.0
    keys = set(a.ports) | set(b.ports)
    relevant = [
        key for key in keys
        if a.state_of(key) != PortState.CLOSED or b.state_of(key) != PortState.CLOSED
    ]
    if not relevant:
        score_ports = PORTS_WEIGHT
    else:
        matches = sum(1 for key in relevant if a.state_of(key) == b.state_of(key))
        score_ports = PORTS_WEIGHT * matches / len(relevant)
    return MatchScore(score_ip, score_mac, score_ports)


def merged_universe(initial: ScanDataset, updated: ScanDataset) -> list[PortKey]:
    return sorted(set(initial.port_universe) | set(updated.port_universe))


def _state_matrix(ds: ScanDataset, universe: list[PortKey]) -> np.ndarray:
    mat = np.full((len(ds.entries), len(universe)), _CLOSED, dtype=np.int8)
    for i, entry in enumerate(ds.entries):
        for j, key in enumerate(universe):
            state = entry.ports.get(key)
            if state is not None:
                mat[i, j] = _STATE_INDEX[state]
    return mat


def port_score_matrix(initial: ScanDataset, updated: ScanDataset) -> np.ndarray:
    """(n, m) port-component scores for every entry pair."""
    universe = merged_universe(initial, updated)
    a = _state_matrix(initial, universe)
    b = _state_matrix(updated, universe)
    not_closed_a = a != _CLOSED
    not_closed_b = b != _CLOSED
    relevant = not_closed_a[:, None, :] | not_closed_b[None, :, :]
    equal = a[:, None, :] == b[None, :, :]
    relevant_count = relevant.sum(axis=2)
    match_count = (relevant & equal).sum(axis=2)
    return np.where(
        relevant_count == 0,
        PORTS_WEIGHT,
        PORTS_WEIGHT * match_count / np.maximum(relevant_count, 1),
    )


def greedy_match(initial: ScanDataset, updated: ScanDataset) -> list[MatchedPair]:
    """Greedily pair entries by descending matching score.

    All n*m pair scores are computed, sorted by total descending with a
    lexicographic (initial ip, updated ip) tie-break, and accepted while
    neither side's IP has been consumed. Leftover entries on either side are
    emitted as pairs with the other side absent.
    """
    n, m = len(initial.entries), len(updated.entries)
    if n == 0 and m == 0:
        return []
    if n == 0 or m == 0:
        side = initial.entries or updated.entries
        order = sorted(range(len(side)), key=lambda i: side[i].ip)
        if n == 0:
            return [MatchedPair(None, updated.entries[i]) for i in order]
        return [MatchedPair(initial.entries[i], None) for i in order]

    port_scores = port_score_matrix(initial, updated)

    init_ips = np.array([e.ip for e in initial.entries])
    upd_ips = np.array([e.ip for e in updated.entries])
    ip_eq = init_ips[:, None] == upd_ips[None, :]
    init_macs = np.array([e.mac or "" for e in initial.entries])
    upd_macs = np.array([e.mac or "" for e in updated.entries])
    mac_eq = (init_macs[:, None] == upd_macs[None, :]) & (init_macs[:, None] != "")

    totals = IP_WEIGHT * ip_eq + MAC_WEIGHT * mac_eq + port_scores

    flat_init = np.repeat(np.arange(n), m)
    flat_upd = np.tile(np.arange(m), n)
    order = np.lexsort(
        (upd_ips[flat_upd], init_ips[flat_init], -totals.ravel())
    )

    taken_initial = np.zeros(n, dtype=bool)
    taken_updated = np.zeros(m, dtype=bool)
    pairs: list[MatchedPair] = []
    for idx in order:
        i = int(flat_init[idx])
        j = int(flat_upd[idx])
        if taken_initial[i] or taken_updated[j]:
            continue
        taken_initial[i] = True
        taken_updated[j] = True
        score = MatchScore(
            IP_WEIGHT if ip_eq[i, j] else 0.0,
            MAC_WEIGHT if mac_eq[i, j] else 0.0,
            float(port_scores[i, j]),
        )
        pairs.append(MatchedPair(initial.entries[i], updated.entries[j], score))

    for i in sorted(np.flatnonzero(~taken_initial), key=lambda i: initial.entries[i].ip):
        pairs.append(MatchedPair(initial.entries[int(i)], None))
    for j in sorted(np.flatnonzero(~taken_updated), key=lambda j: updated.entries[j].ip):
        pairs.append(MatchedPair(None, updated.entries[int(j)]))
    return pairs


def _entry_sort_key(entry: NscrEntry) -> tuple[str, str]:
    return (entry.ip_initial or "", entry.ip_updated or "")


def build_nscr(pairs: list[MatchedPair]) -> list[NscrEntry]:
    """Derive the state-change report rows from matched pairs.

    An absent side contributes Closed for every port, so added hosts read
    ClosedTo<state> and removed hosts <state>ToClosed. Unchanged ports are
    kept (e.g. ClosedToClosed) so rows stay column-compatible.
    """
    universe = sorted({
        key
        for pair in pairs
        for side in (pair.initial, pair.updated)
        if side is not None
        for key in side.ports
    })
    entries = []
    for pair in pairs:
        changes = {}
        for key in universe:
            before = pair.initial.state_of(key) if pair.initial else PortState.CLOSED
            after = pair.updated.state_of(key) if pair.updated else PortState.CLOSED
            changes[key] = StateChangeLabel(before, after)
        mac = None
        if pair.updated is not None and pair.updated.mac:
            mac = pair.updated.mac
        elif pair.initial is not None and pair.initial.mac:
            mac = pair.initial.mac
        entries.append(NscrEntry(
            ip_initial=pair.initial.ip if pair.initial else None,
            ip_updated=pair.updated.ip if pair.updated else None,
            mac=mac,
            changes=changes,
        ))
    entries.sort(key=_entry_sort_key)
    return entries


def nscr_universe(entries: list[NscrEntry]) -> list[PortKey]:
    if not entries:
        return []
    universe = sorted(entries[0].changes)
    for entry in entries:
        if sorted(entry.changes) != universe:
            raise ScanDataError("NSCR entries disagree on the port universe")
    return universe


def nscr_to_csv_text(entries: list[NscrEntry]) -> str:
    universe = nscr_universe(entries)
    labeled = any(entry.vulnerable is not None for entry in entries)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["ip_initial", "ip_updated", "mac"] + [key.token for key in universe]
    if labeled:
        header.append("vulnerable")
    writer.writerow(header)
    for entry in entries:
        row = [entry.ip_initial or "", entry.ip_updated or "", entry.mac or ""]
        row += [entry.changes[key].token for key in universe]
        if labeled:
            if entry.vulnerable is None:
                row.append("")
            else:
                row.append("true" if entry.vulnerable else "false")
        writer.writerow(row)
    return buf.getvalue()


def write_nscr(entries: list[NscrEntry], path: str | Path) -> None:
    Path(path).write_text(nscr_to_csv_text(entries), encoding="utf-8")


def nscr_from_csv_text(text: str) -> list[NscrEntry]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ScanDataError("empty NSCR file") from None
    if header[:3] != ["ip_initial", "ip_updated", "mac"]:
        raise ScanDataError("NSCR CSV must start with ip_initial,ip_updated,mac")
    port_tokens = header[3:]
    labeled = bool(port_tokens) and port_tokens[-1] == "vulnerable"
    if labeled:
        port_tokens = port_tokens[:-1]
    universe = [PortKey.from_token(token) for token in port_tokens]
    entries = []
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise ScanDataError(f"NSCR row has {len(row)} cells, expected {len(header)}")
        cells = row[3:3 + len(universe)]
        changes = {
            key: StateChangeLabel.from_token(cell) for key, cell in zip(universe, cells)
        }
        vulnerable = None
        if labeled and row[-1]:
            vulnerable = row[-1] == "true"
        entries.append(NscrEntry(
            ip_initial=row[0] or None,
            ip_updated=row[1] or None,
            mac=row[2] or None,
            changes=changes,
            vulnerable=vulnerable,
        ))
    return entries


def read_nscr(path: str | Path) -> list[NscrEntry]:
    return nscr_from_csv_text(Path(path).read_text(encoding="utf-8"))


def strip_ground_truth(entries: list[NscrEntry]) -> list[NscrEntry]:
    """Copy entries with the evaluation-only vulnerable flag removed."""
    return [replace(entry, vulnerable=None) for entry in entries]
