"""Labeled dataset construction for evaluating the pipeline end to end.

Three dataset kinds are generated at a configurable scale: synthetic (valid
changes copied from four reference misconfiguration scenarios), real-style
(few valid changes, drawn from a day-profile change pool), and realistic
(many valid changes from the same pool). Address-mutation experiments derive
scan pairs with known ground truth for exercising the host matcher.
"""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .matching import NscrEntry, StateChangeLabel, nscr_universe
from .ml.seeds import STREAM_DATAGEN, STREAM_MUTATE, rng_for
from .scans import HostScan, PortKey, PortState, Protocol, ScanDataset


class GenerationError(ValueError):
    """A dataset request cannot be satisfied."""


def _tcp(number: int) -> PortKey:
    return PortKey(Protocol.TCP, number)


def _udp(number: int) -> PortKey:
    return PortKey(Protocol.UDP, number)


#: Port universe shared by all generated datasets (24 common service ports).
UNIVERSE: tuple[PortKey, ...] = tuple(sorted(
    [_tcp(n) for n in (21, 22, 25, 53, 80, 110, 139, 143, 443, 445, 465, 587,
                       993, 995, 3306, 3389, 5432, 8080, 8443)]
    + [_udp(n) for n in (53, 123, 161, 500, 514)]
))

_BASE_PROFILE = {_tcp(443): PortState.OPEN, _udp(53): PortState.FILTERED}

# Day-profile of valid changes: 0-13 ports modified per day, mean 1.61. The
# geometric sampler below targets that mean over support {1..13}; zero-change
# days correspond to the no-change filler rows added separately.
CHANGES_PER_DAY_MAX = 13
CHANGES_PER_DAY_MEAN = 1.61
_POOL_SEED = 20210405
_POOL_SIZE = 26


def _identity_row(profile: dict[PortKey, PortState]) -> dict[PortKey, StateChangeLabel]:
    return {
        key: StateChangeLabel(profile.get(key, PortState.CLOSED),
                              profile.get(key, PortState.CLOSED))
        for key in UNIVERSE
    }


def _pattern_row(changes: dict[PortKey, tuple[PortState, PortState]],
                 base: dict[PortKey, PortState] | None = None) -> dict[PortKey, StateChangeLabel]:
    row = _identity_row(base or {})
    for key, (before, after) in changes.items():
        row[key] = StateChangeLabel(before, after)
    return row


@dataclass(frozen=True)
class ScenarioTemplate:
    """One misconfiguration scenario: a valid-change and a vulnerable-change pattern.

    A scenario can affect several hosts in distinct ways, so each side also
    carries the full tuple of row variants; the primary pattern is the first
    variant. The shapes encode the scenarios' semantics (wrong-subnet
    reachability, missing-firewall exposure) and are illustrative
    reconstructions, not captures of any particular network.
    """

    name: str
    valid_change: dict[PortKey, StateChangeLabel]
    vulnerable_change: dict[PortKey, StateChangeLabel]
    valid_variants: tuple[dict[PortKey, StateChangeLabel], ...]
    vulnerable_variants: tuple[dict[PortKey, StateChangeLabel], ...]

    def __post_init__(self) -> None:
        if self.valid_change == self.vulnerable_change:
            raise GenerationError(f"{self.name}: valid and vulnerable patterns coincide")
        for side, row in (("valid", self.valid_change), ("vulnerable", self.vulnerable_change)):
            if all(label.unchanged for label in row.values()):
                raise GenerationError(f"{self.name}: {side} pattern has no change")


def _redundant_rule_template(name: str, port: PortKey,
                             profiles: dict[str, dict[PortKey, PortState]]) -> ScenarioTemplate:
    open_, closed, filtered = PortState.OPEN, PortState.CLOSED, PortState.FILTERED
    ssh = _tcp(22)
    # The service (and its management port) comes up at the relocated host and
    # goes away at the old one; those are the two valid row shapes. Each
    # affected machine keeps its own background profile.
    valid_new = _pattern_row({port: (closed, open_), ssh: (closed, open_)}, profiles["new"])
    valid_old = _pattern_row({port: (open_, closed), ssh: (open_, closed)}, profiles["old"])
    # A stale forwarding rule exposes the service port on a wrong-subnet host
    # and makes it unreachable at the intended host.
    vuln_wrong_subnet = _pattern_row({port: (closed, open_)}, profiles["wrong"])
    vuln_intended = _pattern_row({port: (open_, filtered)}, profiles["intended"])
    return ScenarioTemplate(
        name=name,
        valid_change=valid_new,
        vulnerable_change=vuln_wrong_subnet,
        valid_variants=(valid_new, valid_old),
        vulnerable_variants=(vuln_wrong_subnet, vuln_intended),
    )


def _missing_firewall_template() -> ScenarioTemplate:
    open_, closed, filtered = PortState.OPEN, PortState.CLOSED, PortState.FILTERED
    web = _tcp(80)
    # Correct update: the firewalled subnet exposes only the web server.
    valid = {key: StateChangeLabel(filtered, filtered) for key in UNIVERSE}
    valid[web] = StateChangeLabel(filtered, open_)
    # Missing firewall: every port of a subnet host becomes reachable; the
    # intended server port is simply closed there (no service behind it).
    vulnerable = {key: StateChangeLabel(filtered, open_) for key in UNIVERSE}
    vulnerable[web] = StateChangeLabel(filtered, closed)
    return ScenarioTemplate(
        name="MissingFirewall",
        valid_change=valid,
        vulnerable_change=vulnerable,
        valid_variants=(valid,),
        vulnerable_variants=(vulnerable,),
    )


def scenario_templates() -> list[ScenarioTemplate]:
    """The four reference scenarios.

    Every affected machine carries a distinct background profile (disjoint
    from the ports its pattern changes), as distinct machines would; without
    that, a relocated service is indistinguishable from the pair of hosts
    that lost and gained it.
    """
    open_, filtered = PortState.OPEN, PortState.FILTERED
    return [
        _redundant_rule_template("RedundantRuleNTP123", _udp(123), {
            "new": {_udp(161): open_},
            "old": {_udp(514): open_},
            "wrong": {_tcp(3306): open_},
            "intended": {_tcp(25): open_, _udp(53): filtered},
        }),
        _redundant_rule_template("RedundantRuleSMB445", _tcp(445), {
            "new": {_tcp(139): open_},
            "old": {_tcp(3389): open_},
            "wrong": {_tcp(5432): open_},
            "intended": {_tcp(80): open_, _udp(53): filtered},
        }),
        _redundant_rule_template("RedundantRuleHTTP8080", _tcp(8080), {
            "new": {_tcp(443): open_},
            "old": {_tcp(8443): open_},
            "wrong": {_tcp(993): open_},
            "intended": {_tcp(21): open_, _udp(53): filtered},
        }),
        _missing_firewall_template(),
    ]


class DatasetKind(str, Enum):
    SYNTHETIC = "synthetic"
    REAL = "real"
    REALISTIC = "realistic"


_DEFAULT_VALID_COUNT = {
    DatasetKind.SYNTHETIC: 72,
    DatasetKind.REAL: 10,
    DatasetKind.REALISTIC: 100,
}


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind
    vulnerable_count: int
    total: int = 405
    valid_change_count: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.valid_change_count is None:
            object.__setattr__(self, "valid_change_count", _DEFAULT_VALID_COUNT[self.kind])
        if self.vulnerable_count < 0 or self.valid_change_count < 0:
            raise GenerationError("counts must be non-negative")
        if self.vulnerable_count + self.valid_change_count > self.total:
            raise GenerationError("vulnerable + valid changes exceed the dataset size")


def _sample_change_count(rng: np.random.Generator) -> int:
    while True:
        m = int(rng.geometric(1.0 / CHANGES_PER_DAY_MEAN))
        if m <= CHANGES_PER_DAY_MAX:
            return m


def _profile_signature(row: dict[PortKey, StateChangeLabel]) -> tuple:
    return tuple((label.from_state.value, label.to_state.value) for _, label in sorted(row.items()))


def _random_profile(rng: np.random.Generator) -> dict[PortKey, PortState]:
    n_open = int(rng.integers(1, 9))
    picks = rng.choice(len(UNIVERSE), size=n_open, replace=False)
    profile = {}
    for idx in np.sort(picks):
        state = PortState.OPEN if rng.integers(2) == 0 else PortState.FILTERED
        profile[UNIVERSE[int(idx)]] = state
    return profile


def _side_signature(row: dict[PortKey, StateChangeLabel], side: str) -> tuple:
    """The not-closed port profile of one side of a row; what the matcher sees."""
    picker = (lambda l: l.from_state) if side == "from" else (lambda l: l.to_state)
    return tuple(
        (key.token, picker(label).value)
        for key, label in sorted(row.items())
        if picker(label) != PortState.CLOSED
    )


def _scenario_side_signatures() -> set[tuple]:
    signatures = set()
    for template in scenario_templates():
        for row in (*template.valid_variants, *template.vulnerable_variants):
            signatures.add(_side_signature(row, "from"))
            signatures.add(_side_signature(row, "to"))
    return signatures


_pool_cache: list[dict[PortKey, StateChangeLabel]] | None = None


def shodan_style_change_pool() -> list[dict[PortKey, StateChangeLabel]]:
    """Fixed pool of distinct valid-change rows following the day profile.

    One pool is shared by every real/realistic dataset, mirroring sampling
    from a single observed change history. No pool row may present the same
    not-closed port profile as any other row side (pool or scenario): a host
    that looks exactly like another host's before/after snapshot would make
    address mutations unresolvable in principle.
    """
    global _pool_cache
    if _pool_cache is not None:
        return _pool_cache
    rng = rng_for(_POOL_SEED, STREAM_DATAGEN)
    pool: list[dict[PortKey, StateChangeLabel]] = []
    taken_sides = _scenario_side_signatures()
    while len(pool) < _POOL_SIZE:
        base = _random_profile(rng)
        m = _sample_change_count(rng)
        changed = rng.choice(len(UNIVERSE), size=m, replace=False)
        changes = {}
        for idx in np.sort(changed):
            key = UNIVERSE[int(idx)]
            before = base.get(key, PortState.CLOSED)
            after = PortState.CLOSED if before != PortState.CLOSED else PortState.OPEN
            changes[key] = (before, after)
        row = _pattern_row(changes, base)
        sides = {_side_signature(row, "from"), _side_signature(row, "to")}
        if len(sides) < 2 or sides & taken_sides:
            continue
        taken_sides |= sides
        pool.append(row)
    _pool_cache = pool
    return pool


def _ip_allocator():
    counter = 0

    def next_ip() -> str:
        nonlocal counter
        counter += 1
        return f"10.{counter // 65536 % 256}.{counter // 256 % 256}.{counter % 256}"

    return next_ip


def _mac_allocator(prefix: str = "02:00:00"):
    counter = 0

    def next_mac() -> str:
        nonlocal counter
        counter += 1
        return f"{prefix}:{counter // 65536 % 256:02X}:{counter // 256 % 256:02X}:{counter % 256:02X}"

    return next_mac


def generate(spec: DatasetSpec,
             templates: list[ScenarioTemplate] | None = None) -> list[NscrEntry]:
    """Generate a ground-truth labeled report per the dataset spec.

    Template-derived rows are copied with fresh unique addresses; the
    remainder is filled with no-change rows whose port profiles are unique
    across the dataset. Entry order is shuffled with the seed.
    """
    templates = templates if templates is not None else scenario_templates()
    rng = rng_for(spec.seed, STREAM_DATAGEN)
    next_ip = _ip_allocator()
    next_mac = _mac_allocator()

    if spec.kind is DatasetKind.SYNTHETIC:
        valid_shapes = [row for t in templates if t.valid_variants
                        for row in (t.valid_variants if t.name != "MissingFirewall" else ())]
        if not valid_shapes:
            raise GenerationError("no valid-change shapes available")
    else:
        valid_shapes = shodan_style_change_pool()
    vulnerable_shapes = [row for t in templates for row in t.vulnerable_variants]
    if spec.vulnerable_count > 0 and not vulnerable_shapes:
        raise GenerationError("no vulnerable shapes available")

    rows: list[tuple[dict[PortKey, StateChangeLabel], bool]] = []
    for i in range(spec.valid_change_count):
        if spec.kind is DatasetKind.SYNTHETIC:
            shape = valid_shapes[i % len(valid_shapes)]
        else:
            shape = valid_shapes[int(rng.integers(len(valid_shapes)))]
        rows.append((shape, False))
    for i in range(spec.vulnerable_count):
        rows.append((vulnerable_shapes[i % len(vulnerable_shapes)], True))

    seen_profiles: set[tuple] = set()
    filler = spec.total - len(rows)
    for _ in range(filler):
        while True:
            row = _identity_row(_random_profile(rng))
            signature = _profile_signature(row)
            if signature not in seen_profiles:
                seen_profiles.add(signature)
                break
        rows.append((row, False))

    entries = []
    for shape, vulnerable in rows:
        ip = next_ip()
        entries.append(NscrEntry(
            ip_initial=ip,
            ip_updated=ip,
            mac=next_mac(),
            changes=dict(shape),
            vulnerable=vulnerable,
        ))
    order = rng.permutation(len(entries))
    return [entries[int(i)] for i in order]


def nscr_to_scan_pair(entries: list[NscrEntry],
                      labels: tuple[str, str] = ("initial", "updated")) -> tuple[ScanDataset, ScanDataset]:
    """Scan pair whose diff is exactly the given report (generated data only)."""
    universe = nscr_universe(entries)
    before_hosts = []
    after_hosts = []
    for entry in entries:
        if entry.ip_initial is None or entry.ip_updated is None:
            raise GenerationError("scan pairs need both sides of every entry")
        before_hosts.append(HostScan(
            ip=entry.ip_initial, mac=entry.mac,
            ports={key: entry.changes[key].from_state for key in universe},
        ))
        after_hosts.append(HostScan(
            ip=entry.ip_updated, mac=entry.mac,
            ports={key: entry.changes[key].to_state for key in universe},
        ))
    return (
        ScanDataset(entries=before_hosts, label=labels[0], port_universe=list(universe)),
        ScanDataset(entries=after_hosts, label=labels[1], port_universe=list(universe)),
    )


@dataclass
class AddressMutation:
    """A mutated scan pair plus the ground-truth correspondence."""

    initial: ScanDataset
    updated: ScanDataset
    ip_map: dict[str, str]
    mac_map: dict[str, str]
    correspondence: dict[str, str]


def _port_identifiable(initial: ScanDataset, updated: ScanDataset) -> list[int]:
    """Updated-side indices whose self port score strictly dominates every cross score.

    Such hosts stay re-identifiable through their ports alone; for any other
    host no matcher could pin down the correspondence once both addresses
    change, so ground truth would be ill-defined.
    """
    from .matching import port_score_matrix

    order = {host.ip: i for i, host in enumerate(initial.entries)}
    scores = port_score_matrix(initial, updated)
    eligible = []
    for j, host in enumerate(updated.entries):
        i = order[host.ip]
        self_score = scores[i, j]
        row = np.delete(scores[i, :], j)
        col = np.delete(scores[:, j], i)
        if (row < self_score).all() and (col < self_score).all():
            eligible.append(j)
    return eligible


def mutate_addresses(initial: ScanDataset, updated: ScanDataset,
                     n_ip: int, n_mac: int = 0, both: bool = False,
                     seed: int = 0) -> AddressMutation:
    """Reassign addresses on the updated side of a scan pair.

    Without ``both``, two disjoint host samples get a fresh IP and a fresh MAC
    respectively. With ``both``, one sample of ``n_ip`` hosts gets both; that
    sample is restricted to hosts that remain identifiable through their port
    signature alone.
    """
    n = len(updated.entries)
    rng = rng_for(seed, STREAM_MUTATE)
    by_ip = {host.ip: host for host in initial.entries}
    missing = [host.ip for host in updated.entries if host.ip not in by_ip]
    if missing:
        raise GenerationError(f"updated hosts without initial counterpart: {missing[:3]}")

    if both:
        eligible = _port_identifiable(initial, updated)
        if n_ip > len(eligible):
            raise GenerationError(
                f"cannot mutate {n_ip} hosts: only {len(eligible)} port-distinguishable hosts"
            )
        picks = rng.choice(len(eligible), size=n_ip, replace=False)
        ip_targets = {eligible[int(i)] for i in picks}
        mac_targets = set(ip_targets)
    else:
        if n_ip + n_mac > n:
            raise GenerationError("sample larger than the host population")
        picks = rng.choice(n, size=n_ip + n_mac, replace=False)
        ip_targets = {int(i) for i in picks[:n_ip]}
        mac_targets = {int(i) for i in picks[n_ip:]}

    used_ips = {h.ip for h in initial.entries} | {h.ip for h in updated.entries}
    ip_counter = 0

    def fresh_ip() -> str:
        nonlocal ip_counter
        while True:
            ip_counter += 1
            candidate = f"172.16.{ip_counter // 256 % 256}.{ip_counter % 256}"
            if candidate not in used_ips:
                used_ips.add(candidate)
                return candidate

    next_mac = _mac_allocator(prefix="06:00:00")

    ip_map: dict[str, str] = {}
    mac_map: dict[str, str] = {}
    mutated = []
    for i, host in enumerate(updated.entries):
        ip = host.ip
        mac = host.mac
        if i in ip_targets:
            ip_map[host.ip] = ip = fresh_ip()
        if i in mac_targets:
            mac_map[host.ip] = mac = next_mac()
        mutated.append(HostScan(ip=ip, mac=mac, ports=dict(host.ports)))
    correspondence = {host.ip: ip_map.get(host.ip, host.ip) for host in updated.entries}
    mutated_ds = ScanDataset(entries=mutated, label=updated.label,
                             port_universe=list(updated.port_universe))
    return AddressMutation(
        initial=initial, updated=mutated_ds,
        ip_map=ip_map, mac_map=mac_map, correspondence=correspondence,
    )


def expected_nscr_after_mutation(entries: list[NscrEntry],
                                 mutation: AddressMutation) -> list[NscrEntry]:
    """The ground-truth report for a mutated pair, in canonical row order."""
    adjusted = []
    for entry in entries:
        new_ip = mutation.ip_map.get(entry.ip_updated, entry.ip_updated)
        new_mac = mutation.mac_map.get(entry.ip_updated, entry.mac)
        adjusted.append(replace(entry, ip_updated=new_ip, mac=new_mac))
    adjusted.sort(key=lambda e: (e.ip_initial or "", e.ip_updated or ""))
    return adjusted


def _scan_to_xml(ds: ScanDataset) -> str:
    root = ET.Element("nmaprun", scanner="nmap")
    for host in ds.entries:
        host_el = ET.SubElement(root, "host")
        ET.SubElement(host_el, "status", state="up")
        ET.SubElement(host_el, "address", addr=host.ip, addrtype="ipv4")
        if host.mac:
            ET.SubElement(host_el, "address", addr=host.mac, addrtype="mac")
        ports_el = ET.SubElement(host_el, "ports")
        listed = 0
        for key in ds.port_universe:
            state = host.state_of(key)
            if state is PortState.CLOSED:
                continue
            listed += 1
            port_el = ET.SubElement(ports_el, "port",
                                    protocol=key.protocol.value, portid=str(key.number))
            token = "open|filtered" if state is PortState.OPEN_FILTERED else state.value.lower()
            ET.SubElement(port_el, "state", state=token)
        unlisted = len(ds.port_universe) - listed
        if unlisted:
            ET.SubElement(ports_el, "extraports", state="closed", count=str(unlisted))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def _fixture_scan_triplet(template: ScenarioTemplate, subnet: int
                          ) -> tuple[ScanDataset, ScanDataset, ScanDataset]:
    variants = list(template.valid_variants) + list(template.vulnerable_variants)
    n_valid = len(template.valid_variants)
    before, valid_after, vuln_after = [], [], []
    for i, row in enumerate(variants):
        ip = f"10.9.{subnet}.{i + 1}"
        mac = f"02:09:00:00:{subnet:02X}:{i + 1:02X}"
        from_ports = {key: label.from_state for key, label in row.items()}
        to_ports = {key: label.to_state for key, label in row.items()}
        before.append(HostScan(ip=ip, mac=mac, ports=dict(from_ports)))
        valid_after.append(HostScan(ip=ip, mac=mac,
                                    ports=to_ports if i < n_valid else dict(from_ports)))
        vuln_after.append(HostScan(ip=ip, mac=mac,
                                   ports=to_ports if i >= n_valid else dict(from_ports)))
    bystander_ports = {key: _BASE_PROFILE.get(key, PortState.CLOSED) for key in UNIVERSE}
    for bucket in (before, valid_after, vuln_after):
        bucket.append(HostScan(ip=f"10.9.{subnet}.100", mac=f"02:09:00:00:{subnet:02X}:64",
                               ports=dict(bystander_ports)))
    universe = list(UNIVERSE)
    return (
        ScanDataset(entries=before, label="initial", port_universe=universe),
        ScanDataset(entries=valid_after, label="updated-valid", port_universe=universe),
        ScanDataset(entries=vuln_after, label="updated-vulnerable", port_universe=universe),
    )


def worked_example_pair() -> tuple[ScanDataset, ScanDataset]:
    """A small relocation example: two hosts change IP, one host is added."""
    universe = sorted([_tcp(22), _tcp(445), _tcp(8080)])

    def host(ip: str, mac: str, open_ports: list[PortKey]) -> HostScan:
        return HostScan(ip=ip, mac=mac, ports={
            key: PortState.OPEN if key in open_ports else PortState.CLOSED
            for key in universe
        })

    smb_mac, web_mac, new_mac = "02:0A:00:00:00:01", "02:0A:00:00:00:02", "02:0A:00:00:00:03"
    initial = ScanDataset(entries=[
        host("10.0.1.12", smb_mac, [_tcp(445)]),
        host("10.0.1.11", web_mac, [_tcp(8080)]),
    ], label="initial", port_universe=universe)
    updated = ScanDataset(entries=[
        host("10.0.2.10", smb_mac, [_tcp(445)]),
        host("10.0.1.111", web_mac, [_tcp(8080)]),
        host("10.0.1.12", new_mac, [_tcp(22)]),
    ], label="updated", port_universe=universe)
    return initial, updated


def scenario_fixtures(out_dir: str | Path) -> list[Path]:
    """Write the scenario scan fixtures (XML) plus template metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    meta = []
    for subnet, template in enumerate(scenario_templates(), start=1):
        before, valid_after, vuln_after = _fixture_scan_triplet(template, subnet)
        for suffix, ds in (("initial", before), ("updated_valid", valid_after),
                           ("updated_vulnerable", vuln_after)):
            path = out / f"{template.name}_{suffix}.xml"
            path.write_text(_scan_to_xml(ds), encoding="utf-8")
            written.append(path)
        meta.append({
            "name": template.name,
            "valid_changed_ports": sorted(
                key.token for key, label in template.valid_change.items() if not label.unchanged
            ),
            "vulnerable_changed_ports": sorted(
                key.token for key, label in template.vulnerable_change.items() if not label.unchanged
            ),
            "note": "label patterns are illustrative reconstructions of the scenario semantics",
        })
    initial, updated = worked_example_pair()
    for suffix, ds in (("initial", initial), ("updated", updated)):
        path = out / f"worked_example_{suffix}.xml"
        path.write_text(_scan_to_xml(ds), encoding="utf-8")
        written.append(path)
    meta_path = out / "templates.json"
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    written.append(meta_path)
    return written
