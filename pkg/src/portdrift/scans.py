"""Scan observations: domain types plus NMAP-XML and CSV ingestion."""
from __future__ import annotations

import csv
import io
import ipaddress
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

logger = logging.getLogger(__name__)

_MAC_RE = re.compile(r"^([0-9A-Fa-f]{2}:){5}[0-9A-Fa-f]{2}$")


class ScanDataError(ValueError):
    """Scan content violates a dataset invariant (duplicate IP, bad address, ...)."""


class ScanParseError(ScanDataError):
    """Scanner XML is not well formed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 byte_offset: int | None = None):
        super().__init__(message)
        self.line = line
        self.column = column
        self.byte_offset = byte_offset


class UnsupportedStateError(ScanDataError):
    """Scanner reported a port state outside the supported set."""


class Protocol(str, Enum):
    TCP = "tcp"
    UDP = "udp"


class PortState(Enum):
    """The four observable port states of a TCP SYN / UDP scan."""

    OPEN = "Open"
    CLOSED = "Closed"
    FILTERED = "Filtered"
    OPEN_FILTERED = "OpenFiltered"


# Index order is load bearing: one-hot label columns are derived from it.
PORT_STATES: tuple[PortState, ...] = (
    PortState.OPEN,
    PortState.CLOSED,
    PortState.FILTERED,
    PortState.OPEN_FILTERED,
)

_STRICT_STATE_TOKENS = {
    "open": PortState.OPEN,
    "closed": PortState.CLOSED,
    "filtered": PortState.FILTERED,
    "open|filtered": PortState.OPEN_FILTERED,
}

# Tokens NMAP can emit with scan types beyond TCP SYN / UDP; mapped only in
# lenient mode, to the closest supported state.
_LENIENT_STATE_TOKENS = {
    "closed|filtered": PortState.FILTERED,
    "unfiltered": PortState.FILTERED,
}


def canonical_port_state(raw: str, strict: bool = True) -> PortState:
    """Map a scanner state token to a PortState.

    Strict mode admits only the four canonical tokens; lenient mode also folds
    "closed|filtered" and "unfiltered" into Filtered.
    """
    token = raw.strip().lower()
    if token in _STRICT_STATE_TOKENS:
        return _STRICT_STATE_TOKENS[token]
    if not strict and token in _LENIENT_STATE_TOKENS:
        return _LENIENT_STATE_TOKENS[token]
    raise UnsupportedStateError(f"unsupported port state {raw!r}")


@dataclass(frozen=True, order=True)
class PortKey:
    """A (protocol, port number) pair, e.g. tcp/445."""

    protocol: Protocol
    number: int

    def __post_init__(self) -> None:
        if not 1 <= self.number <= 65535:
            raise ScanDataError(f"port number out of range: {self.number}")

    @property
    def token(self) -> str:
        return f"{self.protocol.value}_{self.number}"

    @classmethod
    def from_token(cls, token: str) -> PortKey:
        try:
            proto, num = token.split("_", 1)
            return cls(Protocol(proto), int(num))
        except (ValueError, KeyError) as exc:
            raise ScanDataError(f"bad port column {token!r}") from exc


def canonical_mac(raw: str) -> str:
    """Validate and uppercase a colon-separated MAC address."""
    if not _MAC_RE.match(raw):
        raise ScanDataError(f"invalid MAC address {raw!r}")
    return raw.upper()


def _validate_ip(raw: str) -> str:
    try:
        ipaddress.IPv4Address(raw)
    except ipaddress.AddressValueError as exc:
        raise ScanDataError(f"invalid IPv4 address {raw!r}") from exc
    return raw


@dataclass
class HostScan:
    """One host's observation in one configuration."""

    ip: str
    mac: str | None = None
    ports: dict[PortKey, PortState] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _validate_ip(self.ip)
        if self.mac is not None:
            self.mac = canonical_mac(self.mac)

    def state_of(self, key: PortKey, default: PortState = PortState.CLOSED) -> PortState:
        return self.ports.get(key, default)


@dataclass
class ScanDataset:
    """All host observations of one scan, with the shared port universe."""

    entries: list[HostScan]
    label: str = ""
    port_universe: list[PortKey] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for entry in self.entries:
            if entry.ip in seen:
                raise ScanDataError(f"duplicate IPv4 address {entry.ip}")
            seen.add(entry.ip)
        universe = set(self.port_universe)
        for entry in self.entries:
            missing = set(entry.ports) - universe
            if missing:
                raise ScanDataError(
                    f"host {entry.ip} lists ports outside the universe: {sorted(missing)}"
                )
        if self.port_universe != sorted(self.port_universe):
            raise ScanDataError("port universe must be sorted by (protocol, number)")

    @classmethod
    def build(cls, entries: list[HostScan], label: str = "") -> ScanDataset:
        universe = sorted({key for entry in entries for key in entry.ports})
        return cls(entries=entries, label=label, port_universe=universe)

    def host_by_ip(self, ip: str) -> HostScan | None:
        for entry in self.entries:
            if entry.ip == ip:
                return entry
        return None


def _byte_offset(text: str, line: int, column: int) -> int:
    lines = text.encode().splitlines(keepends=True)
    return sum(len(ln) for ln in lines[: line - 1]) + column


def ingest_scan(
    xml_document: str,
    default_state: PortState = PortState.CLOSED,
    strict: bool = True,
    label: str = "",
) -> ScanDataset:
    """Parse NMAP XML output into a ScanDataset.

    Listed ports take their listed state. Universe ports a host does not list
    take the host's ``extraports`` state when present, otherwise
    ``default_state``. Hosts reported down are skipped with a warning.
    """
    try:
        root = ET.fromstring(xml_document)
    except ET.ParseError as exc:
        line, column = exc.position
        raise ScanParseError(
            f"malformed scan XML: {exc}",
            line=line,
            column=column,
            byte_offset=_byte_offset(xml_document, line, column),
        ) from exc

    raw_hosts: list[tuple[HostScan, PortState | None]] = []
    for host_el in root.iter("host"):
        status = host_el.find("status")
        if status is not None and status.get("state") != "up":
            addr = host_el.find("address[@addrtype='ipv4']")
            logger.warning(
                "skipping host %s reported %s",
                addr.get("addr") if addr is not None else "<no address>",
                status.get("state"),
            )
            continue

        ip_el = host_el.find("address[@addrtype='ipv4']")
        if ip_el is None or not ip_el.get("addr"):
            raise ScanDataError("host element without an ipv4 address")
        mac_el = host_el.find("address[@addrtype='mac']")
        mac = mac_el.get("addr") if mac_el is not None else None

        ports: dict[PortKey, PortState] = {}
        extra_state: PortState | None = None
        extra_count = -1
        ports_el = host_el.find("ports")
        if ports_el is not None:
            for extra in ports_el.findall("extraports"):
                count = int(extra.get("count", "0"))
                if count > extra_count:
                    extra_count = count
                    extra_state = canonical_port_state(extra.get("state", ""), strict=strict)
            for port_el in ports_el.findall("port"):
                proto_raw = port_el.get("protocol", "")
                try:
                    proto = Protocol(proto_raw)
                except ValueError:
                    if strict:
                        raise ScanDataError(f"unsupported protocol {proto_raw!r}") from None
                    logger.warning("skipping port with protocol %r", proto_raw)
                    continue
                key = PortKey(proto, int(port_el.get("portid", "0")))
                state_el = port_el.find("state")
                if state_el is None:
                    raise ScanDataError(f"port {key.token} without a state element")
                if key in ports:
                    raise ScanDataError(f"duplicate port {key.token} for host {ip_el.get('addr')}")
                ports[key] = canonical_port_state(state_el.get("state", ""), strict=strict)

        raw_hosts.append((HostScan(ip=ip_el.get("addr", ""), mac=mac, ports=ports), extra_state))

    universe = sorted({key for host, _ in raw_hosts for key in host.ports})
    entries: list[HostScan] = []
    for host, extra_state in raw_hosts:
        fill = extra_state if extra_state is not None else default_state
        for key in universe:
            host.ports.setdefault(key, fill)
        host.ports = {key: host.ports[key] for key in universe}
        entries.append(host)
    return ScanDataset(entries=entries, label=label, port_universe=universe)


def dataset_to_csv_text(ds: ScanDataset) -> str:
    """Serialize a dataset to the canonical CSV format (leading #label comment)."""
    buf = io.StringIO()
    if ds.label:
        buf.write(f"#label={ds.label}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ip", "mac"] + [key.token for key in ds.port_universe])
    for entry in ds.entries:
        row = [entry.ip, entry.mac or ""]
        row += [entry.state_of(key).value for key in ds.port_universe]
        writer.writerow(row)
    return buf.getvalue()


def write_dataset(ds: ScanDataset, path: str | Path) -> None:
    Path(path).write_text(dataset_to_csv_text(ds), encoding="utf-8")


def dataset_from_csv_text(text: str) -> ScanDataset:
    label = ""
    lines = text.splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        if lines[start].startswith("#label="):
            label = lines[start][len("#label="):]
        start += 1
    reader = csv.reader(lines[start:])
    try:
        header = next(reader)
    except StopIteration:
        raise ScanDataError("empty dataset file") from None
    if header[:2] != ["ip", "mac"]:
        raise ScanDataError("dataset CSV must start with ip,mac columns")
    universe = [PortKey.from_token(token) for token in header[2:]]
    entries = []
    for row in reader:
        if not row:
            continue
        if len(row) != len(header):
            raise ScanDataError(f"row for {row[0]!r} has {len(row)} cells, expected {len(header)}")
        ports = {}
        for key, cell in zip(universe, row[2:]):
            try:
                ports[key] = PortState(cell)
            except ValueError:
                raise UnsupportedStateError(f"unsupported port state {cell!r}") from None
        entries.append(HostScan(ip=row[0], mac=row[1] or None, ports=ports))
    return ScanDataset(entries=entries, label=label, port_universe=universe)


def read_dataset(path: str | Path) -> ScanDataset:
    return dataset_from_csv_text(Path(path).read_text(encoding="utf-8"))
