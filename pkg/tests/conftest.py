from __future__ import annotations

import pytest

from portdrift.matching import NscrEntry, StateChangeLabel
from portdrift.scans import HostScan, PortKey, PortState, Protocol, ScanDataset


def tcp(number: int) -> PortKey:
    return PortKey(Protocol.TCP, number)


def udp(number: int) -> PortKey:
    return PortKey(Protocol.UDP, number)


def host(ip: str, mac: str | None = None, **ports: str) -> HostScan:
    """Host with ports given as tcp_445='Open' keyword tokens."""
    parsed = {PortKey.from_token(token): PortState(state) for token, state in ports.items()}
    return HostScan(ip=ip, mac=mac, ports=parsed)


def dataset(*hosts: HostScan, label: str = "") -> ScanDataset:
    return ScanDataset.build(entries=list(hosts), label=label)


def label(token: str) -> StateChangeLabel:
    return StateChangeLabel.from_token(token)


def entry(ip_initial: str | None, ip_updated: str | None, mac: str | None = None,
          vulnerable: bool | None = None, **changes: str) -> NscrEntry:
    parsed = {PortKey.from_token(token): label(change) for token, change in changes.items()}
    return NscrEntry(ip_initial=ip_initial, ip_updated=ip_updated, mac=mac,
                     changes=parsed, vulnerable=vulnerable)


@pytest.fixture
def smb_example():
    """Initial/updated pair where the SMB host keeps its MAC but changes IP,
    and a new host reuses the SMB host's old IP."""
    initial = dataset(
        host("10.0.1.12", mac="02:00:00:00:00:01", tcp_445="Open", tcp_22="Closed"),
        label="initial",
    )
    updated = dataset(
        host("10.0.2.10", mac="02:00:00:00:00:01", tcp_445="Open", tcp_22="Closed"),
        host("10.0.1.12", mac="02:00:00:00:00:02", tcp_445="Closed", tcp_22="Open"),
        label="updated",
    )
    return initial, updated
