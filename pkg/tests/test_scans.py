from __future__ import annotations

import logging

import pytest

from portdrift.datagen import DatasetKind, DatasetSpec, generate, nscr_to_scan_pair
from portdrift.scans import (
    HostScan,
    PortKey,
    PortState,
    Protocol,
    ScanDataError,
    ScanDataset,
    ScanParseError,
    UnsupportedStateError,
    canonical_mac,
    canonical_port_state,
    dataset_from_csv_text,
    dataset_to_csv_text,
    ingest_scan,
    read_dataset,
    write_dataset,
)

from conftest import dataset, host, tcp, udp


def scan_xml(body: str) -> str:
    return f'<?xml version="1.0"?>\n<nmaprun scanner="nmap">{body}</nmaprun>'


def host_xml(ip: str, ports: str, mac: str | None = None, state: str = "up",
             extraports: str = "") -> str:
    mac_el = f'<address addr="{mac}" addrtype="mac"/>' if mac else ""
    return (
        f'<host><status state="{state}"/>'
        f'<address addr="{ip}" addrtype="ipv4"/>{mac_el}'
        f"<ports>{extraports}{ports}</ports></host>"
    )


def port_xml(proto: str, number: int, state: str) -> str:
    return f'<port protocol="{proto}" portid="{number}"><state state="{state}"/></port>'


class TestCanonicalPortState:
    @pytest.mark.parametrize("token,expected", [
        ("open", PortState.OPEN),
        ("closed", PortState.CLOSED),
        ("filtered", PortState.FILTERED),
        ("open|filtered", PortState.OPEN_FILTERED),
    ])
    def test_strict_tokens(self, token, expected):
        assert canonical_port_state(token) is expected

    def test_lenient_folds_into_filtered(self):
        assert canonical_port_state("closed|filtered", strict=False) is PortState.FILTERED
        assert canonical_port_state("unfiltered", strict=False) is PortState.FILTERED

    def test_strict_rejects_unknown_token(self):
        with pytest.raises(UnsupportedStateError, match="closed|filtered"):
            canonical_port_state("closed|filtered")

    def test_lenient_round_trip_stays_in_four_states(self):
        for token in ("open", "closed", "filtered", "open|filtered",
                      "closed|filtered", "unfiltered"):
            state = canonical_port_state(token, strict=False)
            assert state in set(PortState)


class TestIngest:
    def test_single_host_with_open_smb_port(self):
        xml = scan_xml(host_xml("10.0.1.12", port_xml("tcp", 445, "open")))
        ds = ingest_scan(xml)
        assert len(ds.entries) == 1
        assert ds.entries[0].ip == "10.0.1.12"
        assert ds.entries[0].ports[tcp(445)] is PortState.OPEN

    def test_empty_hosts_list(self):
        ds = ingest_scan(scan_xml(""))
        assert ds.entries == []
        assert ds.port_universe == []

    def test_extraports_state_fills_unlisted_universe_ports(self):
        # Hand-built three-port universe: the second host summarizes
        # everything it does not list with extraports state=filtered.
        xml = scan_xml(
            host_xml("10.0.0.1",
                     port_xml("tcp", 22, "open") + port_xml("tcp", 80, "open")
                     + port_xml("udp", 53, "open"))
            + host_xml("10.0.0.2", port_xml("tcp", 80, "closed"),
                       extraports='<extraports state="filtered" count="998"/>')
        )
        ds = ingest_scan(xml)
        second = ds.entries[1]
        assert second.state_of(tcp(80)) is PortState.CLOSED
        assert second.state_of(tcp(22)) is PortState.FILTERED
        assert second.state_of(udp(53)) is PortState.FILTERED

    def test_default_state_fills_unlisted_ports_without_extraports(self):
        xml = scan_xml(
            host_xml("10.0.0.1", port_xml("tcp", 22, "open") + port_xml("tcp", 80, "open"))
            + host_xml("10.0.0.2", port_xml("tcp", 80, "closed"))
        )
        ds = ingest_scan(xml, default_state=PortState.OPEN_FILTERED)
        assert ds.entries[1].state_of(tcp(22)) is PortState.OPEN_FILTERED

    def test_malformed_xml_reports_position(self):
        with pytest.raises(ScanParseError) as err:
            ingest_scan("<nmaprun><host></nmaprun>")
        assert err.value.byte_offset is not None
        assert err.value.line == 1

    def test_duplicate_ip_is_a_data_error(self):
        xml = scan_xml(
            host_xml("10.0.0.1", port_xml("tcp", 22, "open"))
            + host_xml("10.0.0.1", port_xml("tcp", 80, "open"))
        )
        with pytest.raises(ScanDataError, match="duplicate"):
            ingest_scan(xml)

    def test_unknown_state_names_the_token(self):
        xml = scan_xml(host_xml("10.0.0.1", port_xml("tcp", 22, "bogus")))
        with pytest.raises(UnsupportedStateError, match="bogus"):
            ingest_scan(xml)

    def test_down_hosts_are_skipped_with_warning(self, caplog):
        xml = scan_xml(
            host_xml("10.0.0.1", port_xml("tcp", 22, "open"))
            + host_xml("10.0.0.2", "", state="down")
        )
        with caplog.at_level(logging.WARNING):
            ds = ingest_scan(xml)
        assert [h.ip for h in ds.entries] == ["10.0.0.1"]
        assert "down" in caplog.text

    def test_mac_is_canonicalized_uppercase(self):
        xml = scan_xml(host_xml("10.0.0.1", port_xml("tcp", 22, "open"),
                                mac="aa:bb:cc:dd:ee:ff"))
        ds = ingest_scan(xml)
        assert ds.entries[0].mac == "AA:BB:CC:DD:EE:FF"

    def test_deterministic_given_same_bytes(self):
        xml = scan_xml(
            host_xml("10.0.0.1", port_xml("tcp", 22, "open"), mac="aa:00:00:00:00:01")
            + host_xml("10.0.0.2", port_xml("udp", 53, "open|filtered"))
        )
        assert ingest_scan(xml) == ingest_scan(xml)


class TestTypes:
    def test_port_key_range(self):
        with pytest.raises(ScanDataError):
            PortKey(Protocol.TCP, 0)
        with pytest.raises(ScanDataError):
            PortKey(Protocol.UDP, 65536)

    def test_port_key_token_round_trip(self):
        key = tcp(445)
        assert PortKey.from_token(key.token) == key

    def test_invalid_ip_rejected(self):
        with pytest.raises(ScanDataError):
            HostScan(ip="999.1.1.1")

    def test_invalid_mac_rejected(self):
        with pytest.raises(ScanDataError):
            canonical_mac("not-a-mac")

    def test_dataset_universe_must_be_sorted(self):
        with pytest.raises(ScanDataError, match="sorted"):
            ScanDataset(entries=[], port_universe=[tcp(80), tcp(22)])

    def test_state_resolution_always_yields_a_state(self):
        h = host("10.0.0.1", tcp_22="Open")
        for key in (tcp(22), tcp(9999), udp(53)):
            assert h.state_of(key) in set(PortState)


class TestCsvRoundTrip:
    def test_round_trip_identity(self):
        ds = dataset(
            host("10.0.0.1", mac="02:00:00:00:00:01", tcp_22="Open", udp_53="OpenFiltered"),
            host("10.0.0.2", tcp_22="Closed", udp_53="Filtered"),
            label="initial",
        )
        assert dataset_from_csv_text(dataset_to_csv_text(ds)) == ds

    def test_round_trip_through_files(self, tmp_path):
        ds = dataset(host("10.0.0.1", tcp_22="Open"), label="updated")
        path = tmp_path / "scan.csv"
        write_dataset(ds, path)
        assert read_dataset(path) == ds

    def test_duplicate_ip_rows_rejected(self):
        text = "ip,mac,tcp_22\n10.0.0.1,,Open\n10.0.0.1,,Closed\n"
        with pytest.raises(ScanDataError, match="duplicate"):
            dataset_from_csv_text(text)

    def test_bad_state_cell_rejected(self):
        text = "ip,mac,tcp_22\n10.0.0.1,,open\n"
        with pytest.raises(UnsupportedStateError):
            dataset_from_csv_text(text)

    def test_generated_dataset_round_trip_preserves_universe(self):
        nscr = generate(DatasetSpec(kind=DatasetKind.SYNTHETIC, vulnerable_count=10, seed=1))
        initial, _ = nscr_to_scan_pair(nscr)
        assert len(initial.entries) == 405
        text = dataset_to_csv_text(initial)
        again = dataset_from_csv_text(text)
        assert again.port_universe == initial.port_universe
        assert again == initial
