from __future__ import annotations

import itertools

import numpy as np
import pytest

from portdrift.matching import (
    ALL_LABELS,
    MatchedPair,
    StateChangeLabel,
    build_nscr,
    greedy_match,
    matching_score,
    nscr_from_csv_text,
    nscr_to_csv_text,
)
from portdrift.scans import PortState, ScanDataset

from conftest import dataset, entry, host, tcp, udp


class TestMatchingScore:
    def test_identical_hosts_score_one(self):
        a = host("10.0.0.1", mac="02:00:00:00:00:01", tcp_445="Open")
        assert matching_score(a, a).total == pytest.approx(1.0)

    def test_same_mac_different_ip(self):
        a = host("10.0.0.1", mac="02:00:00:00:00:01", tcp_445="Open")
        b = host("10.0.0.2", mac="02:00:00:00:00:01", tcp_445="Open")
        assert matching_score(a, b).total == pytest.approx(0.8)

    def test_half_matching_ports(self):
        # ip and mac equal; of the two not-closed ports only one matches:
        # 0.2 + 0.2 + 0.6 * 1/2 = 0.7
        a = host("10.0.0.1", mac="02:00:00:00:00:01", tcp_80="Open", tcp_443="Open")
        b = host("10.0.0.1", mac="02:00:00:00:00:01", tcp_80="Open", tcp_443="Filtered")
        score = matching_score(a, b)
        assert score.score_ports == pytest.approx(0.3)
        assert score.total == pytest.approx(0.7)

    def test_all_closed_ports_score_full_port_component(self):
        a = host("10.0.0.1", tcp_80="Closed")
        b = host("10.0.0.2", tcp_80="Closed")
        assert matching_score(a, b).score_ports == pytest.approx(0.6)

    def test_absent_mac_scores_zero_mac_component(self):
        a = host("10.0.0.1", tcp_80="Open")
        b = host("10.0.0.1", mac="02:00:00:00:00:01", tcp_80="Open")
        assert matching_score(a, b).score_mac == 0.0

    def test_ports_only_considers_not_closed_on_either_side(self):
        a = host("10.0.0.1", tcp_80="Open", tcp_443="Closed", tcp_22="Closed")
        b = host("10.0.0.2", tcp_80="Open", tcp_443="Open", tcp_22="Closed")
        # relevant = {80, 443}; only 80 matches
        assert matching_score(a, b).score_ports == pytest.approx(0.3)

    def test_total_always_within_unit_interval(self):
        a = host("10.0.0.1", tcp_80="Open")
        b = host("10.0.0.2", tcp_80="Filtered")
        score = matching_score(a, b)
        assert 0.0 <= score.total <= 1.0
        assert score.total == pytest.approx(
            score.score_ip + score.score_mac + score.score_ports)


class TestGreedyMatch:
    def test_relocated_host_matched_across_ip_change(self, smb_example):
        initial, updated = smb_example
        pairs = greedy_match(initial, updated)
        by_initial = {p.initial.ip: p for p in pairs if p.initial}
        smb = by_initial["10.0.1.12"]
        assert smb.updated.ip == "10.0.2.10"
        assert smb.score.total == pytest.approx(0.8)
        added = [p for p in pairs if p.initial is None]
        assert len(added) == 1 and added[0].updated.ip == "10.0.1.12"

    def test_identical_datasets_self_match(self):
        ds = dataset(
            host("10.0.0.1", mac="02:00:00:00:00:01", tcp_22="Open"),
            host("10.0.0.2", mac="02:00:00:00:00:02", tcp_80="Open"),
        )
        pairs = greedy_match(ds, ds)
        assert all(p.initial is not None and p.updated is not None for p in pairs)
        assert all(p.initial.ip == p.updated.ip for p in pairs)
        assert all(p.score.total == pytest.approx(1.0) for p in pairs)

    def test_greedy_equals_bruteforce_assignment_on_distinct_signatures(self):
        # Six hosts, fixed unique MACs and distinct port signatures, IPs
        # permuted in the updated scan. The exhaustive maximum-weight
        # assignment over all 6! pairings is the oracle.
        rng = np.random.default_rng(42)
        base_ports = [
            {"tcp_22": "Open"},
            {"tcp_80": "Open", "tcp_443": "Open"},
            {"tcp_445": "Open"},
            {"udp_53": "OpenFiltered"},
            {"tcp_3306": "Open", "tcp_22": "Filtered"},
            {"tcp_8080": "Filtered"},
        ]
        for trial in range(20):
            perm = rng.permutation(6)
            initial = dataset(*[
                host(f"10.0.0.{i+1}", mac=f"02:00:00:00:00:0{i+1}", **ports)
                for i, ports in enumerate(base_ports)
            ])
            updated = dataset(*[
                host(f"10.0.0.{int(perm[i])+1}", mac=f"02:00:00:00:00:0{i+1}", **ports)
                for i, ports in enumerate(base_ports)
            ])
            pairs = greedy_match(initial, updated)
            greedy_total = sum(p.score.total for p in pairs if p.score)
            greedy_map = {p.initial.ip: p.updated.ip for p in pairs if p.initial and p.updated}

            best_total = -1.0
            best_map = None
            for assignment in itertools.permutations(range(6)):
                total = sum(
                    matching_score(initial.entries[i], updated.entries[assignment[i]]).total
                    for i in range(6)
                )
                if total > best_total:
                    best_total = total
                    best_map = {
                        initial.entries[i].ip: updated.entries[assignment[i]].ip
                        for i in range(6)
                    }
            assert greedy_total == pytest.approx(best_total)
            assert greedy_map == best_map

    def test_entry_order_does_not_change_result(self):
        hosts_a = [host(f"10.0.0.{i}", tcp_22="Open" if i % 2 else "Closed",
                        tcp_80="Filtered" if i % 3 else "Open") for i in range(1, 8)]
        initial = dataset(*hosts_a)
        updated = dataset(*[host(h.ip, **{k.token: v.value for k, v in h.ports.items()})
                            for h in hosts_a])
        reference = build_nscr(greedy_match(initial, updated))
        shuffled_initial = ScanDataset(entries=list(reversed(initial.entries)),
                                       label="", port_universe=initial.port_universe)
        shuffled = build_nscr(greedy_match(shuffled_initial, updated))
        assert shuffled == reference

    def test_partial_bijection_over_unequal_datasets(self):
        initial = dataset(
            host("10.0.0.1", tcp_22="Open"),
            host("10.0.0.2", tcp_80="Open"),
            host("10.0.0.3", tcp_443="Open"),
        )
        updated = dataset(host("10.0.0.9", tcp_22="Open"))
        pairs = greedy_match(initial, updated)
        initial_ips = [p.initial.ip for p in pairs if p.initial]
        updated_ips = [p.updated.ip for p in pairs if p.updated]
        assert sorted(initial_ips) == ["10.0.0.1", "10.0.0.2", "10.0.0.3"]
        assert updated_ips == ["10.0.0.9"]
        assert len([p for p in pairs if p.updated and p.initial]) == 1

    def test_zero_score_pairs_still_pair_leftovers(self):
        initial = dataset(host("10.0.0.1", tcp_22="Open"))
        updated = dataset(host("10.0.0.2", tcp_80="Open"))
        pairs = greedy_match(initial, updated)
        assert len(pairs) == 1
        assert pairs[0].initial.ip == "10.0.0.1" and pairs[0].updated.ip == "10.0.0.2"
        assert pairs[0].score.total == pytest.approx(0.0)


class TestLabels:
    def test_sixteen_distinct_labels(self):
        assert len(ALL_LABELS) == 16
        assert len({l.token for l in ALL_LABELS}) == 16

    def test_open_filtered_renders_without_separator(self):
        lbl = StateChangeLabel(PortState.OPEN_FILTERED, PortState.OPEN)
        assert lbl.token == "OpenFilteredToOpen"
        assert StateChangeLabel.from_token("OpenFilteredToOpenFiltered").from_state \
            is PortState.OPEN_FILTERED

    def test_every_token_parses_back(self):
        for lbl in ALL_LABELS:
            assert StateChangeLabel.from_token(lbl.token) == lbl


class TestBuildNscr:
    def test_unchanged_port_labeled_closed_to_closed(self, smb_example):
        initial, updated = smb_example
        entries = build_nscr(greedy_match(initial, updated))
        smb = next(e for e in entries if e.ip_initial == "10.0.1.12")
        assert smb.changes[tcp(445)].token == "OpenToOpen"
        added = next(e for e in entries if e.ip_initial is None)
        assert added.changes[tcp(22)].token == "ClosedToOpen"
        assert added.changes[tcp(445)].token == "ClosedToClosed"

    def test_open_to_closed_label(self):
        initial = dataset(host("10.0.0.1", tcp_445="Open"))
        updated = dataset(host("10.0.0.1", tcp_445="Closed"))
        entries = build_nscr(greedy_match(initial, updated))
        assert entries[0].changes[tcp(445)].token == "OpenToClosed"

    def test_removed_host_labels_end_closed(self):
        initial = dataset(host("10.0.0.1", tcp_22="Open", tcp_80="Filtered"))
        updated = dataset(host("10.0.0.2", tcp_22="Open", tcp_80="Filtered"))
        pairs = [MatchedPair(initial.entries[0], None), MatchedPair(None, updated.entries[0])]
        entries = build_nscr(pairs)
        removed = next(e for e in entries if e.ip_updated is None)
        assert all(lbl.to_state is PortState.CLOSED for lbl in removed.changes.values())
        added = next(e for e in entries if e.ip_initial is None)
        assert all(lbl.from_state is PortState.CLOSED for lbl in added.changes.values())

    def test_rows_cover_merged_universe_and_sorted(self):
        initial = dataset(host("10.0.0.2", tcp_22="Open"))
        updated = dataset(host("10.0.0.1", udp_53="Open"))
        entries = build_nscr(greedy_match(initial, updated))
        for e in entries:
            assert sorted(e.changes) == sorted({tcp(22), udp(53)})
        keys = [(e.ip_initial or "", e.ip_updated or "") for e in entries]
        assert keys == sorted(keys)


class TestNscrCsv:
    def test_round_trip(self):
        entries = [
            entry("10.0.0.1", "10.0.0.9", mac="02:00:00:00:00:01",
                  tcp_22="OpenToClosed", udp_53="ClosedToClosed"),
            entry(None, "10.0.0.2", tcp_22="ClosedToOpen", udp_53="ClosedToClosed"),
        ]
        assert nscr_from_csv_text(nscr_to_csv_text(entries)) == entries

    def test_round_trip_with_ground_truth(self):
        entries = [
            entry("10.0.0.1", "10.0.0.1", vulnerable=True, tcp_22="OpenToFiltered"),
            entry("10.0.0.2", "10.0.0.2", vulnerable=False, tcp_22="ClosedToClosed"),
        ]
        text = nscr_to_csv_text(entries)
        assert "vulnerable" in text.splitlines()[0]
        assert nscr_from_csv_text(text) == entries

    def test_absent_ips_serialize_as_empty(self):
        entries = [entry(None, "10.0.0.2", tcp_22="ClosedToOpen")]
        text = nscr_to_csv_text(entries)
        assert text.splitlines()[1].startswith(",10.0.0.2,")
