from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portdrift.encoding import LABELS_PER_PORT, features_to_csv_text, one_hot, prune
from portdrift.matching import ALL_LABELS, NscrEntry, StateChangeLabel
from portdrift.scans import PORT_STATES, PortKey, PortState, Protocol

from conftest import entry, tcp, udp


def random_entries(n_entries: int, ports: list[PortKey], seed: int) -> list[NscrEntry]:
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n_entries):
        changes = {
            key: ALL_LABELS[int(rng.integers(16))] for key in ports
        }
        entries.append(NscrEntry(ip_initial=f"10.0.0.{i+1}", ip_updated=f"10.0.0.{i+1}",
                                 mac=None, changes=changes))
    return entries


class TestOneHot:
    def test_three_ports_give_48_columns(self):
        entries = random_entries(4, [tcp(22), tcp(80), udp(53)], seed=0)
        fm = one_hot(entries)
        assert fm.rows.shape == (4, 48)
        assert len(fm.columns) == 48

    def test_single_label_sets_single_one(self):
        e = entry("10.0.0.1", "10.0.0.1", tcp_22="ClosedToClosed")
        fm = one_hot([e])
        assert fm.rows.sum() == 1.0
        col = fm.columns[int(np.flatnonzero(fm.rows[0])[0])]
        assert col[0] == tcp(22)
        assert col[1].token == "ClosedToClosed"

    def test_one_label_fires_per_port(self):
        entries = random_entries(6, [tcp(22), udp(53)], seed=1)
        fm = one_hot(entries)
        assert (fm.rows.sum(axis=1) == 2).all()

    def test_rows_differing_in_one_port_differ_in_two_positions(self):
        a = entry("10.0.0.1", "10.0.0.1", tcp_22="OpenToClosed", tcp_80="ClosedToClosed")
        b = entry("10.0.0.2", "10.0.0.2", tcp_22="OpenToFiltered", tcp_80="ClosedToClosed")
        fm = one_hot([a, b])
        assert int((fm.rows[0] != fm.rows[1]).sum()) == 2

    def test_column_order_is_port_then_from_then_to(self):
        entries = random_entries(1, [udp(53), tcp(22)], seed=2)
        fm = one_hot(entries)
        # tcp sorts before udp; label order has from-state outer.
        assert fm.columns[0][0] == tcp(22)
        assert fm.columns[0][1] == StateChangeLabel(PortState.OPEN, PortState.OPEN)
        assert fm.columns[1][1] == StateChangeLabel(PortState.OPEN, PortState.CLOSED)
        assert fm.columns[4][1] == StateChangeLabel(PortState.CLOSED, PortState.OPEN)
        assert fm.columns[16][0] == udp(53)
        assert [s.value for s in PORT_STATES] == ["Open", "Closed", "Filtered", "OpenFiltered"]

    def test_empty_report_rejected(self):
        with pytest.raises(ValueError):
            one_hot([])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_euclidean_distance_is_sqrt_2d(self, seed):
        entries = random_entries(5, [tcp(22), tcp(80), udp(53), udp(123)], seed=seed)
        fm = one_hot(entries)
        for i in range(len(entries)):
            for j in range(len(entries)):
                differing = sum(
                    entries[i].changes[key] != entries[j].changes[key]
                    for key in entries[i].changes
                )
                dist = float(np.linalg.norm(fm.rows[i] - fm.rows[j]))
                assert dist == pytest.approx(math.sqrt(2 * differing))


class TestPrune:
    def test_all_unchanged_entry_removed(self):
        kept, removed = prune([
            entry("10.0.0.1", "10.0.0.1", tcp_22="ClosedToClosed", tcp_80="OpenToOpen"),
        ])
        assert kept == []
        assert len(removed) == 1

    def test_changed_entry_retained(self):
        e = entry("10.0.0.1", "10.0.0.1", tcp_22="OpenToClosed")
        assert prune([e]).kept == [e]

    def test_empty_input(self):
        assert prune([]) == ([], [])

    def test_same_state_labels_other_than_closed_count_as_unchanged(self):
        e = entry("10.0.0.1", "10.0.0.1", tcp_22="FilteredToFiltered",
                  tcp_80="OpenFilteredToOpenFiltered")
        assert prune([e]).kept == []

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_idempotent(self, seed):
        entries = random_entries(8, [tcp(22), udp(53)], seed=seed)
        once = prune(entries).kept
        assert prune(once).kept == once

    def test_survivor_order_preserved(self):
        changed = [entry(f"10.0.0.{i}", f"10.0.0.{i}", tcp_22="OpenToClosed")
                   for i in range(1, 4)]
        unchanged = entry("10.0.0.9", "10.0.0.9", tcp_22="ClosedToClosed")
        kept, removed = prune([changed[0], unchanged, changed[1], changed[2]])
        assert kept == changed
        assert removed == [unchanged]

    def test_one_hot_of_pruned_equals_row_filter(self):
        entries = random_entries(10, [tcp(22), tcp(80)], seed=5)
        kept = prune(entries).kept
        if not kept:
            pytest.skip("all-unchanged draw")
        direct = one_hot(kept)
        full = one_hot(entries)
        survivor_rows = [i for i, e in enumerate(entries) if e.has_change]
        assert direct.columns == full.columns
        assert np.array_equal(direct.rows, full.rows[survivor_rows])


class TestExport:
    def test_header_tokens_and_binary_cells(self):
        entries = random_entries(2, [tcp(22)], seed=3)
        text = features_to_csv_text(one_hot(entries))
        lines = text.splitlines()
        assert lines[0].split(",")[0] == "tcp_22__OpenToOpen"
        assert set("".join(lines[1:]).replace(",", "")) <= {"0", "1"}
        assert len(lines) == 3
