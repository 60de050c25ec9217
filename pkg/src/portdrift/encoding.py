"""One-hot encoding of state-change reports, plus no-change pruning."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .matching import ALL_LABELS, NscrEntry, StateChangeLabel, nscr_universe
from .scans import PortKey

LABELS_PER_PORT = len(ALL_LABELS)

_LABEL_INDEX = {label: i for i, label in enumerate(ALL_LABELS)}


@dataclass
class FeatureMatrix:
    """One-hot encoded report with the row-to-host mapping.

    Columns are ordered by (protocol, port number, label index); exactly one
    label fires per port, so every row sums to the number of ports.
    """

    columns: list[tuple[PortKey, StateChangeLabel]]
    rows: np.ndarray
    row_hosts: list[NscrEntry]

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]


def one_hot(nscr: list[NscrEntry]) -> FeatureMatrix:
    """Encode the report as a boolean matrix; integer codes are deliberately avoided."""
    if not nscr:
        raise ValueError("cannot encode an empty report")
    universe = nscr_universe(nscr)
    columns = [(key, label) for key in universe for label in ALL_LABELS]
    rows = np.zeros((len(nscr), len(columns)), dtype=np.float64)
    for i, entry in enumerate(nscr):
        for j, key in enumerate(universe):
            rows[i, j * LABELS_PER_PORT + _LABEL_INDEX[entry.changes[key]]] = 1.0
    return FeatureMatrix(columns=columns, rows=rows, row_hosts=list(nscr))


class PruneResult(NamedTuple):
    kept: list[NscrEntry]
    removed: list[NscrEntry]


def prune(nscr: list[NscrEntry]) -> PruneResult:
    """Drop entries whose every port kept its state; order of survivors is preserved.

    "No change" is state based: any label with equal from/to states counts as
    unchanged, not just ClosedToClosed.
    """
    kept = [entry for entry in nscr if entry.has_change]
    removed = [entry for entry in nscr if not entry.has_change]
    return PruneResult(kept, removed)


def features_to_csv_text(fm: FeatureMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"{key.token}__{label.token}" for key, label in fm.columns])
    for row in fm.rows:
        writer.writerow([str(int(cell)) for cell in row])
    return buf.getvalue()


def write_features(fm: FeatureMatrix, path: str | Path) -> None:
    Path(path).write_text(features_to_csv_text(fm), encoding="utf-8")
