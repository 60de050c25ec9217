"""Command-line entry points."""
from __future__ import annotations

import json
import os
import shlex
import subprocess
import sys
import tempfile
from pathlib import Path

import click

from . import datagen as datagen_mod
from . import experiment as experiment_mod
from .encoding import one_hot, prune
from .matching import (
    build_nscr,
    greedy_match,
    nscr_to_csv_text,
    read_nscr,
    write_nscr,
)
from .ml import ParameterError
from .prioritize import Algorithm, PipelineConfig, prioritize
from .scans import (
    PortState,
    ScanDataError,
    ScanDataset,
    ingest_scan,
    read_dataset,
    write_dataset,
)
from .triage import SessionClosedError, TriageSession

_STATE_CHOICES = {state.value.lower(): state for state in PortState}


class CliError(click.ClickException):
    def __init__(self, category: str, message: str):
        super().__init__(f"error({category}): {message}")


def _guard(fn):
    """Translate domain errors into categorized CLI failures (exit 1)."""
    import functools

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ScanDataError as exc:
            raise CliError("scan-data", str(exc)) from exc
        except (ParameterError, datagen_mod.GenerationError) as exc:
            raise CliError("parameter", str(exc)) from exc
        except FileNotFoundError as exc:
            raise CliError("io", str(exc)) from exc
    return wrapper


@click.group()
def main() -> None:
    """Port-scan diffing and reconfiguration triage toolkit."""


def _load_scan(path: str, default_state: PortState, lenient: bool, label: str) -> ScanDataset:
    if path.endswith(".xml"):
        return ingest_scan(Path(path).read_text(encoding="utf-8"),
                           default_state=default_state, strict=not lenient, label=label)
    return read_dataset(path)


@main.command()
@click.option("--xml", "xml_path", type=click.Path(), help="Scanner XML result file.")
@click.option("--invoke-scanner", "scanner_cmd", default=None,
              help="Shell command template producing XML; '{xml}' is replaced "
                   "with a temporary output path, then the file is ingested.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--default-state", default="closed",
              type=click.Choice(sorted(_STATE_CHOICES)), show_default=True,
              help="State assumed for universe ports a host does not list.")
@click.option("--lenient", is_flag=True, help="Fold unknown scanner states into Filtered.")
@click.option("--label", default="", help="Free-text dataset label.")
@_guard
def ingest(xml_path, scanner_cmd, out_path, default_state, lenient, label) -> None:
    """Ingest scanner XML into the canonical dataset CSV."""
    if scanner_cmd:
        with tempfile.TemporaryDirectory() as tmp:
            target = Path(tmp) / "scan.xml"
            command = scanner_cmd.replace("{xml}", shlex.quote(str(target)))
            proc = subprocess.run(command, shell=True)
            if proc.returncode != 0:
                raise CliError("scanner", f"scanner command exited with {proc.returncode}")
            xml_text = target.read_text(encoding="utf-8")
    elif xml_path:
        xml_text = Path(xml_path).read_text(encoding="utf-8")
    else:
        raise CliError("usage", "provide --xml or --invoke-scanner")
    ds = ingest_scan(xml_text, default_state=_STATE_CHOICES[default_state],
                     strict=not lenient, label=label)
    write_dataset(ds, out_path)
    click.echo(f"wrote {len(ds.entries)} hosts, {len(ds.port_universe)} ports -> {out_path}")


@main.command()
@click.option("--initial", "initial_path", required=True, type=click.Path(exists=True))
@click.option("--updated", "updated_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--default-state", default="closed", type=click.Choice(sorted(_STATE_CHOICES)))
@click.option("--lenient", is_flag=True)
@_guard
def match(initial_path, updated_path, out_path, default_state, lenient) -> None:
    """Pair hosts across two scans (XML or dataset CSV) and write the NSCR."""
    state = _STATE_CHOICES[default_state]
    initial = _load_scan(initial_path, state, lenient, "initial")
    updated = _load_scan(updated_path, state, lenient, "updated")
    entries = build_nscr(greedy_match(initial, updated))
    write_nscr(entries, out_path)
    changed = sum(1 for e in entries if e.has_change)
    click.echo(f"wrote {len(entries)} rows ({changed} with changes) -> {out_path}")


def _config_from_flags(algo, k, sc, pruning, seed, config_path=None) -> PipelineConfig:
    if config_path:
        base = PipelineConfig.from_file(config_path)
        return PipelineConfig(
            algorithm=Algorithm(algo) if algo else base.algorithm,
            k=k if k is not None else base.k,
            sc=sc if sc is not None else base.sc,
            pruning=pruning if pruning is not None else base.pruning,
            seed=seed if seed is not None else base.seed,
        )
    return PipelineConfig(algorithm=Algorithm(algo), k=k, sc=sc,
                          pruning=True if pruning is None else pruning,
                          seed=seed or 0)


def _ranked_rows(nscr_path: str, cfg: PipelineConfig):
    entries = read_nscr(nscr_path)
    rows = prune(entries).kept if cfg.pruning else entries
    if not rows:
        raise CliError("empty-ranking", "no rows remain after pruning")
    return entries, prioritize(one_hot(rows), cfg)


def _format_ranked_table(ranked) -> str:
    lines = ["rank  score      cluster  ip_initial       ip_updated       changed_ports"]
    for host in ranked:
        score = f"{host.anomaly_score:.4f}" if host.anomaly_score is not None else "-"
        cluster = f"{host.cluster[0]}/{host.cluster[1]}" if host.cluster else "-"
        changed = ";".join(
            f"{key.token}:{label.token}" for key, label in sorted(host.entry.changed_ports().items())
        ) or "-"
        lines.append(
            f"{host.rank:<5} {score:<10} {cluster:<8} "
            f"{host.entry.ip_initial or '-':<16} {host.entry.ip_updated or '-':<16} {changed}"
        )
    return "\n".join(lines) + "\n"


def _ranked_csv_text(ranked) -> str:
    import csv as _csv
    import io

    buf = io.StringIO()
    writer = _csv.writer(buf, lineterminator="\n")
    writer.writerow(["rank", "anomaly_score", "cluster_id", "cluster_size",
                     "flagged", "ip_initial", "ip_updated", "mac", "changed_ports"])
    for host in ranked:
        changed = ";".join(
            f"{key.token}:{label.token}" for key, label in sorted(host.entry.changed_ports().items())
        )
        writer.writerow([
            host.rank,
            "" if host.anomaly_score is None else f"{host.anomaly_score:.6f}",
            "" if host.cluster is None else host.cluster[0],
            "" if host.cluster is None else host.cluster[1],
            "" if host.flagged is None else ("true" if host.flagged else "false"),
            host.entry.ip_initial or "",
            host.entry.ip_updated or "",
            host.entry.mac or "",
            changed,
        ])
    return buf.getvalue()


_algo_option = click.option("--algo", type=click.Choice([a.value for a in Algorithm]),
                            default=None, help="Prioritization algorithm.")
_k_option = click.option("--k", type=int, default=None, help="Neighbor count (sknn/lof).")
_sc_option = click.option("--sc", type=int, default=None,
                          help="Stopping condition: consecutive non-vulnerable verdicts.")
_prune_option = click.option("--prune/--no-prune", "pruning", default=None,
                             help="Drop rows without any state change first.  [default: prune]")
_seed_option = click.option("--seed", type=int, default=None, show_default="0")


@main.command(name="prioritize")
@click.option("--nscr", "nscr_path", required=True, type=click.Path(exists=True))
@_algo_option
@_k_option
@_sc_option
@_prune_option
@_seed_option
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="Pipeline config file (JSON or key=value) overridden by flags.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the ranking as CSV instead of printing a table.")
@_guard
def prioritize_cmd(nscr_path, algo, k, sc, pruning, seed, config_path, out_path) -> None:
    """Rank NSCR hosts by suspicion and print or export the table."""
    if algo is None and config_path is None:
        raise CliError("usage", "provide --algo or --config")
    cfg = _config_from_flags(algo, k, sc, pruning, seed, config_path)
    _, ranked = _ranked_rows(nscr_path, cfg)
    if out_path:
        Path(out_path).write_text(_ranked_csv_text(ranked), encoding="utf-8")
        click.echo(f"wrote {len(ranked)} ranked hosts -> {out_path}")
    else:
        click.echo(_format_ranked_table(ranked), nl=False)


@main.command()
@click.option("--nscr", "nscr_path", required=True, type=click.Path(exists=True))
@_algo_option
@_k_option
@_sc_option
@_prune_option
@_seed_option
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="Write the session event log (JSON) on exit.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Write the final report (JSON) on exit.")
@_guard
def triage(nscr_path, algo, k, sc, pruning, seed, config_path, log_path, report_path) -> None:
    """Inspect hosts interactively: y = vulnerable, n = not vulnerable, q = quit."""
    if algo is None and config_path is None:
        raise CliError("usage", "provide --algo or --config")
    cfg = _config_from_flags(algo, k, sc, pruning, seed, config_path)
    _, ranked = _ranked_rows(nscr_path, cfg)
    session = TriageSession(ranked, sc=cfg.sc)
    click.echo(f"{session.n_hosts} hosts to inspect"
               + (f", stopping after {cfg.sc} consecutive false positives" if cfg.sc else ""))
    while not session.stopped:
        host = session.current()
        changed = ", ".join(
            f"{key.token} {label.token}" for key, label in sorted(host.entry.changed_ports().items())
        ) or "(no changes)"
        score = f" score={host.anomaly_score:.4f}" if host.anomaly_score is not None else ""
        cluster = f" cluster={host.cluster[0]} size={host.cluster[1]}" if host.cluster else ""
        click.echo(f"[{host.rank}/{session.n_hosts}]{score}{cluster} "
                   f"{host.entry.ip_initial or '-'} -> {host.entry.ip_updated or '-'}: {changed}")
        answer = click.prompt("vulnerable? [y/n/q]", type=str, default="n",
                              show_default=False).strip().lower()
        if answer == "q":
            break
        try:
            session.record_verdict(answer == "y")
        except SessionClosedError:
            break
        click.echo(f"consecutive false positives: {session.consecutive_fp}"
                   + (f"/{cfg.sc}" if cfg.sc else ""))
    report = session.report()
    click.echo(f"inspected={report.inspected} tp={report.tp} fp={report.fp} "
               f"precision={report.precision:.4f}"
               + (f" recall={report.recall:.4f}" if report.recall is not None else ""))
    if session.stopped and session.mode.value == "selection":
        click.echo("stopping condition reached")
    if log_path:
        session.write_event_log(log_path)
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                                     encoding="utf-8")


@main.command(name="datagen")
@click.option("--kind", type=click.Choice([k.value for k in datagen_mod.DatasetKind]),
              required=True)
@click.option("--total", type=int, default=405, show_default=True)
@click.option("--vuln", "vulnerable", type=int, required=True,
              help="Number of vulnerable hosts to plant.")
@click.option("--valid", "valid_count", type=int, default=None,
              help="Valid-change rows (defaults per kind: 72/10/100).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mutate", type=click.Choice(["none", "exp1", "exp2"]), default="none",
              show_default=True, help="Also emit an address-mutated scan pair.")
@click.option("--n-ip", type=int, default=40, show_default=True)
@click.option("--n-mac", type=int, default=40, show_default=True)
@click.option("--pair-prefix", type=click.Path(), default=None,
              help="Path prefix for <prefix>_initial.csv / <prefix>_updated.csv.")
@_guard
def datagen_cmd(kind, total, vulnerable, valid_count, seed, out_path,
                mutate, n_ip, n_mac, pair_prefix) -> None:
    """Generate a ground-truth labeled NSCR (and optionally a scan pair)."""
    spec = datagen_mod.DatasetSpec(
        kind=datagen_mod.DatasetKind(kind), vulnerable_count=vulnerable,
        total=total, valid_change_count=valid_count, seed=seed,
    )
    entries = datagen_mod.generate(spec)
    if mutate == "none":
        write_nscr(entries, out_path)
        click.echo(f"wrote {len(entries)} rows -> {out_path}")
        return
    if pair_prefix is None:
        raise CliError("usage", "--mutate requires --pair-prefix")
    initial, updated = datagen_mod.nscr_to_scan_pair(entries)
    mutation = datagen_mod.mutate_addresses(
        initial, updated,
        n_ip=n_ip, n_mac=n_mac if mutate == "exp1" else 0,
        both=mutate == "exp2", seed=seed,
    )
    expected = datagen_mod.expected_nscr_after_mutation(entries, mutation)
    write_nscr(expected, out_path)
    write_dataset(mutation.initial, f"{pair_prefix}_initial.csv")
    write_dataset(mutation.updated, f"{pair_prefix}_updated.csv")
    click.echo(f"wrote ground truth -> {out_path} and scan pair -> {pair_prefix}_*.csv")


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(exists=True),
              help="Experiment spec JSON: corpus, configs, repetitions, master_seed.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--aggregate-out", type=click.Path(), default=None)
@click.option("--workers", type=int, default=1, show_default=True)
@_guard
def experiment(spec_path, out_path, aggregate_out, workers) -> None:
    """Run a batch experiment, streaming results to CSV."""
    spec = experiment_mod.ExperimentSpec.from_file(spec_path)
    count, errors = experiment_mod.run_experiment(spec, out_path, workers=workers)
    for error in errors:
        click.echo(f"error(item): {error}", err=True)
    click.echo(f"wrote {count} result rows -> {out_path}")
    if aggregate_out:
        experiment_mod.write_aggregate(experiment_mod.read_results(out_path), aggregate_out)
        click.echo(f"wrote aggregates -> {aggregate_out}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=None,
              help="Defaults to $PORTDRIFT_PORT or 8764.")
@click.option("--nscr-dir", type=click.Path(), default=".",
              show_default=True, help="Directory server-side NSCR paths resolve against.")
@click.option("--session-dir", type=click.Path(), default=None,
              help="Persist session event logs (JSON) in this directory.")
@click.option("--ui-dir", type=click.Path(), default="frontend/dist",
              show_default=True, help="Static UI bundle served under /ui when present.")
@_guard
def serve(host, port, nscr_dir, session_dir, ui_dir) -> None:
    """Serve the triage HTTP API (and the UI when built)."""
    import uvicorn

    from .server import create_app

    app = create_app(nscr_dir=nscr_dir, session_dir=session_dir, ui_dir=ui_dir)
    port = port if port is not None else int(os.environ.get("PORTDRIFT_PORT", "8764"))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main(prog_name="portdrift")
