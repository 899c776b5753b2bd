"""Command-line pipeline: synth → ingest/build-kg → build-corpus → federate →
evaluate → report.

Every command reads one TOML config (overridable with --set section.key=value)
and writes its artifacts plus a manifest under --out.  Outputs carry no
timestamps, so identical config and seeds reproduce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import __version__, alignment, evaluation, federation, kg
from .adapters import make_lora_adapter, save_adapter, serialize
from .adapters import digest as adapter_digest
from .config import RunConfig, describe_config_keys, load_config
from .dataset import Dataset, generate_synthetic, load_dataset_dir, parse_iso_date, save_dataset_dir
from .errors import ConfigError, HarnessError
from .prompts import instance_to_dict, save_instance
from .seeding import derive_seed
from .trainer import ExternalTrainer, MockTrainer


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_config(config_path: str, overrides: tuple[str, ...]) -> RunConfig:
    try:
        return load_config(config_path, list(overrides))
    except ConfigError as exc:
        raise click.ClickException(str(exc))


def _resolve_dataset(config: RunConfig, data_dir: str | None) -> Dataset:
    if data_dir:
        return load_dataset_dir(data_dir)
    if config.data.source == "csv":
        if not config.data.dir:
            raise click.ClickException("data.source is 'csv' but data.dir is empty and no --data given")
        return load_dataset_dir(config.data.dir)
    if config.data.source != "synthetic":
        raise click.ClickException(f"unknown data.source {config.data.source!r}")
    return generate_synthetic(
        derive_seed(config.seed, "synth"),
        config.data.n_users,
        config.data.n_assets,
        (config.data.start, config.data.end),
        config.data.tx_per_user_year,
    )


_CONFIG_OPTIONS = [
    click.option("--config", "config_path", required=True, type=click.Path(exists=True), help="TOML run config."),
    click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE", help="Override a config key."),
]


def _with_config(fn):
    for option in reversed(_CONFIG_OPTIONS):
        fn = option(fn)
    return fn


@click.group(
    epilog="\b\nConfig keys (see --set):\n"
    + "\n".join("  " + line for line in describe_config_keys().splitlines()),
)
@click.version_option(__version__)
def main():
    """Federated KG-grounded asset recommendation harness."""


@main.command("synth")
@_with_config
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output dataset directory.")
def cmd_synth(config_path, overrides, out_dir):
    """Generate a synthetic dataset and write the four CSV files."""
    config = _load_config(config_path, overrides)
    out = Path(out_dir)
    dataset = generate_synthetic(
        derive_seed(config.seed, "synth"),
        config.data.n_users,
        config.data.n_assets,
        (config.data.start, config.data.end),
        config.data.tx_per_user_year,
    )
    out.mkdir(parents=True, exist_ok=True)
    save_dataset_dir(dataset, out)
    files = {p.name: _sha256_file(p) for p in sorted(out.glob("*.csv"))}
    _write_json(
        out / "manifest.json",
        {
            "command": "synth",
            "seed": config.seed,
            "counts": {
                "transactions": len(dataset.transactions),
                "prices": len(dataset.prices),
                "assets": len(dataset.assets),
                "profiles": len(dataset.profiles),
            },
            "files": files,
        },
    )
    click.echo(f"wrote {len(files)} files to {out}")


@main.command("ingest")
@_with_config
@click.option("--data", "data_dir", type=click.Path(exists=True), help="CSV directory (defaults to data.dir).")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Normalized output directory.")
def cmd_ingest(config_path, overrides, data_dir, out_dir):
    """Validate CSV inputs and emit normalized copies."""
    config = _load_config(config_path, overrides)
    source = data_dir or config.data.dir
    if not source:
        raise click.ClickException("no input directory: pass --data or set data.dir")
    try:
        dataset = load_dataset_dir(source)
    except HarnessError as exc:
        raise click.ClickException(f"ingestion failed: {exc}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset_dir(dataset, out)
    span = dataset.price_date_range
    _write_json(
        out / "manifest.json",
        {
            "command": "ingest",
            "counts": {
                "transactions": len(dataset.transactions),
                "prices": len(dataset.prices),
                "assets": len(dataset.assets),
                "profiles": len(dataset.profiles),
            },
            "price_range": [span[0].isoformat(), span[1].isoformat()] if span else None,
            "files": {p.name: _sha256_file(p) for p in sorted(out.glob("*.csv"))},
        },
    )
    click.echo(f"ingested {len(dataset.transactions)} transactions, {len(dataset.prices)} price bars")


@main.command("build-kg")
@_with_config
@click.option("--data", "data_dir", type=click.Path(exists=True), help="Dataset directory (CSV files).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--customer", "customers", multiple=True, help="Customer ids (default: all).")
@click.option("--cutoff", default=None, help="Recommendation date (default: schedule.test_start).")
def cmd_build_kg(config_path, overrides, data_dir, out_dir, customers, cutoff):
    """Write per-customer PKG/MKG JSON-LD documents and prompt instances."""
    config = _load_config(config_path, overrides)
    dataset = _resolve_dataset(config, data_dir)
    cutoff_date = parse_iso_date(cutoff) if cutoff else config.schedule.test_start
    ids = list(customers) or sorted(dataset.customer_ids)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary_cache = kg.full_summaries(dataset)
    market_value = kg.traded_value_before(dataset, cutoff_date)
    entries = []
    for customer_id in ids:
        pkg = kg.build_pkg(dataset, customer_id, cutoff_date)
        assets = kg.select_assets_for_prompt(
            dataset, customer_id, cutoff_date, config.kg.triple_cap,
            summary_cache=summary_cache, market_value=market_value,
        )
        mkg = kg.build_mkg(dataset, cutoff_date, assets, summary_cache=summary_cache)
        pkg, mkg = kg.cap_triples(pkg, mkg, config.kg.triple_cap)
        pkg_path = out / f"pkg_{customer_id}.jsonld"
        mkg_path = out / f"mkg_{customer_id}.jsonld"
        pkg_path.write_text(kg.to_jsonld(pkg), encoding="utf-8")
        mkg_path.write_text(kg.to_jsonld(mkg), encoding="utf-8")
        instance = alignment.build_prompt_instance(
            dataset, customer_id, cutoff_date, config.ablation(), config.kg.triple_cap,
            summary_cache=summary_cache, market_value=market_value,
        )
        prompt_path = out / f"prompt_{customer_id}.json"
        save_instance(instance, prompt_path)
        entries.append(
            {
                "customer_id": customer_id,
                "pkg_triples": len(pkg),
                "mkg_triples": len(mkg),
                "files": {
                    pkg_path.name: _sha256_file(pkg_path),
                    mkg_path.name: _sha256_file(mkg_path),
                    prompt_path.name: _sha256_file(prompt_path),
                },
            }
        )
    _write_json(
        out / "manifest.json",
        {"command": "build-kg", "cutoff": cutoff_date.isoformat(), "customers": entries},
    )
    click.echo(f"built graphs for {len(ids)} customers at cutoff {cutoff_date.isoformat()}")


@main.command("build-corpus")
@_with_config
@click.option("--data", "data_dir", type=click.Path(exists=True), help="Dataset directory (CSV files).")
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_build_corpus(config_path, overrides, data_dir, out_dir):
    """Assign customers to clients and write per-client labeled corpora."""
    config = _load_config(config_path, overrides)
    dataset = _resolve_dataset(config, data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    clients = federation.make_clients(
        n=config.federation.n_clients,
        mode=config.client_mode(),
        concentration=config.federation.concentration,
        seed=derive_seed(config.seed, "clients"),
    )
    assignment = federation.assign_users(dataset.profiles, clients, seed=derive_seed(config.seed, "assign"))
    corpus = alignment.build_training_corpus(
        dataset,
        assignment,
        derive_seed(config.seed, "corpus"),
        schedule=config.train_schedule(),
        horizon_days=config.schedule.horizon_days,
        ablation=config.ablation(),
        cap=config.kg.triple_cap,
    )

    per_client = []
    total_true = total_false = 0
    for client_id in range(config.federation.n_clients):
        examples = corpus.get(client_id, [])
        path = out / f"client_{client_id:02d}.jsonl"
        alignment.write_corpus_file(examples, path)
        true_n, false_n = alignment.corpus_label_counts(examples)
        total_true += true_n
        total_false += false_n
        per_client.append(
            {
                "client_id": client_id,
                "examples": len(examples),
                "label_true": true_n,
                "label_false": false_n,
                "customers": sum(1 for c in assignment.values() if c == client_id),
                "sha256": _sha256_file(path),
            }
        )

    _write_json(out / "assignment.json", dict(sorted(assignment.items())))
    _write_json(out / "clients.json", [
        {"client_id": c.client_id, "stratum_weights": list(c.stratum_weights)} for c in clients
    ])
    _write_json(
        out / "manifest.json",
        {
            "command": "build-corpus",
            "seed": config.seed,
            "mode": config.federation.mode,
            "ticks": [t.isoformat() for t in config.train_schedule().ticks()],
            "clients": per_client,
            "totals": {
                "examples": total_true + total_false,
                "label_true": total_true,
                "label_false": total_false,
                "even_split": total_true == total_false,
            },
        },
    )
    click.echo(
        f"corpus: {total_true + total_false} examples "
        f"({total_true} desirable / {total_false} undesirable) across {len(per_client)} clients"
    )


@main.command("federate")
@_with_config
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--trainer-cmd", default=None, help="External trainer command (overrides trainer.kind).")
def cmd_federate(config_path, overrides, corpus_dir, out_dir, trainer_cmd):
    """Run federated rounds with the configured trainer."""
    config = _load_config(config_path, overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_paths = {
        c: Path(corpus_dir) / f"client_{c:02d}.jsonl" for c in range(config.federation.n_clients)
    }

    initial = make_lora_adapter(
        n_layers=config.adapter.n_layers,
        hidden_dim=config.adapter.hidden_dim,
        rank=config.adapter.rank,
        alpha=config.adapter.alpha,
        seed=derive_seed(config.seed, "adapter"),
        quant_bits=config.adapter.bits,
    )
    save_adapter(initial, out / "adapter_initial.flat")

    command = trainer_cmd
    if command is None and config.trainer.kind == "external":
        command = config.trainer.command
        if not command:
            raise click.ClickException("trainer.kind is 'external' but trainer.command is empty")
    if command is None and config.trainer.kind != "mock":
        raise click.ClickException(f"unknown trainer.kind {config.trainer.kind!r}")

    external = ExternalTrainer(shlex.split(command), config.trainer.timeout_s) if command else None
    trainer = external if external else MockTrainer(config.trainer.eta)
    try:
        logs, final = federation.run_rounds(
            config.round_config(derive_seed(config.seed, "rounds")),
            corpus_paths,
            trainer,
            initial,
            workdir=out / "work",
            log_path=out / "round_logs.jsonl",
        )
    except HarnessError as exc:
        raise click.ClickException(f"federated run aborted: {exc} (partial logs in {out / 'round_logs.jsonl'})")
    finally:
        if external:
            external.close()

    save_adapter(final, out / "adapter_final.flat")
    container_bytes = len(serialize(final))
    report = federation.comm_cost(
        container_bytes,
        rounds=config.federation.rounds,
        uploads_per_round=config.federation.clients_per_round,
        broadcast_targets=config.federation.n_clients,
    )
    rows = federation.model_size_table(
        bits_per_param=config.adapter.bits,
        rounds=config.federation.rounds,
        uploads_per_round=config.federation.clients_per_round,
        broadcast_targets=config.federation.n_clients,
    )
    comm = report.to_dict()
    comm["model_rows"] = rows
    _write_json(out / "comm_report.json", comm)
    with open(out / "size_table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["model", "trainable_params", "adapter_mb", "per_round_mb", "total_mb"],
            lineterminator="\n",
        )
        writer.writeheader()
        writer.writerows(rows)

    _write_json(
        out / "manifest.json",
        {
            "command": "federate",
            "rounds": len(logs),
            "trainer": "external" if command else "mock",
            "participation": {str(c): n for c, n in federation.participation_counts(
                logs, config.federation.n_clients).items()},
            "adapter_initial": adapter_digest(initial),
            "adapter_final": adapter_digest(final),
            "round_logs": _sha256_file(out / "round_logs.jsonl"),
        },
    )
    click.echo(f"completed {len(logs)} rounds; final adapter {adapter_digest(final)[:12]}…")


@main.command("evaluate")
@_with_config
@click.option("--data", "data_dir", type=click.Path(exists=True), help="Dataset directory (CSV files).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--recommender", "recommender_name", type=click.Choice(["random", "popularity", "oracle"]),
              default=None, help="Builtin baseline (default: random unless --responses).")
@click.option("--responses", "responses_path", type=click.Path(), default=None,
              help="JSONL file of {instance_id, response_text} records from an external model.")
@click.option("--jobs", default=1, show_default=True, help="Parallel recommender calls.")
def cmd_evaluate(config_path, overrides, data_dir, out_dir, recommender_name, responses_path, jobs):
    """Score a recommender on the test schedule (Pref@3 / Prof@3 / Comb@3)."""
    config = _load_config(config_path, overrides)
    if responses_path and recommender_name:
        raise click.ClickException("pass either --responses or --recommender, not both")
    dataset = _resolve_dataset(config, data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    instances = evaluation.build_test_set(
        dataset,
        schedule=config.test_schedule(),
        horizon_days=config.schedule.horizon_days,
        ablation=config.ablation(),
        cap=config.kg.triple_cap,
    )
    if not instances:
        raise click.ClickException("test set is empty (no customer has post-tick price coverage)")

    with open(out / "instances.jsonl", "w", encoding="utf-8") as fh:
        for instance in instances:
            record = instance_to_dict(instance.prompt)
            record["purchased"] = sorted(instance.outcomes.purchased)
            record["profitable"] = sorted(instance.outcomes.profitable)
            record["desirable"] = sorted(instance.outcomes.desirable)
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")

    if responses_path:
        path = Path(responses_path)
        if not path.exists():
            raise click.ClickException(f"responses file not found: {path}")
        responses: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    responses[record["instance_id"]] = record["response_text"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    raise click.ClickException(f"{path}:{lineno}: expected {{instance_id, response_text}}")
        recommender = evaluation.recommender_from_responses(responses)
        model_name = path.stem
    else:
        name = recommender_name or "random"
        if name == "random":
            recommender = evaluation.baseline_random(dataset.asset_isins, seed=derive_seed(config.seed, "eval"))
        elif name == "popularity":
            recommender = evaluation.baseline_popularity(dataset)
        else:
            recommender = evaluation.oracle_recommender()
        model_name = name

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            texts = list(pool.map(recommender, instances))
    else:
        texts = [recommender(i) for i in instances]
    by_id = {i.instance_id: t for i, t in zip(instances, texts)}
    results = evaluation.evaluate(evaluation.recommender_from_responses(by_id), instances)

    ablation_label = config.prompts.ablation
    _write_json(
        out / "metrics.json",
        {
            "model": model_name,
            "data": ablation_label,
            "n_instances": len(instances),
            "metrics": [r.to_dict() for r in results],
        },
    )
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "data", "metric", "mean", "stderr", "n", "n_excluded"])
        for r in results:
            writer.writerow([model_name, ablation_label, r.name, f"{r.mean:.6f}", f"{r.stderr:.6f}", r.n, r.n_excluded])

    # wide, publication-shaped table: one row per (model, data), mean ± stderr cells
    with open(out / "metrics_table.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "data", "Pref@3", "Prof@3", "Comb@3", "n_pref", "n_prof", "n_comb"])
        cells = {r.name: f"{r.mean:.4f} ± {r.stderr:.4f}" for r in results}
        ns = {r.name: r.n for r in results}
        writer.writerow([
            model_name, ablation_label,
            cells["Pref@3"], cells["Prof@3"], cells["Comb@3"],
            ns["Pref@3"], ns["Prof@3"], ns["Comb@3"],
        ])

    by_name = {r.name: r for r in results}
    _write_json(
        out / "plot_data.json",
        {
            "scatter": [{
                "model": model_name, "data": ablation_label,
                "pref": by_name["Pref@3"].mean, "prof": by_name["Prof@3"].mean,
            }],
            "comb_bars": [{
                "model": model_name, "data": ablation_label,
                "comb": by_name["Comb@3"].mean, "stderr": by_name["Comb@3"].stderr,
            }],
        },
    )
    for r in results:
        click.echo(f"{r.name}: {r.mean:.4f} ± {r.stderr:.4f} (n={r.n}, excluded={r.n_excluded})")


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_report(run_dirs, out_dir):
    """Consolidate metrics/comm/corpus artifacts from one or more run dirs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_rows = []
    comm_reports = []
    corpora = []
    for run_dir in run_dirs:
        for path in sorted(Path(run_dir).rglob("metrics.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            for metric in doc["metrics"]:
                metrics_rows.append({
                    "model": doc["model"], "data": doc["data"], **metric,
                })
        for path in sorted(Path(run_dir).rglob("comm_report.json")):
            comm_reports.append(json.loads(path.read_text(encoding="utf-8")))
        for path in sorted(Path(run_dir).rglob("manifest.json")):
            doc = json.loads(path.read_text(encoding="utf-8"))
            if doc.get("command") == "build-corpus":
                corpora.append({"path": str(path.parent), "totals": doc["totals"]})

    scatter: dict[tuple[str, str], dict] = {}
    bars = []
    for row in metrics_rows:
        key = (row["model"], row["data"])
        point = scatter.setdefault(key, {"model": row["model"], "data": row["data"]})
        if row["name"] == "Pref@3":
            point["pref"] = row["mean"]
        elif row["name"] == "Prof@3":
            point["prof"] = row["mean"]
        elif row["name"] == "Comb@3":
            bars.append({"model": row["model"], "data": row["data"], "comb": row["mean"], "stderr": row["stderr"]})

    _write_json(out / "report.json", {"metrics": metrics_rows, "comm": comm_reports, "corpora": corpora})
    _write_json(out / "plot_data.json", {"scatter": sorted(scatter.values(), key=lambda p: (p["model"], p["data"])),
                                         "comb_bars": sorted(bars, key=lambda p: (p["model"], p["data"]))})
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "data", "metric", "mean", "stderr", "n", "n_excluded"])
        for row in sorted(metrics_rows, key=lambda r: (r["model"], r["data"], r["name"])):
            writer.writerow([row["model"], row["data"], row["name"],
                             f"{row['mean']:.6f}", f"{row['stderr']:.6f}", row["n"], row["n_excluded"]])
    click.echo(f"report over {len(metrics_rows)} metric rows → {out}")


if __name__ == "__main__":
    main()
