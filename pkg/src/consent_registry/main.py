"""Main entrypoint for the consent registry."""

import argparse
import dataclasses
import importlib
import inspect
import logging
import os
import pkgutil
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type

import yaml
from tabulate import tabulate

import consent_registry.checks.bench
import consent_registry.checks.demo
from consent_registry.bench import (
    COST_COLUMNS,
    CSV_COLUMNS,
    BenchConfig,
    bench_costs,
    bench_sharding,
    bench_variants,
    new_ledger,
    read_bench_csv,
    write_bench_csv,
)
from consent_registry.client import RegistryClient
from consent_registry.codec import KeyEncoding
from consent_registry.config import CONFIG_ENV_VAR, Settings, load_settings
from consent_registry.constants import OPERATOR_ADDRESS
from consent_registry.corpus import generate_corpus, read_manifest_index
from consent_registry.demo import (
    FIXTURE_FILE,
    build_demo_fixture,
    demo_dreambooth,
    load_demo_fixture,
)
from consent_registry.errors import NotFoundError, RegistryError
from consent_registry.fixedpoint import (
    FingerprintRecord,
    from_fixed_point,
    read_records,
    to_fixed_point,
    write_records,
)
from consent_registry.imaging import load_image
from consent_registry.ledger import Ledger, decode_words, replay_journal, write_journal
from consent_registry.manifest import TrustList
from consent_registry.matchnet import weights_from_settings
from consent_registry.models import (
    BenchCheckContext,
    Check,
    DemoCheckContext,
    Report,
)
from consent_registry.registry import (
    CentroidSet,
    RegistryDeployment,
    Variant,
    cluster_corpus,
    deploy_registry,
    ingest,
)
from consent_registry.store import ContentStore

logger = logging.getLogger(__name__)

CORPUS_DIR = "corpus"
STORE_DIR = "store"
FINGERPRINTS_FILE = "fingerprints.bin"
CENTROIDS_FILE = "centroids.bin"
DEPLOYMENT_FILE = "deployment.yaml"
JOURNAL_FILE = "chain.journal"
DEMO_FIXTURE_DIR = "demo-fixture"
DEMO_DIR = "demo"


def discover_checks(package: Any) -> List[Type[Check]]:
    """
    Dynamically discover all Check subclasses in the given package.

    :param package: The package to search for checks.

    :return: A list of Check subclasses.
    """
    check_classes = []
    for _, module_name, _ in pkgutil.walk_packages(
        package.__path__, package.__name__ + "."
    ):
        module = importlib.import_module(module_name)
        for _, obj in inspect.getmembers(module, inspect.isclass):
            if issubclass(obj, Check) and obj is not Check:
                check_classes.append(obj)
    return check_classes


class NoAliasDumper(yaml.SafeDumper):
    """YAML dumper that doesn't use aliases."""

    def ignore_aliases(self, data: Any) -> bool:
        """
        Ignore aliases.

        :param data: The data to check for aliases.

        :return: True to ignore aliases.
        """
        return True


def save_report_to_yaml(report: Report, file_path: str) -> None:
    """
    Save the report to a YAML file.

    :param report: The report to save.
    :param file_path: The path to the file to save the report to.
    """
    report_dict = {
        "name": report.name,
        "seed": report.seed,
        "violations": {
            check_name: [
                {
                    "subject": v.subject,
                    "summary": v.summary,
                    "details": v.details,
                }
                for v in violations
            ]
            for check_name, violations in report.violations.items()
        },
    }

    unused_overrides = {}
    for check_name, subjects in report.overrides.items():
        used_for_check = report.used_overrides.get(check_name, [])
        unused_for_check = [s for s in subjects if s not in used_for_check]
        if unused_for_check:
            unused_overrides[check_name] = unused_for_check

    if unused_overrides:
        report_dict["unused_overrides"] = unused_overrides

    with open(file_path, "w", encoding="utf-8") as f:
        yaml.dump(
            report_dict,
            f,
            sort_keys=False,
            Dumper=NoAliasDumper,
            width=1000,  # Prevent line wrapping for long summaries
        )


def load_overrides(file_path: str = None) -> Dict[str, Dict[str, List[str]]]:
    """
    Load violation overrides from a YAML file.

    :param file_path: Path to the YAML file. If None, it will not load anything.

    :return: Overrides keyed by report name, then check name.
    """
    if not file_path:
        return {}

    with open(file_path, "r", encoding="utf-8") as f:
        return yaml.safe_load(f) or {}


def run_checks(package: Any, report: Report, context: Any) -> Report:
    """
    Run every check of a package against a context.

    :param package: The package holding the checks.
    :param report: The report to add violations to.
    :param context: The context the checks read.

    :return: the report.
    """
    for check_class in discover_checks(package):
        checker = check_class()
        for params in checker.parametrization:
            checker.check(report, context, **params)
    return report


def run_bench_checks(
    context: BenchCheckContext, overrides: Optional[Dict[str, Any]] = None
) -> Report:
    """
    Check benchmark rows.

    :param context: The benchmark rows and their config.
    :param overrides: Optional dictionary of violation overrides.

    :return: the ``bench`` report.
    """
    overrides = overrides or {}
    report = Report(
        name="bench", seed=context.config.seed, overrides=overrides.get("bench", {})
    )
    return run_checks(consent_registry.checks.bench, report, context)


def run_demo_checks(
    context: DemoCheckContext, seed: int, overrides: Optional[Dict[str, Any]] = None
) -> Report:
    """
    Check a demo run.

    :param context: The demo run's data.
    :param seed: The demo seed.
    :param overrides: Optional dictionary of violation overrides.

    :return: the ``demo`` report.
    """
    overrides = overrides or {}
    report = Report(name="demo", seed=seed, overrides=overrides.get("demo", {}))
    return run_checks(consent_registry.checks.demo, report, context)


# Workspace


def _load_registry(workspace: Path) -> Tuple[Ledger, RegistryDeployment]:
    ledger = replay_journal(workspace / JOURNAL_FILE)
    with open(workspace / DEPLOYMENT_FILE, "r", encoding="utf-8") as f:
        deployment = RegistryDeployment.from_dict(yaml.safe_load(f), ledger)
    return ledger, deployment


def _save_registry(workspace: Path, deployment: RegistryDeployment) -> None:
    with open(workspace / DEPLOYMENT_FILE, "w", encoding="utf-8") as f:
        yaml.safe_dump(deployment.to_dict(), f, sort_keys=True)
    write_journal(deployment.ledger, workspace / JOURNAL_FILE)


def _finish(report: Report, path: Path) -> int:
    save_report_to_yaml(report, str(path))
    print(f"{report.name} report saved to {path}")
    if report.passed:
        return 0
    for check_name, violations in report.violations.items():
        print(f"- {check_name}: {len(violations)} violation(s)")
    return 1


def cmd_gen_corpus(args: argparse.Namespace, settings: Settings) -> int:
    """
    Generate a corpus and export its fingerprints.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status.
    """
    workspace = Path(args.out)
    corpus = generate_corpus(
        args.n or settings.bench.corpus_size,
        settings.bench.seed if args.seed is None else args.seed,
        ContentStore(workspace / STORE_DIR),
        root=workspace / CORPUS_DIR,
        force=args.force,
        image_size=settings.bench.image_size,
        fingerprint_seed=settings.fingerprint.seed,
    )
    write_records(
        workspace / FINGERPRINTS_FILE,
        [
            FingerprintRecord(e.asset_id, to_fixed_point(e.fingerprint))
            for e in corpus.entries
        ],
    )
    print(f"Generated {len(corpus)} images under {workspace / CORPUS_DIR}")
    return 0


def cmd_cluster(args: argparse.Namespace, settings: Settings) -> int:
    """
    Cluster the exported fingerprints into shard centroids.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status.
    """
    workspace = Path(args.out)
    records = read_records(workspace / FINGERPRINTS_FILE)
    k = args.k or settings.bench.variant_k
    centroids = cluster_corpus(
        [from_fixed_point(r.vector) for r in records],
        k,
        seed=settings.bench.seed if args.seed is None else args.seed,
    )
    write_records(
        workspace / CENTROIDS_FILE,
        [
            FingerprintRecord(f"centroid-{i}", c)
            for i, c in enumerate(centroids.centroids)
        ],
    )
    print(f"Clustered {len(records)} fingerprints into {k} shards")
    return 0


def cmd_deploy(args: argparse.Namespace, settings: Settings) -> int:
    """
    Deploy a registry on a fresh chain.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status.
    """
    workspace = Path(args.out)
    centroids = CentroidSet(
        tuple(r.vector for r in read_records(workspace / CENTROIDS_FILE)),
        seed=settings.bench.seed if args.seed is None else args.seed,
    )
    deployment = deploy_registry(
        new_ledger(settings),
        centroids,
        Variant(args.variant or settings.bench.sharding_variant),
        OPERATOR_ADDRESS,
        KeyEncoding(settings.registry.key_encoding),
    )
    _save_registry(workspace, deployment)
    print(
        f"Deployed {deployment.variant.value} hero {deployment.hero} "
        f"with {deployment.k} shards"
    )
    return 0


def cmd_ingest(args: argparse.Namespace, settings: Settings) -> int:
    """
    Ingest every corpus fingerprint.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status; 1 if any ingest failed.
    """
    del settings
    workspace = Path(args.out)
    _, deployment = _load_registry(workspace)
    manifests = read_manifest_index(workspace / CORPUS_DIR)
    failed = 0
    shards: Dict[int, int] = {}
    for record in read_records(workspace / FINGERPRINTS_FILE):
        if record.asset_id not in manifests:
            raise NotFoundError(
                f"No manifest for {record.asset_id} in the corpus index."
            )
        receipt = ingest(deployment, record.vector, manifests[record.asset_id])
        if not receipt.success:
            failed += 1
            continue
        shard = int(decode_words(receipt.return_data)[0])
        shards[shard] = shards.get(shard, 0) + 1
    _save_registry(workspace, deployment)
    print(tabulate(sorted(shards.items()), headers=["shard", "ingested"]))
    if failed:
        print(f"{failed} ingest transaction(s) failed")
    return 1 if failed else 0


def cmd_sync(args: argparse.Namespace, settings: Settings) -> int:
    """
    Sync the off-chain shard indexes and show their state.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status.
    """
    del settings
    _, deployment = _load_registry(Path(args.out))
    deployment.sync()
    rows = [
        (i, len(index.entries), index.last_seen_sequence, index.quarantined)
        for i, index in sorted(deployment.indexers.items())
    ]
    print(tabulate(rows, headers=["shard", "entries", "cursor", "quarantined"]))
    return 0


def cmd_query(args: argparse.Namespace, settings: Settings) -> int:
    """
    Look an image up and report its training consent.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status.
    """
    workspace = Path(args.out)
    _, deployment = _load_registry(workspace)
    client = RegistryClient(
        deployment,
        ContentStore(workspace / STORE_DIR),
        TrustList.load(workspace / CORPUS_DIR / "trust.txt"),
        weights_from_settings(settings.matchnet),
        settings,
    )
    image = load_image(args.image)
    result = client.search(image, args.top_k)
    print(
        tabulate(
            [(c.order, c.uri, c.similarity) for c in result.candidates],
            headers=["order", "manifest", "similarity"],
        )
    )
    match, decision = client.consent_of(image)
    if match:
        print(f"Match {match.uri} (score {match.score:.3f}): {decision.value}")
    else:
        print(f"No verified match: {decision.value}")
    return 0


def _bench_config(args: argparse.Namespace, settings: Settings) -> BenchConfig:
    return BenchConfig.from_settings(
        settings,
        seed=args.seed,
        shard_counts=(args.k,) if args.k else None,
        variant_k=args.k,
        sharding_variant=args.variant,
        variants=(args.variant,) if args.variant and args.variants_only else None,
    )


def cmd_bench_sharding(args: argparse.Namespace, settings: Settings) -> int:
    """
    Benchmark accuracy and cost against shard count.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status; 1 on any invariant violation.
    """
    workspace = Path(args.out)
    workspace.mkdir(parents=True, exist_ok=True)
    config = _bench_config(args, settings)
    rows = bench_sharding(
        config, settings, weights_from_settings(settings.matchnet), workspace / "bench"
    )
    path = workspace / "bench-sharding.csv"
    write_bench_csv(path, rows, CSV_COLUMNS, config)
    print(f"Rows saved to {path}")
    report = run_bench_checks(
        BenchCheckContext(config, sharding_rows=rows), load_overrides(args.overrides)
    )
    return _finish(report, workspace / "bench-sharding-report.yaml")


def cmd_bench_variants(args: argparse.Namespace, settings: Settings) -> int:
    """
    Benchmark the placement variants across corpus sizes.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status; 1 on any invariant violation.
    """
    workspace = Path(args.out)
    workspace.mkdir(parents=True, exist_ok=True)
    config = _bench_config(args, settings)
    rows = bench_variants(
        config, settings, weights_from_settings(settings.matchnet), workspace / "bench"
    )
    path = workspace / "bench-variants.csv"
    write_bench_csv(path, rows, CSV_COLUMNS, config)
    print(f"Rows saved to {path}")
    cost_rows = []
    if args.costs:
        cost_rows = bench_costs(config, settings, workspace / "bench")
        path = workspace / "bench-costs.csv"
        write_bench_csv(path, cost_rows, COST_COLUMNS, config)
        print(f"Cost rows saved to {path}")
    report = run_bench_checks(
        BenchCheckContext(config, variant_rows=rows, cost_rows=cost_rows),
        load_overrides(args.overrides),
    )
    return _finish(report, workspace / "bench-variants-report.yaml")


def cmd_demo(args: argparse.Namespace, settings: Settings) -> int:
    """
    Run the end-to-end specialisation demo.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status; 1 on any safety violation.
    """
    workspace = Path(args.out)
    if args.seed is not None:
        settings = dataclasses.replace(
            settings, demo=dataclasses.replace(settings.demo, seed=args.seed)
        )
    weights = weights_from_settings(settings.matchnet)
    fixture_root = Path(args.fixture or workspace / DEMO_FIXTURE_DIR)
    if (fixture_root / FIXTURE_FILE).exists():
        fixture = load_demo_fixture(fixture_root)
    else:
        fixture = build_demo_fixture(fixture_root, settings, weights)
    budget = settings.demo.budget if args.budget is None else args.budget
    result = demo_dreambooth(
        fixture, budget, settings, weights, out=workspace / DEMO_DIR
    )
    print(result.consent.to_json(), end="")
    print(result.apportionment.to_json(), end="")
    report = run_demo_checks(
        result.context, fixture.seed, load_overrides(args.overrides)
    )
    return _finish(report, workspace / "demo-report.yaml")


def cmd_report(args: argparse.Namespace, settings: Settings) -> int:
    """
    Print benchmark tables and report summaries found in the workspace.

    :param args: parsed arguments.
    :param settings: settings.

    :return: exit status; 1 if any saved report has violations.
    """
    del settings
    workspace = Path(args.out)
    for path in sorted(workspace.glob("bench-*.csv")):
        header, rows = read_bench_csv(path)
        config = header.get("config", {})
        print(f"{path.name} (seed {config.get('seed')})")
        print(tabulate(rows, headers="keys"))
        print()
    status = 0
    for path in sorted(workspace.glob("*-report.yaml")):
        with open(path, "r", encoding="utf-8") as f:
            saved = yaml.safe_load(f) or {}
        counts = {name: len(v) for name, v in saved.get("violations", {}).items()}
        print(f"{path.name}: {sum(counts.values())} violation(s)")
        for name, count in sorted(counts.items()):
            print(f"- {name}: {count}")
        if counts:
            status = 1
    return status


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "cluster": cmd_cluster,
    "deploy": cmd_deploy,
    "ingest": cmd_ingest,
    "query": cmd_query,
    "sync": cmd_sync,
    "bench-sharding": cmd_bench_sharding,
    "bench-variants": cmd_bench_variants,
    "demo-dreambooth": cmd_demo,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    """
    Build the command-line parser.

    :return: the parser.
    """
    parser = argparse.ArgumentParser(
        description="Decentralised opt-in/out registry for generative-AI training."
    )
    parser.add_argument(
        "--config",
        default=os.environ.get(CONFIG_ENV_VAR),
        help="Path to the YAML settings file.",
    )
    parser.add_argument("--seed", type=int, help="Override the corpus/demo seed.")
    parser.add_argument(
        "--variant", choices=[v.value for v in Variant], help="Placement variant."
    )
    parser.add_argument("--k", type=int, help="Shard count.")
    parser.add_argument(
        "--out",
        default="registry-workspace",
        help="Workspace directory (defaults to ./registry-workspace).",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level.",
    )
    parser.add_argument(
        "--overrides",
        default=os.environ.get("REGISTRY_OVERRIDES_FILE"),
        help="Path to YAML file containing violation overrides.",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    gen = verbs.add_parser("gen-corpus", help="Generate a seeded corpus.")
    gen.add_argument("--n", type=int, help="Number of images.")
    gen.add_argument("--force", action="store_true", help="Overwrite a corpus.")
    verbs.add_parser("cluster", help="Cluster fingerprints into shards.")
    verbs.add_parser("deploy", help="Deploy a registry on a fresh chain.")
    verbs.add_parser("ingest", help="Ingest the corpus.")
    query = verbs.add_parser("query", help="Look an image up.")
    query.add_argument("image", help="Path of the query image.")
    query.add_argument("--top-k", type=int, help="Candidates to return.")
    verbs.add_parser("sync", help="Sync off-chain shard indexes.")
    sharding = verbs.add_parser("bench-sharding", help="Accuracy against k.")
    sharding.set_defaults(variants_only=False)
    variants = verbs.add_parser("bench-variants", help="Compare variants.")
    variants.add_argument(
        "--costs", action="store_true", help="Also benchmark ingest costs."
    )
    variants.add_argument(
        "--variants-only",
        action="store_true",
        help="Only run the variant given by --variant.",
    )
    demo = verbs.add_parser("demo-dreambooth", help="Run the end-to-end demo.")
    demo.add_argument("--budget", type=int, help="Tokens to distribute.")
    demo.add_argument("--fixture", help="Demo fixture directory.")
    verbs.add_parser("report", help="Summarise workspace outputs.")
    return parser


def main(argv: Optional[List[str]] = None):
    """
    Run the main entrypoint.

    :param argv: arguments; the process arguments when omitted.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(levelname)s %(name)s: %(message)s"
    )

    try:
        settings = load_settings(args.config)
        overrides = load_overrides(args.overrides)
        if overrides:
            num_overrides = sum(
                len(subjects)
                for checks in overrides.values()
                if isinstance(checks, dict)
                for subjects in checks.values()
            )
            print(f"Loaded {num_overrides} overrides from {args.overrides}.")
        status = COMMANDS[args.verb](args, settings)
    except RegistryError as e:
        parser.error(str(e))
    raise SystemExit(status)


if __name__ == "__main__":
    main()
