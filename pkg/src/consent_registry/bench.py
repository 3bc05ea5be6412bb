"""Benchmarks over shard counts, placement variants, corpus sizes and costs."""

import csv
import dataclasses
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from consent_registry.codec import KeyEncoding, encode_key_payload, rank
from consent_registry.config import Settings
from consent_registry.constants import OPERATOR_ADDRESS, QUERY_KINDS
from consent_registry.corpus import (
    Corpus,
    generate_corpus,
    image_seed,
    procedural_image,
)
from consent_registry.errors import InvalidInputError
from consent_registry.fingerprint import Fingerprint, compute_fingerprint, fit_pca
from consent_registry.fixedpoint import FixedPointVector, stack, to_fixed_point
from consent_registry.imaging import ImageAsset
from consent_registry.ledger import Genesis, Ledger, decode_words
from consent_registry.matchnet import PooledMatrixCache, ScorerWeights
from consent_registry.perturb import full_suite, mild_suite, perturb_query
from consent_registry.registry import (
    CentroidSet,
    RegistryDeployment,
    Variant,
    cluster_corpus,
    deploy_registry,
    ingest,
    query,
    resolve_match,
)
from consent_registry.store import ContentStore

logger = logging.getLogger(__name__)

SUITES = {"mild": mild_suite, "full": full_suite}


@dataclass(frozen=True)
class BenchConfig:
    """Everything a benchmark run depends on."""

    corpus_size: int = 2000
    query_count: int = 200
    shard_counts: Tuple[int, ...] = (1, 5, 25, 50)
    variants: Tuple[str, ...] = ("C-OOO", "E-OOF", "E-FOF")
    sharding_variant: str = "E-FOF"
    corpus_sizes: Tuple[int, ...] = (2000, 5000)
    variant_k: int = 25
    cost_dims: Tuple[int, ...] = (256, 128, 64)
    cost_corpus_size: int = 200
    repetitions: int = 5
    seed: int = 0
    query_seed: int = 1
    image_size: int = 96
    perturbation_suite: str = "mild"
    gas_schedule: str = "default"
    calibration_sample: int = 0
    top_k: int = 10
    threshold: float = 0.7
    key_encoding: str = "int-array"
    perturbed_floor: float = 80.0
    degradation_points: float = 10.0
    trend_tolerance: float = 0.1
    trend_min_corpus: int = 1000

    def __post_init__(self):
        if not self.shard_counts or min(self.shard_counts) < 1:
            raise InvalidInputError("Shard counts must be positive.")
        if self.corpus_size < max(self.shard_counts):
            raise InvalidInputError("Corpus must hold at least one image per shard.")
        if not 1 <= self.query_count <= self.corpus_size:
            raise InvalidInputError("Query count must lie in [1, corpus size].")
        if self.repetitions < 1 or self.top_k < 1:
            raise InvalidInputError("Repetitions and top-K must be positive.")
        if self.perturbation_suite not in SUITES:
            raise InvalidInputError(f"Unknown suite {self.perturbation_suite!r}.")
        for name in self.variants + (self.sharding_variant,):
            Variant(name)
        KeyEncoding(self.key_encoding)

    @classmethod
    def from_settings(cls, settings: Settings, **overrides: Any) -> "BenchConfig":
        """
        Build a config from settings.

        :param settings: loaded settings.
        :param overrides: fields to replace, e.g. from CLI flags.

        :return: the config.
        """
        bench = dataclasses.asdict(settings.bench)
        known = {f.name for f in dataclasses.fields(cls)}
        values = {k: v for k, v in bench.items() if k in known}
        values.update(
            top_k=settings.matchnet.top_k,
            threshold=settings.registry.match_threshold,
            key_encoding=settings.registry.key_encoding,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        """
        Plain-data form, for output headers.

        :return: every field.
        """
        return {
            k: list(v) if isinstance(v, tuple) else v
            for k, v in dataclasses.asdict(self).items()
        }


@dataclass(frozen=True)
class QueryRecord:
    """Outcome of one benchmark query."""

    variant: str
    k: int
    corpus_size: int
    kind: str
    query_id: str
    expected_uri: str
    matched_uri: Optional[str]
    predicted_shard: int
    true_shard: int
    candidates: Tuple[str, ...]
    shard_scan: Tuple[str, ...]
    global_scan: Optional[Tuple[str, ...]]
    predict_on_chain: bool
    retrieval_on_chain: bool
    predict_ops: int

    @property
    def correct(self) -> bool:
        """
        Whether the verified match is the query's source.

        :return: True if correct.
        """
        return self.matched_uri == self.expected_uri

    @property
    def failure(self) -> Optional[str]:
        """
        Why the query failed.

        :return: None if correct; ``shard-miss`` if the source lives in
            another shard; ``ranking-miss`` if it was not among the
            candidates; ``verify-miss`` if scoring rejected it.
        """
        if self.correct:
            return None
        if self.predicted_shard != self.true_shard:
            return "shard-miss"
        if self.expected_uri not in self.candidates:
            return "ranking-miss"
        return "verify-miss"


CSV_COLUMNS = [
    "variant",
    "k",
    "corpus_size",
    "query_kind",
    "accuracy_pct",
    "shard_predict_ms_or_gas",
    "retrieval_ms",
    "ingest_gas_mean",
    "shard_predict_ms",
    "shard_predict_gas",
    "shard_predict_ops",
    "retrieval_ops",
    "ingest_ms_mean",
    "shard_misses",
    "ranking_misses",
    "verify_misses",
]


@dataclass(frozen=True)
class BenchRow:
    """One configuration's measurements."""

    variant: str
    k: int
    corpus_size: int
    query_kind: str
    accuracy_pct: float
    shard_predict_ms: float
    shard_predict_gas: float
    shard_predict_ops: float
    retrieval_ms: float
    retrieval_ops: float
    ingest_gas_mean: float
    ingest_ms_mean: float
    queries: Tuple[QueryRecord, ...] = field(default=(), repr=False, compare=False)

    def failures(self, reason: str) -> int:
        """
        Number of failed queries for one reason.

        :param reason: a :attr:`QueryRecord.failure` value.

        :return: the count.
        """
        return sum(1 for q in self.queries if q.failure == reason)

    def to_csv_row(self) -> Dict[str, Any]:
        """
        CSV fields.

        :return: one value per column of :data:`CSV_COLUMNS`.
        """
        on_chain = Variant(self.variant).query_prediction_on_chain
        return {
            "variant": self.variant,
            "k": self.k,
            "corpus_size": self.corpus_size,
            "query_kind": self.query_kind,
            "accuracy_pct": round(self.accuracy_pct, 3),
            "shard_predict_ms_or_gas": (
                round(self.shard_predict_gas, 1)
                if on_chain
                else round(self.shard_predict_ms, 4)
            ),
            "retrieval_ms": round(self.retrieval_ms, 4),
            "ingest_gas_mean": round(self.ingest_gas_mean, 1),
            "shard_predict_ms": round(self.shard_predict_ms, 4),
            "shard_predict_gas": round(self.shard_predict_gas, 1),
            "shard_predict_ops": round(self.shard_predict_ops, 3),
            "retrieval_ops": round(self.retrieval_ops, 3),
            "ingest_ms_mean": round(self.ingest_ms_mean, 4),
            "shard_misses": self.failures("shard-miss"),
            "ranking_misses": self.failures("ranking-miss"),
            "verify_misses": self.failures("verify-miss"),
        }


COST_COLUMNS = [
    "variant",
    "key_encoding",
    "dims",
    "corpus_size",
    "ingest_gas_mean",
    "event_bytes_mean",
    "sync_ms_per_entry",
]


@dataclass(frozen=True)
class CostRow:
    """Ingest cost of one variant, key encoding and dimension."""

    variant: str
    key_encoding: str
    dims: int
    corpus_size: int
    ingest_gas_mean: float
    event_bytes_mean: float
    sync_ms_per_entry: float

    def to_csv_row(self) -> Dict[str, Any]:
        """
        CSV fields.

        :return: one value per column of :data:`COST_COLUMNS`.
        """
        row = dataclasses.asdict(self)
        row["ingest_gas_mean"] = round(self.ingest_gas_mean, 1)
        row["event_bytes_mean"] = round(self.event_bytes_mean, 1)
        row["sync_ms_per_entry"] = round(self.sync_ms_per_entry, 4)
        return row


@dataclass(frozen=True)
class BenchQuery:
    """A query image and the corpus entry it came from."""

    query_id: str
    kind: str
    source: int
    image: ImageAsset
    fingerprint: Fingerprint


def new_ledger(
    settings: Settings, allocations: Optional[Dict[str, int]] = None
) -> Ledger:
    """
    Fresh ledger with a funded operator.

    :param settings: registry and gas settings.
    :param allocations: further genesis balances.

    :return: the ledger.
    """
    return Ledger(
        Genesis(
            {OPERATOR_ADDRESS: settings.registry.operator_funds, **(allocations or {})},
            gas=settings.gas,
            gas_price=settings.registry.gas_price,
            checkpoint_every=settings.registry.checkpoint_every,
        )
    )


def make_corpus(
    size: int, config: BenchConfig, settings: Settings, content_store: ContentStore
) -> Corpus:
    """
    Generate a benchmark corpus.

    :param size: number of images.
    :param config: benchmark config.
    :param settings: settings.
    :param content_store: store for images and manifests.

    :return: the corpus.
    """
    return generate_corpus(
        size,
        config.seed,
        content_store,
        image_size=config.image_size,
        fingerprint_seed=settings.fingerprint.seed,
    )


def make_queries(corpus: Corpus, config: BenchConfig, settings: Settings):
    """
    Unperturbed and perturbed queries sampled from a corpus.

    :param corpus: the corpus.
    :param config: benchmark config.
    :param settings: settings.

    :return: queries keyed by kind.
    """
    rng = np.random.default_rng(config.query_seed)
    count = min(config.query_count, len(corpus))
    sources = [int(i) for i in rng.choice(len(corpus), size=count, replace=False)]
    suite = SUITES[config.perturbation_suite](settings.perturbation)
    queries: Dict[str, List[BenchQuery]] = {kind: [] for kind in QUERY_KINDS}
    for n, source in enumerate(sources):
        entry = corpus.entries[source]
        queries["unperturbed"].append(
            BenchQuery(
                f"{entry.asset_id}/unperturbed",
                "unperturbed",
                source,
                entry.image,
                entry.fingerprint,
            )
        )
        image = perturb_query(
            entry.image,
            suite,
            seed=image_seed(config.query_seed, n),
            max_chain=settings.perturbation.max_chain,
        ).with_id(f"{entry.asset_id}/perturbed")
        queries["perturbed"].append(
            BenchQuery(
                image.asset_id,
                "perturbed",
                source,
                image,
                compute_fingerprint(image, seed=settings.fingerprint.seed),
            )
        )
    return queries


def cluster_for(
    corpus: Corpus, k: int, config: BenchConfig, settings: Settings
) -> CentroidSet:
    """
    Centroids for a corpus, from the corpus itself or a disjoint sample.

    :param corpus: the corpus.
    :param k: number of shards.
    :param config: benchmark config; ``calibration_sample`` > 0 clusters a
        separately seeded sample of that size instead.
    :param settings: settings.

    :return: the centroid set.
    """
    if config.calibration_sample <= 0:
        return cluster_corpus(corpus.fingerprints, k, seed=config.seed)
    sample = [
        compute_fingerprint(
            procedural_image(
                f"calibration-{i}",
                image_seed(config.seed + 1, i),
                config.image_size,
            ),
            seed=settings.fingerprint.seed,
        )
        for i in range(max(config.calibration_sample, k))
    ]
    return cluster_corpus(sample, k, seed=config.seed)


@dataclass
class _Deployed:
    deployment: RegistryDeployment
    shard_of: List[int]
    members: Dict[int, List[int]]
    ingest_gas: List[int]
    ingest_seconds: List[float]
    event_bytes: List[int]


def _deploy_and_ingest(
    corpus: Corpus,
    keys: Sequence[FixedPointVector],
    centroids: CentroidSet,
    variant: Variant,
    encoding: KeyEncoding,
    settings: Settings,
) -> _Deployed:
    deployment = deploy_registry(
        new_ledger(settings), centroids, variant, OPERATOR_ADDRESS, encoding
    )
    deployed = _Deployed(deployment, [], {}, [], [], [])
    for i, (entry, key) in enumerate(zip(corpus.entries, keys)):
        start = time.perf_counter()
        receipt = ingest(deployment, key, entry.manifest_cid).raise_for_status()
        deployed.ingest_seconds.append(time.perf_counter() - start)
        shard = int(decode_words(receipt.return_data)[0])
        deployed.shard_of.append(shard)
        deployed.members.setdefault(shard, []).append(i)
        deployed.ingest_gas.append(receipt.gas_used)
        deployed.event_bytes.append(
            sum(len(e.data) for e in receipt.events)
            if receipt.events
            else len(receipt.transaction.args)
        )
    return deployed


def _run_cell(
    corpus: Corpus,
    content_store: ContentStore,
    centroids: CentroidSet,
    variant: Variant,
    queries: Dict[str, List[BenchQuery]],
    config: BenchConfig,
    settings: Settings,
    weights: ScorerWeights,
    cache: PooledMatrixCache,
) -> List[BenchRow]:
    # pylint: disable=too-many-locals
    encoding = KeyEncoding(config.key_encoding)
    keys = [to_fixed_point(fp) for fp in corpus.fingerprints]
    deployed = _deploy_and_ingest(corpus, keys, centroids, variant, encoding, settings)
    deployment = deployed.deployment
    deployment.sync()
    uris = [e.manifest_cid for e in corpus.entries]
    schedule = deployment.ledger.gas
    all_keys = stack(keys)

    rows = []
    for kind in QUERY_KINDS:
        batch = queries[kind]
        query_keys = [to_fixed_point(q.fingerprint) for q in batch]
        predict_times, retrieval_times = [], []
        results = []
        for rep in range(config.repetitions):
            rep_results = [query(deployment, key, config.top_k) for key in query_keys]
            predict_times.append(
                statistics.fmean(r.predict_seconds for r in rep_results)
            )
            retrieval_times.append(
                statistics.fmean(r.retrieval_seconds for r in rep_results)
            )
            if rep == 0:
                results = rep_results

        records = []
        for q, key, result in zip(batch, query_keys, results):
            match = resolve_match(
                q.image,
                result,
                weights,
                config.threshold,
                content_store,
                cache,
            )
            members = deployed.members.get(result.shard, [])
            shard_scan = rank(
                key,
                all_keys[members] if members else all_keys[:0],
                [uris[i] for i in members],
                config.top_k,
            )
            global_scan = None
            if centroids.k == 1:
                global_scan = tuple(
                    c.uri for c in rank(key, all_keys, uris, config.top_k)
                )
            ops = result.predict_ops
            if result.predict_on_chain:
                base = schedule.tx_base + schedule.calldata_cost(
                    len(encode_key_payload(key, encoding))
                )
                ops = (result.predict_gas - base) // schedule.compute_per_distance_op
            records.append(
                QueryRecord(
                    variant.value,
                    centroids.k,
                    len(corpus),
                    kind,
                    q.query_id,
                    uris[q.source],
                    match.uri if match else None,
                    result.shard,
                    deployed.shard_of[q.source],
                    tuple(result.uris),
                    tuple(c.uri for c in shard_scan),
                    global_scan,
                    result.predict_on_chain,
                    result.retrieval_on_chain,
                    int(ops),
                )
            )
        correct = sum(1 for r in records if r.correct)
        rows.append(
            BenchRow(
                variant.value,
                centroids.k,
                len(corpus),
                kind,
                100.0 * correct / len(records),
                1000.0 * statistics.median(predict_times),
                statistics.fmean(r.predict_gas for r in results),
                statistics.fmean(r.predict_ops for r in records),
                1000.0 * statistics.median(retrieval_times),
                statistics.fmean(r.retrieval_ops for r in results),
                statistics.fmean(deployed.ingest_gas),
                1000.0 * statistics.fmean(deployed.ingest_seconds),
                tuple(records),
            )
        )
        logger.info(
            "%s k=%d N=%d %s: %.1f%%",
            variant.value,
            centroids.k,
            len(corpus),
            kind,
            rows[-1].accuracy_pct,
        )
    return rows


def stored_corpus(
    size: int, config: BenchConfig, settings: Settings, root: Union[str, Path]
) -> Tuple[Corpus, ContentStore]:
    """
    Generate a corpus into a content store under ``root``.

    :param size: number of images.
    :param config: benchmark config.
    :param settings: settings.
    :param root: parent directory of the content store.

    :return: the corpus and its store.
    """
    content_store = ContentStore(Path(root) / f"store-{size}")
    return make_corpus(size, config, settings, content_store), content_store


def bench_sharding(
    config: BenchConfig,
    settings: Settings,
    weights: ScorerWeights,
    workdir: Union[str, Path],
) -> List[BenchRow]:
    """
    Accuracy and cost against shard count at a fixed corpus size.

    :param config: benchmark config.
    :param settings: settings.
    :param weights: match scorer weights.
    :param workdir: scratch directory for the content store.

    :return: one row per shard count and query kind.
    """
    corpus, content_store = stored_corpus(
        config.corpus_size, config, settings, workdir
    )
    queries = make_queries(corpus, config, settings)
    cache = PooledMatrixCache(weights, maxsize=len(corpus) + 2 * config.query_count)
    variant = Variant(config.sharding_variant)
    rows = []
    for k in config.shard_counts:
        centroids = cluster_for(corpus, k, config, settings)
        rows.extend(
            _run_cell(
                corpus,
                content_store,
                centroids,
                variant,
                queries,
                config,
                settings,
                weights,
                cache,
            )
        )
    return rows


def bench_variants(
    config: BenchConfig,
    settings: Settings,
    weights: ScorerWeights,
    workdir: Union[str, Path],
) -> List[BenchRow]:
    """
    Accuracy and cost of each variant across corpus sizes at fixed k.

    :param config: benchmark config.
    :param settings: settings.
    :param weights: match scorer weights.
    :param workdir: scratch directory for content stores.

    :return: one row per corpus size, variant and query kind.
    """
    rows = []
    for size in config.corpus_sizes:
        corpus, content_store = stored_corpus(size, config, settings, workdir)
        queries = make_queries(corpus, config, settings)
        cache = PooledMatrixCache(weights, maxsize=size + 2 * config.query_count)
        centroids = cluster_for(corpus, min(config.variant_k, size), config, settings)
        for name in config.variants:
            rows.extend(
                _run_cell(
                    corpus,
                    content_store,
                    centroids,
                    Variant(name),
                    queries,
                    config,
                    settings,
                    weights,
                    cache,
                )
            )
    return rows


def bench_costs(
    config: BenchConfig, settings: Settings, workdir: Union[str, Path]
) -> List[CostRow]:
    """
    Ingest gas per variant, key encoding and fingerprint dimension.

    Reduced dimensions come from a PCA projection fitted on the corpus.

    :param config: benchmark config.
    :param settings: settings.
    :param workdir: scratch directory for the content store.

    :return: one row per dimension, variant and encoding.
    """
    size = min(config.cost_corpus_size, config.corpus_size)
    corpus, _ = stored_corpus(size, config, settings, workdir)
    k = min(config.variant_k, size)
    rows = []
    for dims in config.cost_dims:
        fingerprints = corpus.fingerprints
        if dims < fingerprints[0].dim:
            projection = fit_pca(fingerprints, dims)
            fingerprints = [projection.project(fp) for fp in fingerprints]
        keys = [to_fixed_point(fp) for fp in fingerprints]
        centroids = cluster_corpus(fingerprints, k, seed=config.seed)
        for name in config.variants:
            variant = Variant(name)
            for encoding in KeyEncoding:
                deployed = _deploy_and_ingest(
                    corpus, keys, centroids, variant, encoding, settings
                )
                start = time.perf_counter()
                deployed.deployment.sync()
                sync_seconds = time.perf_counter() - start
                rows.append(
                    CostRow(
                        variant.value,
                        encoding.value,
                        dims,
                        size,
                        statistics.fmean(deployed.ingest_gas),
                        statistics.fmean(deployed.event_bytes),
                        1000.0 * sync_seconds / size,
                    )
                )
    return rows


def write_bench_csv(
    path: Union[str, Path],
    rows: Sequence[Union[BenchRow, CostRow]],
    columns: Sequence[str],
    config: BenchConfig,
) -> None:
    """
    Write rows as CSV under a commented YAML header holding the config.

    :param path: destination file.
    :param rows: the rows.
    :param columns: column order.
    :param config: the config the rows were produced with.
    """
    header = yaml.safe_dump({"config": config.to_dict()}, sort_keys=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in header.splitlines():
            f.write(f"# {line}\n")
        writer = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_csv_row())


def read_bench_csv(
    path: Union[str, Path],
) -> Tuple[Dict[str, Any], List[Dict[str, str]]]:
    """
    Read a benchmark CSV.

    :param path: the file.

    :return: the header document and the rows.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    header = [line[2:] for line in lines if line.startswith("# ")]
    body = [line for line in lines if not line.startswith("#")]
    return yaml.safe_load("\n".join(header)) or {}, list(csv.DictReader(body))
