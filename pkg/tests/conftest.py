"""Common pytest fixtures and test setup."""

# pylint: disable=redefined-outer-name
import os

import pytest

from consent_registry.bench import (
    BenchConfig,
    bench_costs,
    bench_sharding,
    bench_variants,
)
from consent_registry.config import Settings, load_settings
from consent_registry.demo import build_demo_fixture, demo_dreambooth, load_demo_fixture
from consent_registry.main import load_overrides, run_bench_checks, run_demo_checks
from consent_registry.matchnet import weights_from_settings
from consent_registry.models import BenchCheckContext


@pytest.fixture(scope="session")
def settings():
    """
    Settings for the test run.

    :return: settings from ``REGISTRY_CONFIG`` if set, else the defaults.
    """
    if os.environ.get("REGISTRY_CONFIG"):
        return load_settings()
    return Settings()


@pytest.fixture(scope="session")
def weights(settings):
    """
    Match scorer weights named by the settings.

    :param settings: The test settings.
    :return: the scorer weights.
    """
    return weights_from_settings(settings.matchnet)


@pytest.fixture(scope="session")
def overrides():
    """
    Violation overrides.

    :return: overrides from ``REGISTRY_OVERRIDES_FILE``, or none.
    """
    return load_overrides(os.environ.get("REGISTRY_OVERRIDES_FILE"))


@pytest.fixture(scope="session")
def bench_config(settings):
    """
    A benchmark configuration small enough for every test run.

    Accuracy thresholds are relaxed; the full-size thresholds are exercised
    by the acceptance tests.

    :param settings: The test settings.
    :return: the config.
    """
    return BenchConfig.from_settings(
        settings,
        corpus_size=60,
        query_count=12,
        shard_counts=(1, 3, 5),
        corpus_sizes=(60,),
        variant_k=5,
        cost_dims=(256, 32),
        cost_corpus_size=40,
        repetitions=1,
        perturbed_floor=0.0,
        degradation_points=100.0,
    )


@pytest.fixture(scope="session")
def bench_workdir(tmp_path_factory):
    """
    Scratch directory shared by the benchmark runs.

    :param tmp_path_factory: pytest's temporary directory factory.
    :return: the directory.
    """
    return tmp_path_factory.mktemp("bench")


@pytest.fixture(scope="session")
def sharding_rows(bench_config, settings, weights, bench_workdir):
    """
    Rows of the sharding benchmark.

    :param bench_config: The benchmark config.
    :param settings: The test settings.
    :param weights: The scorer weights.
    :param bench_workdir: The scratch directory.
    :return: one row per shard count and query kind.
    """
    return bench_sharding(bench_config, settings, weights, bench_workdir)


@pytest.fixture(scope="session")
def variant_rows(bench_config, settings, weights, bench_workdir):
    """
    Rows of the variant benchmark.

    :param bench_config: The benchmark config.
    :param settings: The test settings.
    :param weights: The scorer weights.
    :param bench_workdir: The scratch directory.
    :return: one row per corpus size, variant and query kind.
    """
    return bench_variants(bench_config, settings, weights, bench_workdir)


@pytest.fixture(scope="session")
def cost_rows(bench_config, settings, bench_workdir):
    """
    Rows of the ingest cost benchmark.

    :param bench_config: The benchmark config.
    :param settings: The test settings.
    :param bench_workdir: The scratch directory.
    :return: one row per dimension, variant and encoding.
    """
    return bench_costs(bench_config, settings, bench_workdir)


@pytest.fixture(scope="session")
def bench_report(bench_config, sharding_rows, variant_rows, cost_rows, overrides):
    """
    Run every benchmark check.

    :param bench_config: The benchmark config.
    :param sharding_rows: The sharding rows.
    :param variant_rows: The variant rows.
    :param cost_rows: The cost rows.
    :param overrides: The violation overrides.
    :return: the ``bench`` report.
    """
    context = BenchCheckContext(bench_config, sharding_rows, variant_rows, cost_rows)
    return run_bench_checks(context, overrides)


@pytest.fixture(scope="session")
def demo_fixture_root(settings, weights, tmp_path_factory):
    """
    Directory holding a registered demo fixture.

    :param settings: The test settings.
    :param weights: The scorer weights.
    :param tmp_path_factory: pytest's temporary directory factory.
    :return: the fixture directory.
    """
    root = tmp_path_factory.mktemp("demo-fixture")
    build_demo_fixture(root, settings, weights)
    return root


@pytest.fixture(scope="session")
def demo_result(demo_fixture_root, settings, weights, tmp_path_factory):
    """
    One run of the demo on a freshly loaded fixture.

    :param demo_fixture_root: The fixture directory.
    :param settings: The test settings.
    :param weights: The scorer weights.
    :param tmp_path_factory: pytest's temporary directory factory.
    :return: the demo result.
    """
    return demo_dreambooth(
        load_demo_fixture(demo_fixture_root),
        settings.demo.budget,
        settings,
        weights,
        out=tmp_path_factory.mktemp("demo-out"),
    )


@pytest.fixture(scope="session")
def demo_report(demo_result, settings, overrides):
    """
    Run every demo check.

    :param demo_result: The demo run.
    :param settings: The test settings.
    :param overrides: The violation overrides.
    :return: the ``demo`` report.
    """
    return run_demo_checks(demo_result.context, settings.demo.seed, overrides)


@pytest.fixture(scope="session")
def all_reports(bench_report, demo_report):
    """
    Every report, keyed by name.

    :param bench_report: The benchmark report.
    :param demo_report: The demo report.
    :return: a dictionary of reports keyed by name.
    """
    return {report.name: report for report in (bench_report, demo_report)}
