"""Tests for the command-line entrypoint."""

from pathlib import Path

import pytest
import yaml

from consent_registry.main import main


def _run(*argv):
    with pytest.raises(SystemExit) as exit_info:
        main(list(argv))
    return exit_info.value.code


@pytest.fixture(name="workspace")
def fixture_workspace(tmp_path):
    """
    A workspace directory and a small settings file.

    :param tmp_path: pytest's temporary directory.
    :return: the global arguments naming both.
    """
    config = tmp_path / "settings.yaml"
    config.write_text(
        yaml.safe_dump({"bench": {"image_size": 32, "sharding_variant": "E-FOF"}}),
        encoding="utf-8",
    )
    return ["--out", str(tmp_path / "ws"), "--config", str(config)]


def test_registry_pipeline(workspace, capsys):
    """
    Test the corpus, cluster, deploy, ingest, sync and query verbs in turn.

    :param workspace: The global arguments.
    :param capsys: pytest's output capture fixture.
    """
    assert _run(*workspace, "--seed", "3", "gen-corpus", "--n", "8") == 0
    assert _run(*workspace, "--k", "2", "cluster") == 0
    assert _run(*workspace, "deploy") == 0
    assert _run(*workspace, "ingest") == 0
    assert _run(*workspace, "sync") == 0
    capsys.readouterr()

    image = f"{workspace[1]}/corpus/images/img-00002.png"
    assert _run(*workspace, "query", image, "--top-k", "3") == 0

    out = capsys.readouterr().out
    assert "Match cid:" in out
    assert out.strip().endswith(("OptedIn", "OptedOut"))


def test_existing_corpus_is_a_usage_error(workspace, capsys):
    """
    Test that registry errors exit with a usage error.

    :param workspace: The global arguments.
    :param capsys: pytest's output capture fixture.
    """
    assert _run(*workspace, "gen-corpus", "--n", "2") == 0
    assert _run(*workspace, "gen-corpus", "--n", "2") == 2
    assert "force" in capsys.readouterr().err


def test_ingest_without_a_manifest_is_a_usage_error(workspace, capsys):
    """
    Test that a corpus image missing from the manifest index is reported.

    :param workspace: The global arguments.
    :param capsys: pytest's output capture fixture.
    """
    assert _run(*workspace, "gen-corpus", "--n", "4") == 0
    assert _run(*workspace, "--k", "2", "cluster") == 0
    assert _run(*workspace, "deploy") == 0
    index = Path(workspace[1]) / "corpus" / "manifests.tsv"
    lines = index.read_text(encoding="utf-8").splitlines(keepends=True)
    index.write_text("".join(lines[:-1]), encoding="utf-8")
    capsys.readouterr()

    assert _run(*workspace, "ingest") == 2
    assert lines[-1].split("\t")[0] in capsys.readouterr().err


def test_report_of_an_empty_workspace(workspace, tmp_path):
    """
    Test that the report verb succeeds with nothing to report.

    :param workspace: The global arguments.
    :param tmp_path: pytest's temporary directory.
    """
    (tmp_path / "ws").mkdir()

    assert _run(*workspace, "report") == 0


def test_unknown_verb():
    """Test that an unknown verb is rejected by the parser."""
    assert _run("launch") == 2
