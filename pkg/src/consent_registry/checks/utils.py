"""Utility functions for checks."""

from collections import defaultdict
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple

from consent_registry.bench import BenchRow, QueryRecord


def get_rows_by(
    rows: Iterable[BenchRow], key: Callable[[BenchRow], Any]
) -> Dict[Any, List[BenchRow]]:
    """
    Group rows.

    :param rows: benchmark rows.
    :param key: grouping key of a row.

    :return: rows keyed by group, each group in input order.
    """
    groups = defaultdict(list)
    for row in rows:
        groups[key(row)].append(row)
    return dict(groups)


def get_records(rows: Iterable[BenchRow]) -> List[QueryRecord]:
    """
    Flatten the per-query records of rows.

    :param rows: benchmark rows.

    :return: every query record.
    """
    return [record for row in rows for record in row.queries]


def row_subject(row: BenchRow) -> str:
    """
    Report subject naming a row.

    :param row: the row.

    :return: e.g. ``E-FOF/k=25/N=2000/perturbed``.
    """
    return f"{row.variant}/k={row.k}/N={row.corpus_size}/{row.query_kind}"


def record_subject(record: QueryRecord) -> str:
    """
    Report subject naming a query.

    :param record: the query record.

    :return: e.g. ``C-OOO/k=25/N=2000/img-00042/perturbed``.
    """
    return f"{record.variant}/k={record.k}/N={record.corpus_size}/{record.query_id}"


def get_inversions(
    values: Sequence[float], tolerance: float
) -> Tuple[List[int], List[int]]:
    """
    Find where a sequence that should not increase does.

    :param values: the sequence.
    :param tolerance: relative rise that counts as noise.

    :return: indices ``i`` with ``values[i + 1] > values[i]``, and the subset
        whose rise exceeds ``tolerance``.
    """
    rises, large = [], []
    for i, (before, after) in enumerate(zip(values, values[1:])):
        if after > before:
            rises.append(i)
            if after > before * (1 + tolerance):
                large.append(i)
    return rises, large
