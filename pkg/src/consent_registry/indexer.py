"""Off-chain shard indexes folded from contract event logs."""

import logging
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from consent_registry.codec import (
    Candidate,
    ShardEntry,
    decode_ingest_payload,
    key_topic,
    rank,
)
from consent_registry.constants import FINGERPRINT_DIM
from consent_registry.errors import InvalidInputError
from consent_registry.fixedpoint import FixedPointVector
from consent_registry.ledger import EventRecord, Ledger

logger = logging.getLogger(__name__)


@dataclass
class OffChainShardIndex:
    """
    Entries of one shard, rebuilt from its ingest events.

    ``last_seen_sequence`` is the sequence number of the newest event
    consumed, or -1 before the first sync.
    """

    shard_id: int
    address: str
    dim: int = FINGERPRINT_DIM
    entries: List[ShardEntry] = field(default_factory=list)
    last_seen_sequence: int = -1
    quarantined: List[EventRecord] = field(default_factory=list)
    _matrix: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _lock: threading.Lock = field(
        default_factory=threading.Lock, repr=False, compare=False
    )

    def snapshot(self) -> Tuple[Tuple[str, ...], np.ndarray]:
        """
        Consistent view of the entries up to the cursor.

        :return: URIs and the (N, D) key matrix, both in ingest order.
        """
        with self._lock:
            if self._matrix is None or len(self._matrix) != len(self.entries):
                self._matrix = (
                    np.vstack([e.key.values for e in self.entries])
                    if self.entries
                    else np.zeros((0, self.dim), dtype=np.int64)
                )
            return tuple(e.uri for e in self.entries), self._matrix

    def search(self, query: FixedPointVector, top_k: int) -> List[Candidate]:
        """
        Exhaustive scan of the shard.

        :param query: the query key.
        :param top_k: candidates to keep.

        :return: ranked candidates; empty for an empty shard.
        """
        uris, keys = self.snapshot()
        return rank(query, keys, uris, top_k)

    def _consume(self, record: EventRecord) -> None:
        try:
            payload = decode_ingest_payload(record.data)
            if payload.key.dim != self.dim:
                raise InvalidInputError(
                    f"key has {payload.key.dim} components, expected {self.dim}"
                )
            if not record.topics or record.topics[0] != key_topic(payload.key):
                raise InvalidInputError("topic does not match key")
        except InvalidInputError as e:
            logger.warning(
                "Quarantined event %d of shard %d: %s",
                record.sequence,
                self.shard_id,
                e,
            )
            self.quarantined.append(record)
            return
        self.entries.append(ShardEntry(payload.key, payload.uri))


def sync_indexer(index: OffChainShardIndex, ledger: Ledger) -> OffChainShardIndex:
    """
    Consume a shard's events after the index cursor.

    Re-syncing with no new events changes nothing.

    :param index: the index; updated in place.
    :param ledger: the ledger to read.

    :return: the same index.
    """
    records = ledger.get_events(
        emitter=index.address, from_sequence=index.last_seen_sequence + 1
    )
    if not records:
        return index
    with index._lock:  # pylint: disable=protected-access
        for record in records:
            if record.sequence <= index.last_seen_sequence:
                continue
            index._consume(record)  # pylint: disable=protected-access
            index.last_seen_sequence = record.sequence
    logger.debug(
        "Shard %d synced to sequence %d (%d entries)",
        index.shard_id,
        index.last_seen_sequence,
        len(index.entries),
    )
    return index
