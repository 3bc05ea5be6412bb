"""Content-addressed object store backed by a directory."""

import hashlib
import logging
import os
import re
import tempfile
from pathlib import Path
from typing import Iterator, Union

from consent_registry.constants import CID_PREFIX
from consent_registry.errors import CorruptionError, InvalidInputError, NotFoundError

logger = logging.getLogger(__name__)

_CID_PATTERN = re.compile(r"^cid:[0-9a-f]{64}$")


def compute_cid(data: bytes) -> str:
    """
    Content identifier of a byte string.

    :param data: the content.

    :return: ``cid:`` followed by the lowercase hex SHA-256 digest.
    """
    return CID_PREFIX + hashlib.sha256(data).hexdigest()


def is_cid(value: str) -> bool:
    """
    Whether a string is a well-formed content identifier.

    :param value: candidate string.

    :return: True if well formed.
    """
    return bool(_CID_PATTERN.match(value))


class ContentStore:
    """
    Immutable objects stored one file each, named by digest.

    Objects live at ``<root>/<hex[0:2]>/<hex[2:4]>/<hex>``. Writes go to a
    temporary file that is renamed into place, so readers never see a
    partial object.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, cid: str) -> Path:
        """
        File holding an object.

        :param cid: the content identifier.

        :return: its path, whether or not it exists.

        :raises InvalidInputError: if the identifier is malformed.
        """
        if not is_cid(cid):
            raise InvalidInputError(f"Malformed content identifier {cid!r}.")
        digest = cid[len(CID_PREFIX) :]
        return self.root / digest[:2] / digest[2:4] / digest

    def __contains__(self, cid: object) -> bool:
        return isinstance(cid, str) and is_cid(cid) and self.path_for(cid).is_file()

    def store(self, data: bytes) -> str:
        """
        Store bytes; storing the same bytes again is a no-op.

        :param data: the content.

        :return: its content identifier.
        """
        cid = compute_cid(data)
        path = self.path_for(cid)
        if path.is_file():
            return cid
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        logger.debug("Stored %s (%d bytes)", cid, len(data))
        return cid

    def retrieve(self, cid: str) -> bytes:
        """
        Fetch bytes, verifying their digest.

        :param cid: the content identifier.

        :return: the content.

        :raises NotFoundError: if nothing is stored under ``cid``.
        :raises CorruptionError: if the stored bytes no longer match ``cid``.
        """
        path = self.path_for(cid)
        try:
            data = path.read_bytes()
        except FileNotFoundError as e:
            raise NotFoundError(f"Nothing stored under {cid}.") from e
        if compute_cid(data) != cid:
            raise CorruptionError(f"Stored bytes for {cid} do not match their digest.")
        return data

    def cids(self) -> Iterator[str]:
        """
        Identifiers of all stored objects, in sorted order.

        :return: an iterator of identifiers.
        """
        for path in sorted(self.root.glob("??/??/*")):
            if path.is_file() and not path.name.startswith("."):
                yield CID_PREFIX + path.name


def store(content_store: ContentStore, data: bytes) -> str:
    """
    Store bytes in a content store.

    :param content_store: the store.
    :param data: the content.

    :return: its content identifier.
    """
    return content_store.store(data)


def retrieve(content_store: ContentStore, cid: str) -> bytes:
    """
    Fetch verified bytes from a content store.

    :param content_store: the store.
    :param cid: the content identifier.

    :return: the content.
    """
    return content_store.retrieve(cid)
