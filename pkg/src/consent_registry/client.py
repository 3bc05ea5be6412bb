"""Registry client wrapper."""

import logging
from typing import Optional, Sequence, Tuple

from consent_registry.config import Settings
from consent_registry.errors import InvalidInputError, RegistryError
from consent_registry.fingerprint import (
    Fingerprint,
    FingerprintEncoder,
    compute_fingerprint,
)
from consent_registry.imaging import ImageAsset, encode_png
from consent_registry.ledger import Receipt
from consent_registry.manifest import (
    Decision,
    Manifest,
    TrustList,
    consent_decision,
    load_manifest,
    store_manifest,
)
from consent_registry.matchnet import PooledMatrixCache, ScorerWeights
from consent_registry.registry import (
    Match,
    QueryResult,
    RegistryDeployment,
    ingest,
    query,
    resolve_match,
)
from consent_registry.store import ContentStore

logger = logging.getLogger(__name__)


class RegistryClient:
    """The client-side steps of registering and looking up images."""

    # pylint: disable=too-many-arguments,too-many-positional-arguments
    def __init__(
        self,
        deployment: RegistryDeployment,
        content_store: ContentStore,
        trust: TrustList,
        weights: ScorerWeights,
        settings: Optional[Settings] = None,
        encoder: Optional[FingerprintEncoder] = None,
    ):
        """Initialize the registry client.

        :param deployment: the registry deployment.
        :param content_store: store for images and manifests.
        :param trust: trusted manifest signers.
        :param weights: match scorer weights.
        :param settings: settings; defaults apply when omitted.
        :param encoder: fingerprint encoder; the surrogate when omitted.
        """
        self.deployment = deployment
        self.content_store = content_store
        self.trust = trust
        self.weights = weights
        self.settings = settings or Settings()
        self.encoder = encoder
        self.cache = PooledMatrixCache(weights)

    @property
    def top_k(self) -> int:
        """
        Candidates requested per query.

        :return: the configured top-K.
        """
        return self.settings.matchnet.top_k

    @property
    def threshold(self) -> float:
        """
        Minimum verified match score.

        :return: the configured threshold.
        """
        return self.settings.registry.match_threshold

    def fingerprint(self, image: ImageAsset) -> Fingerprint:
        """
        Fingerprint an image.

        :param image: the image.

        :return: its fingerprint.
        """
        return compute_fingerprint(
            image, self.encoder, seed=self.settings.fingerprint.seed
        )

    def register(self, image: ImageAsset, manifest: Manifest) -> Tuple[str, Receipt]:
        """
        Store an image and its manifest, then ingest the fingerprint.

        :param image: the image.
        :param manifest: its signed manifest; ``asset_cid`` must name the
            image's PNG bytes.

        :return: the manifest identifier and the ingest receipt.

        :raises InvalidInputError: if the manifest names another asset.
        :raises HandlerError: if the ingest transaction failed.
        """
        asset_cid = self.content_store.store(encode_png(image))
        if asset_cid != manifest.asset_cid:
            raise InvalidInputError(
                f"Manifest names {manifest.asset_cid}, image is {asset_cid}."
            )
        manifest_cid = store_manifest(manifest, self.content_store)
        receipt = ingest(self.deployment, self.fingerprint(image), manifest_cid)
        return manifest_cid, receipt.raise_for_status()

    def search(self, image: ImageAsset, top_k: Optional[int] = None) -> QueryResult:
        """
        Query the registry with an image.

        Off-chain indexes are synced first.

        :param image: the query image.
        :param top_k: candidates to return; the configured value if omitted.

        :return: the query result.
        """
        self.deployment.sync()
        return query(self.deployment, self.fingerprint(image), top_k or self.top_k)

    def resolve(
        self, image: ImageAsset, result: Optional[QueryResult] = None
    ) -> Optional[Match]:
        """
        Find the verified registry match of an image.

        :param image: the query image.
        :param result: a prior query result for ``image``; queried if omitted.

        :return: the match, or None.
        """
        result = result or self.search(image)
        return resolve_match(
            image,
            result,
            self.weights,
            self.threshold,
            self.content_store,
            self.cache,
        )

    def get_manifest(self, cid: str) -> Manifest:
        """
        Fetch a manifest.

        :param cid: the manifest identifier.

        :return: the manifest.
        """
        return load_manifest(cid, self.content_store)

    def consent_of(
        self,
        image: ImageAsset,
        required_flags: Optional[Sequence[str]] = None,
    ) -> Tuple[Optional[Match], Decision]:
        """
        Training consent recorded for an image.

        Registry and store failures yield Unknown, never consent.

        :param image: the image.
        :param required_flags: flags that must be allowed; configured default
            if omitted.

        :return: the match (if any) and the decision.
        """
        flags = required_flags or self.settings.consent.required_flags
        try:
            match = self.resolve(image)
        except RegistryError as e:
            logger.warning("Lookup of %s failed: %s", image.asset_id, e)
            return None, Decision.UNKNOWN
        return match, consent_decision(
            match.manifest if match else None, self.trust, flags
        )
