"""Consent filtering, synthetic provenance, credit apportionment and payment."""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from consent_registry.constants import DEFAULT_REQUIRED_FLAGS
from consent_registry.errors import (
    InsufficientFundsError,
    InvalidInputError,
    RegistryError,
)
from consent_registry.fingerprint import FingerprintEncoder, compute_fingerprint
from consent_registry.imaging import ImageAsset, decode_image
from consent_registry.ledger import Ledger
from consent_registry.manifest import (
    Decision,
    Ingredient,
    IngredientRole,
    Manifest,
    TrustList,
    build_provenance_graph,
    consent_decision,
    creator,
    load_manifest,
    sign_manifest,
    store_manifest,
    training_images_of,
)
from consent_registry.matchnet import (
    PooledMatrixCache,
    ScorerWeights,
    apportion_score,
    apportionment_weights,
    largest_remainder,
)
from consent_registry.registry import RegistryDeployment, query, resolve_match
from consent_registry.store import ContentStore

logger = logging.getLogger(__name__)


def _to_json(document: Dict[str, Any]) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


# Consent filtering


@dataclass(frozen=True)
class ConsentEntry:
    """Consent outcome of one candidate training image."""

    asset_id: str
    uri: Optional[str]
    score: Optional[float]
    decision: Decision


@dataclass
class ConsentReport:
    """Consent outcomes of a candidate training set, in input order."""

    entries: List[ConsentEntry] = field(default_factory=list)

    @property
    def usable(self) -> List[str]:
        """
        Images that may be trained on.

        :return: asset ids whose decision is OptedIn.
        """
        return [e.asset_id for e in self.entries if e.decision is Decision.OPTED_IN]

    def counts(self) -> Dict[str, int]:
        """
        Number of images per decision.

        :return: count per decision value, every decision present.
        """
        counts = {d.value: 0 for d in Decision}
        for entry in self.entries:
            counts[entry.decision.value] += 1
        return counts

    def to_dict(self) -> Dict[str, Any]:
        """
        Plain-data form.

        :return: entries, summary counts and the usable set.
        """
        return {
            "entries": [
                {
                    "asset_id": e.asset_id,
                    "uri": e.uri,
                    "score": e.score,
                    "decision": e.decision.value,
                }
                for e in self.entries
            ],
            "counts": self.counts(),
            "usable": self.usable,
        }

    def to_json(self) -> str:
        """
        Deterministic JSON.

        :return: sorted-key JSON text.
        """
        return _to_json(self.to_dict())


# pylint: disable=too-many-arguments,too-many-positional-arguments
def filter_training_set(
    images: Sequence[ImageAsset],
    deployment: RegistryDeployment,
    content_store: ContentStore,
    weights: ScorerWeights,
    threshold: float,
    trust: TrustList,
    required_flags: Sequence[str] = tuple(DEFAULT_REQUIRED_FLAGS),
    top_k: int = 10,
    encoder: Optional[FingerprintEncoder] = None,
    cache: Optional[PooledMatrixCache] = None,
) -> ConsentReport:
    """
    Look every candidate training image up in the registry.

    Each image is fingerprinted, queried, verified by pairwise scoring and
    its manifest's consent flags evaluated. Any failure along the way makes
    that image Unknown.

    :param images: candidate training images with distinct asset ids.
    :param deployment: the registry.
    :param content_store: store holding manifests and registered images.
    :param weights: match scorer weights.
    :param threshold: minimum verified match score.
    :param trust: trusted manifest signers.
    :param required_flags: flags that must all be allowed.
    :param top_k: candidates per query.
    :param encoder: fingerprint encoder; the surrogate when omitted.
    :param cache: pooled-matrix cache for ``weights``.

    :return: the consent report.

    :raises InvalidInputError: if two images share an asset id.
    """
    ids = [image.asset_id for image in images]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("Candidate images must have distinct asset ids.")
    cache = cache or PooledMatrixCache(weights)
    deployment.sync()
    report = ConsentReport()
    for image in images:
        try:
            result = query(deployment, compute_fingerprint(image, encoder), top_k)
            match = resolve_match(
                image, result, weights, threshold, content_store, cache
            )
        except RegistryError as e:
            logger.warning("Lookup of %s failed: %s", image.asset_id, e)
            report.entries.append(
                ConsentEntry(image.asset_id, None, None, Decision.UNKNOWN)
            )
            continue
        decision = consent_decision(
            match.manifest if match else None, trust, required_flags
        )
        report.entries.append(
            ConsentEntry(
                image.asset_id,
                match.uri if match else None,
                match.score if match else None,
                decision,
            )
        )
    logger.info("Consent filter: %s", report.counts())
    return report


# Synthetic provenance


@dataclass(frozen=True)
class SyntheticAssetBundle:
    """Stored identifiers of a synthetic image, its model and their manifests."""

    synthetic_cid: str
    synthetic_manifest_cid: str
    model_cid: str
    model_manifest_cid: str
    concept_manifest_cids: tuple
    base_model_manifest_cid: str

    def to_dict(self) -> Dict[str, Any]:
        """
        Plain-data form.

        :return: all identifiers.
        """
        return {
            "synthetic_cid": self.synthetic_cid,
            "synthetic_manifest_cid": self.synthetic_manifest_cid,
            "model_cid": self.model_cid,
            "model_manifest_cid": self.model_manifest_cid,
            "concept_manifest_cids": list(self.concept_manifest_cids),
            "base_model_manifest_cid": self.base_model_manifest_cid,
        }


def _signed_ingredient(cid: str, content_store: ContentStore, trust: TrustList) -> None:
    if not trust.verify(load_manifest(cid, content_store)):
        raise InvalidInputError(f"Ingredient manifest {cid} is not trusted-signed.")


def encode_synthetic_provenance(
    concept_manifest_cids: Sequence[str],
    base_model_manifest_cid: str,
    model_blob: bytes,
    synthetic_bytes: bytes,
    signer_id: str,
    signer_key: Ed25519PrivateKey,
    content_store: ContentStore,
    trust: TrustList,
) -> SyntheticAssetBundle:
    """
    Record how a synthetic image was made.

    The specialised model's manifest lists the concept images and the base
    model as ingredients; the synthetic image's manifest lists the model.

    :param concept_manifest_cids: manifests of the concept images.
    :param base_model_manifest_cid: manifest of the base model.
    :param model_blob: the specialised model's bytes.
    :param synthetic_bytes: the synthetic image's bytes.
    :param signer_id: signer of the new manifests.
    :param signer_key: the signer's private key.
    :param content_store: the store.
    :param trust: trusted signers; every ingredient must verify.

    :return: identifiers of everything stored.

    :raises NotFoundError: if an ingredient manifest is not stored.
    :raises InvalidInputError: if an ingredient manifest does not verify.
    """
    for cid in list(concept_manifest_cids) + [base_model_manifest_cid]:
        _signed_ingredient(cid, content_store, trust)

    model_cid = content_store.store(model_blob)
    model_manifest = sign_manifest(
        Manifest(
            model_cid,
            signer_id,
            (creator(signer_id),),
            tuple(
                Ingredient(cid, IngredientRole.CONCEPT_IMAGE)
                for cid in concept_manifest_cids
            )
            + (Ingredient(base_model_manifest_cid, IngredientRole.BASE_MODEL),),
        ),
        signer_key,
    )
    model_manifest_cid = store_manifest(model_manifest, content_store)

    synthetic_cid = content_store.store(synthetic_bytes)
    synthetic_manifest = sign_manifest(
        Manifest(
            synthetic_cid,
            signer_id,
            (creator(signer_id),),
            (Ingredient(model_manifest_cid, IngredientRole.SPECIALIZED_MODEL),),
        ),
        signer_key,
    )
    synthetic_manifest_cid = store_manifest(synthetic_manifest, content_store)
    logger.info(
        "Synthetic asset %s derives from %d concept images",
        synthetic_cid,
        len(concept_manifest_cids),
    )
    return SyntheticAssetBundle(
        synthetic_cid,
        synthetic_manifest_cid,
        model_cid,
        model_manifest_cid,
        tuple(concept_manifest_cids),
        base_model_manifest_cid,
    )


def mock_generate(images: Sequence[ImageAsset], seed: int) -> ImageAsset:
    """
    Deterministic stand-in for a specialised generator.

    Blends the concept images, resized to the first one's size, with one
    seeded dominant image holding 80 % of the weight, then shifts the result
    by a few seeded pixels.

    :param images: the concept images.
    :param seed: blend seed.

    :return: the synthetic image.

    :raises InvalidInputError: for an empty concept set.
    """
    if not images:
        raise InvalidInputError("Nothing to generate from.")
    rng = np.random.default_rng(seed)
    size = (images[0].width, images[0].height)
    arrays = [
        np.asarray(image.to_pil().resize(size), dtype=np.float64) for image in images
    ]
    mix = 0.2 * rng.dirichlet(np.ones(len(arrays)))
    mix[int(rng.integers(len(arrays)))] += 0.8
    blended = sum(w * a for w, a in zip(mix, arrays))
    shift = rng.integers(-3, 4, size=2)
    blended = np.roll(blended, tuple(int(s) for s in shift), axis=(0, 1))
    return ImageAsset.from_array(f"synthetic-{seed}", blended)


# Apportionment and payment


@dataclass(frozen=True)
class CreditShare:
    """Credit owed to one concept image."""

    asset_cid: str
    score: float
    weight: float
    wallet: Optional[str]
    payable_weight: float = 0.0


def apportion_credit(
    synthetic_image: ImageAsset,
    bundle: SyntheticAssetBundle,
    content_store: ContentStore,
    weights: ScorerWeights,
    lam: float = 0.7,
    cache: Optional[PooledMatrixCache] = None,
) -> List[CreditShare]:
    """
    Score a synthetic image against the concept images in its provenance.

    Weights follow :func:`apportionment_weights`. Images without a wallet keep
    their weight but are not payable; payable weights are renormalised over
    the images that have one.

    :param synthetic_image: the synthetic image.
    :param bundle: its stored provenance.
    :param content_store: store holding manifests and concept images.
    :param weights: match scorer weights.
    :param lam: apportionment threshold.
    :param cache: pooled-matrix cache for ``weights``.

    :return: one share per concept image, sorted by asset identifier.
    """
    graph = build_provenance_graph(bundle.synthetic_manifest_cid, content_store)
    concepts = training_images_of(graph)
    scores = []
    for asset_cid, _ in concepts:
        image = decode_image(asset_cid, content_store.retrieve(asset_cid))
        scores.append(apportion_score(synthetic_image, image, weights, cache))
    shares = apportionment_weights(scores, lam)

    payable_total = math.fsum(
        w for w, (_, m) in zip(shares, concepts) if m.wallet_address
    )
    result = []
    for (asset_cid, manifest), score, weight in zip(concepts, scores, shares):
        address = manifest.wallet_address
        if address is None and weight > 0:
            logger.warning("Concept image %s has no wallet; not paid", asset_cid)
        payable = weight / payable_total if address and payable_total > 0 else 0.0
        result.append(CreditShare(asset_cid, score, weight, address, payable))
    return result


@dataclass(frozen=True)
class Payment:
    """One concept image's payout."""

    asset_cid: str
    score: float
    weight: float
    wallet: Optional[str]
    amount: int
    transaction: Optional[int] = None


@dataclass
class ApportionmentReport:
    """Payouts of one budget."""

    payer: str
    budget: int
    payments: List[Payment] = field(default_factory=list)
    gas_fees: int = 0

    @property
    def total_paid(self) -> int:
        """
        Tokens transferred.

        :return: the sum of amounts.
        """
        return sum(p.amount for p in self.payments)

    @property
    def transactions(self) -> List[int]:
        """
        Ledger indexes of the transfers.

        :return: transaction indexes in payment order.
        """
        return [p.transaction for p in self.payments if p.transaction is not None]

    def to_dict(self) -> Dict[str, Any]:
        """
        Plain-data form.

        :return: payer, budget, payments, totals and transactions.
        """
        return {
            "payer": self.payer,
            "budget": self.budget,
            "payments": [
                {
                    "asset_cid": p.asset_cid,
                    "score": p.score,
                    "weight": p.weight,
                    "wallet": p.wallet,
                    "amount": p.amount,
                    "transaction": p.transaction,
                }
                for p in self.payments
            ],
            "total_paid": self.total_paid,
            "gas_fees": self.gas_fees,
            "transactions": self.transactions,
        }

    def to_json(self) -> str:
        """
        Deterministic JSON.

        :return: sorted-key JSON text.
        """
        return _to_json(self.to_dict())


def pay_rewards(
    ledger: Ledger, payer: str, shares: Sequence[CreditShare], budget: int
) -> ApportionmentReport:
    """
    Pay a budget out to concept-image wallets.

    Amounts come from :func:`largest_remainder` over the payable weights.
    Every transfer is checked as affordable before the first is submitted.

    :param ledger: the ledger.
    :param payer: paying account.
    :param shares: credit shares.
    :param budget: tokens to distribute.

    :return: the report.

    :raises InsufficientFundsError: if the payer cannot cover the budget plus
        gas; no transfer is made.
    """
    amounts = largest_remainder(
        [s.payable_weight for s in shares], budget, [s.asset_cid for s in shares]
    )
    transfers = sum(1 for a in amounts if a > 0)
    gas_fees = transfers * ledger.gas.tx_base * ledger.gas_price
    needed = sum(amounts) + gas_fees
    if ledger.balance_of(payer) < needed:
        raise InsufficientFundsError(
            f"{payer} holds {ledger.balance_of(payer)}, payments need {needed}."
        )
    report = ApportionmentReport(payer, budget, gas_fees=gas_fees)
    for share, amount in zip(shares, amounts):
        index = None
        if amount > 0:
            index = ledger.transfer(payer, share.wallet, amount).index
        report.payments.append(
            Payment(
                share.asset_cid,
                share.score,
                share.weight,
                share.wallet,
                amount,
                index,
            )
        )
    logger.info("Paid %d of %d to %d wallets", report.total_paid, budget, transfers)
    return report
