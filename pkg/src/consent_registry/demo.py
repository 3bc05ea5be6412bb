"""End-to-end specialisation demo: consent, provenance, credit and payment."""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import yaml

from consent_registry.bench import new_ledger
from consent_registry.client import RegistryClient
from consent_registry.codec import KeyEncoding
from consent_registry.config import Settings
from consent_registry.constants import OPERATOR_ADDRESS, PAYER_ADDRESS
from consent_registry.corpus import image_seed, procedural_image
from consent_registry.errors import InvalidInputError
from consent_registry.fingerprint import compute_fingerprint
from consent_registry.imaging import ImageAsset, encode_png, load_image, save_image
from consent_registry.ledger import (
    Ledger,
    derive_address,
    replay_journal,
    write_journal,
)
from consent_registry.manifest import (
    Ingredient,
    IngredientRole,
    Manifest,
    TrustList,
    build_provenance_graph,
    consent_decision,
    creator,
    derive_signing_key,
    load_manifest,
    opted_out,
    sign_manifest,
    store_manifest,
    training_images_of,
    training_mining,
    wallet,
)
from consent_registry.matchnet import (
    PooledMatrixCache,
    ScoreRecord,
    ScorerWeights,
    write_score_report,
)
from consent_registry.models import DemoCheckContext
from consent_registry.registry import (
    RegistryDeployment,
    Variant,
    cluster_corpus,
    deploy_registry,
)
from consent_registry.store import ContentStore
from consent_registry.workflow import (
    ApportionmentReport,
    ConsentReport,
    CreditShare,
    SyntheticAssetBundle,
    apportion_credit,
    encode_synthetic_provenance,
    filter_training_set,
    mock_generate,
    pay_rewards,
)

logger = logging.getLogger(__name__)

FIXTURE_FILE = "fixture.yaml"
JOURNAL_FILE = "chain.journal"
TRUST_FILE = "trust.txt"
IMAGES_DIR = "images"
STORE_DIR = "store"

BASE_LAB = "base-model-lab"
STUDIO = "specialisation-studio"


def _signer_seed(seed: int, signer_id: str) -> str:
    return f"demo-{seed}:{signer_id}"


@dataclass
class DemoFixture:
    """Registered concept images on a chain, ready for the demo."""

    root: Path
    seed: int
    ledger: Ledger
    deployment: RegistryDeployment
    content_store: ContentStore
    trust: TrustList
    images: List[ImageAsset]
    manifest_cids: Dict[str, str]
    base_model_manifest_cid: str


def _base_model(seed: int, content_store: ContentStore, trust: TrustList) -> str:
    key = derive_signing_key(_signer_seed(seed, BASE_LAB))
    trust.add(BASE_LAB, key)
    archive_cid = content_store.store(f"training-archive:{seed}".encode())
    archive_manifest_cid = store_manifest(
        sign_manifest(Manifest(archive_cid, BASE_LAB, (creator(BASE_LAB),)), key),
        content_store,
    )
    model_cid = content_store.store(f"base-model:{seed}".encode())
    return store_manifest(
        sign_manifest(
            Manifest(
                model_cid,
                BASE_LAB,
                (creator(BASE_LAB),),
                (Ingredient(archive_manifest_cid, IngredientRole.TRAINING_ARCHIVE),),
            ),
            key,
        ),
        content_store,
    )


# pylint: disable=too-many-locals
def build_demo_fixture(
    root: Union[str, Path],
    settings: Settings,
    weights: ScorerWeights,
    force: bool = False,
) -> DemoFixture:
    """
    Register a small concept set, some of it opted out, on a fresh chain.

    Writes the concept images, the content store, the trust list, the
    deployment record and the chain journal under ``root``.

    :param root: fixture directory.
    :param settings: settings; the ``demo`` section sizes the fixture.
    :param weights: match scorer weights.
    :param force: overwrite an existing fixture.

    :return: the fixture.

    :raises InvalidInputError: if ``root`` already holds a fixture and
        ``force`` is not set, or the demo settings are inconsistent.
    """
    demo = settings.demo
    root = Path(root)
    if (root / FIXTURE_FILE).exists() and not force:
        raise InvalidInputError(f"{root} already holds a demo fixture; pass force.")
    if not 0 <= demo.opted_out < demo.images or demo.shards > demo.images:
        raise InvalidInputError("Demo needs an opted-in image and a shard each.")

    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    content_store = ContentStore(root / STORE_DIR)
    trust = TrustList()
    base_model_manifest_cid = _base_model(demo.seed, content_store, trust)

    rng = np.random.default_rng(demo.seed)
    out = {int(i) for i in rng.choice(demo.images, demo.opted_out, replace=False)}
    images = [
        procedural_image(f"concept-{i}", image_seed(demo.seed, i), demo.image_size)
        for i in range(demo.images)
    ]
    fingerprints = [
        compute_fingerprint(image, seed=settings.fingerprint.seed) for image in images
    ]

    ledger = new_ledger(settings, {PAYER_ADDRESS: demo.payer_funds})
    deployment = deploy_registry(
        ledger,
        cluster_corpus(fingerprints, demo.shards, seed=demo.seed),
        Variant(demo.variant),
        OPERATOR_ADDRESS,
        KeyEncoding(settings.registry.key_encoding),
    )
    client = RegistryClient(deployment, content_store, trust, weights, settings)

    manifest_cids = {}
    for i, image in enumerate(images):
        signer_id = f"creator-{i}"
        key = derive_signing_key(_signer_seed(demo.seed, signer_id))
        trust.add(signer_id, key)
        manifest = sign_manifest(
            Manifest(
                content_store.store(encode_png(image)),
                signer_id,
                (
                    creator(signer_id),
                    opted_out() if i in out else training_mining(),
                    wallet(derive_address(f"demo-wallet-{demo.seed}", i)),
                ),
            ),
            key,
        )
        manifest_cids[image.asset_id], _ = client.register(image, manifest)
        save_image(image, root / IMAGES_DIR / f"{image.asset_id}.png")

    trust.save(root / TRUST_FILE)
    write_journal(ledger, root / JOURNAL_FILE)
    with open(root / FIXTURE_FILE, "w", encoding="utf-8") as f:
        yaml.safe_dump(
            {
                "seed": demo.seed,
                "deployment": deployment.to_dict(),
                "images": [image.asset_id for image in images],
                "manifests": manifest_cids,
                "base_model_manifest": base_model_manifest_cid,
            },
            f,
            sort_keys=True,
        )
    logger.info(
        "Demo fixture: %d images, %d opted out, under %s",
        len(images),
        len(out),
        root,
    )
    return DemoFixture(
        root,
        demo.seed,
        ledger,
        deployment,
        content_store,
        trust,
        images,
        manifest_cids,
        base_model_manifest_cid,
    )


def load_demo_fixture(root: Union[str, Path]) -> DemoFixture:
    """
    Reopen a fixture written by :func:`build_demo_fixture`.

    The chain is rebuilt from its journal.

    :param root: fixture directory.

    :return: the fixture.

    :raises NotFoundError: if the fixture's contracts are missing.
    :raises CorruptionError: if the journal does not replay.
    """
    root = Path(root)
    with open(root / FIXTURE_FILE, "r", encoding="utf-8") as f:
        record = yaml.safe_load(f)
    ledger = replay_journal(root / JOURNAL_FILE)
    return DemoFixture(
        root,
        int(record["seed"]),
        ledger,
        RegistryDeployment.from_dict(record["deployment"], ledger),
        ContentStore(root / STORE_DIR),
        TrustList.load(root / TRUST_FILE),
        [
            load_image(root / IMAGES_DIR / f"{asset_id}.png", asset_id)
            for asset_id in record["images"]
        ],
        dict(record["manifests"]),
        record["base_model_manifest"],
    )


@dataclass
class DemoResult:
    """Everything one demo run produced."""

    consent: ConsentReport
    synthetic: ImageAsset
    bundle: SyntheticAssetBundle
    shares: List[CreditShare]
    apportionment: ApportionmentReport
    context: DemoCheckContext
    state_hash: str


def _balances(ledger: Ledger, addresses: List[str]) -> Dict[str, int]:
    return {address: ledger.balance_of(address) for address in sorted(addresses)}


def demo_dreambooth(
    fixture: DemoFixture,
    budget: int,
    settings: Settings,
    weights: ScorerWeights,
    out: Optional[Union[str, Path]] = None,
) -> DemoResult:
    """
    Filter the concept set by consent, specialise on what is usable,
    record the provenance of a generated image and pay its contributors.

    :param fixture: the registered concept set.
    :param budget: tokens to distribute.
    :param settings: settings.
    :param weights: match scorer weights.
    :param out: directory for the JSON reports, the score report and the
        updated chain journal.

    :return: the run's reports and check context.

    :raises InvalidInputError: if no concept image is usable.
    :raises InsufficientFundsError: if the payer cannot cover the budget.
    """
    cache = PooledMatrixCache(weights)
    content_store = fixture.content_store
    consent = filter_training_set(
        fixture.images,
        fixture.deployment,
        content_store,
        weights,
        settings.registry.match_threshold,
        fixture.trust,
        settings.consent.required_flags,
        settings.matchnet.top_k,
        cache=cache,
    )
    usable = [image for image in fixture.images if image.asset_id in consent.usable]
    synthetic = mock_generate(usable, fixture.seed)

    concept_cids = [fixture.manifest_cids[image.asset_id] for image in usable]
    model_blob = hashlib.sha256(
        json.dumps(["specialised-model", fixture.seed, concept_cids]).encode()
    ).digest()
    bundle = encode_synthetic_provenance(
        concept_cids,
        fixture.base_model_manifest_cid,
        model_blob,
        encode_png(synthetic),
        STUDIO,
        derive_signing_key(_signer_seed(fixture.seed, STUDIO)),
        content_store,
        fixture.trust,
    )
    shares = apportion_credit(
        synthetic, bundle, content_store, weights, settings.apportionment.lam, cache
    )

    manifests = {
        asset_id: load_manifest(cid, content_store)
        for asset_id, cid in fixture.manifest_cids.items()
    }
    wallets = {m.asset_cid: m.wallet_address for m in manifests.values()}
    tracked = [PAYER_ADDRESS] + [w for w in wallets.values() if w]
    balances_before = _balances(fixture.ledger, tracked)
    apportionment = pay_rewards(fixture.ledger, PAYER_ADDRESS, shares, budget)
    balances_after = _balances(fixture.ledger, tracked)

    graph = build_provenance_graph(bundle.synthetic_manifest_cid, content_store)
    context = DemoCheckContext(
        consent=consent,
        apportionment=apportionment,
        decisions={
            asset_id: consent_decision(
                manifest, fixture.trust, settings.consent.required_flags
            ).value
            for asset_id, manifest in manifests.items()
        },
        wallets=wallets,
        asset_cids={
            asset_id: manifest.asset_cid for asset_id, manifest in manifests.items()
        },
        provenance_assets=[cid for cid, _ in training_images_of(graph)],
        balances_before=balances_before,
        balances_after=balances_after,
    )
    result = DemoResult(
        consent,
        synthetic,
        bundle,
        shares,
        apportionment,
        context,
        fixture.ledger.state_hash(),
    )
    if out is not None:
        save_demo_outputs(result, fixture.ledger, out)
    return result


def save_demo_outputs(
    result: DemoResult, ledger: Ledger, out: Union[str, Path]
) -> None:
    """
    Write a demo run's reports.

    :param result: the run.
    :param ledger: the chain after payment.
    :param out: output directory.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "consent.json").write_text(result.consent.to_json(), encoding="utf-8")
    (out / "apportionment.json").write_text(
        result.apportionment.to_json(), encoding="utf-8"
    )
    (out / "provenance.json").write_text(
        json.dumps(result.bundle.to_dict(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    write_score_report(
        out / "scores.jsonl",
        (
            ScoreRecord(result.synthetic.asset_id, s.asset_cid, s.score, s.weight)
            for s in result.shares
        ),
    )
    write_journal(ledger, out / JOURNAL_FILE)
