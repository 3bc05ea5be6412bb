"""Seeded procedural image corpora with signed consent manifests."""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from PIL import Image, ImageDraw

from consent_registry.errors import InvalidInputError
from consent_registry.fingerprint import (
    Fingerprint,
    FingerprintEncoder,
    compute_fingerprint,
)
from consent_registry.fixedpoint import to_fixed_point
from consent_registry.imaging import ImageAsset, encode_png, load_image, save_image
from consent_registry.ledger import derive_address
from consent_registry.manifest import (
    Decision,
    FlagValue,
    Manifest,
    TrustList,
    creator,
    derive_signing_key,
    load_manifest,
    opted_out,
    sign_manifest,
    store_manifest,
    training_mining,
    wallet,
)
from consent_registry.store import ContentStore

logger = logging.getLogger(__name__)

CORPUS_FILE = "corpus.tsv"
MANIFESTS_FILE = "manifests.tsv"
TRUST_FILE = "trust.txt"
SIGNERS_FILE = "signers.tsv"
IMAGES_DIR = "images"


def image_seed(seed: int, index: int) -> int:
    """
    Seed of one corpus image.

    :param seed: corpus seed.
    :param index: image position (or retry slot).

    :return: a 32-bit seed.
    """
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def procedural_image(asset_id: str, seed: int, size: int = 96) -> ImageAsset:
    """
    Draw a seeded image: a two-colour gradient, a sinusoidal texture and a
    few filled shapes.

    :param asset_id: identifier of the image.
    :param seed: drawing seed.
    :param size: side length in pixels.

    :return: the image.
    """
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size] / size

    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * x + np.sin(angle) * y
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    start, end = rng.uniform(0, 255, size=(2, 3))
    canvas = start * (1 - ramp)[..., np.newaxis] + end * ramp[..., np.newaxis]

    freq = rng.uniform(2, 12)
    direction = rng.uniform(0, 2 * np.pi)
    wave = np.sin(
        2 * np.pi * freq * (np.cos(direction) * x + np.sin(direction) * y)
        + rng.uniform(0, 2 * np.pi)
    )
    canvas += rng.uniform(10, 50) * wave[..., np.newaxis] * rng.uniform(-1, 1, 3)

    picture = Image.fromarray(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    draw = ImageDraw.Draw(picture)
    for _ in range(int(rng.integers(2, 6))):
        x0, y0 = rng.integers(0, size - 8, size=2)
        x1 = int(x0 + rng.integers(8, size - x0 + 1))
        y1 = int(y0 + rng.integers(8, size - y0 + 1))
        fill = tuple(int(c) for c in rng.integers(0, 256, size=3))
        box = [int(x0), int(y0), x1, y1]
        shape = int(rng.integers(3))
        if shape == 0:
            draw.ellipse(box, fill=fill)
        elif shape == 1:
            draw.rectangle(box, fill=fill)
        else:
            apex = ((box[0] + box[2]) // 2, box[1])
            draw.polygon([(box[0], box[3]), apex, (box[2], box[3])], fill=fill)
    return ImageAsset.from_pil(asset_id, picture)


@dataclass
class CorpusEntry:
    """A registered image, its manifest and its fingerprint."""

    asset_id: str
    image: ImageAsset
    asset_cid: str
    manifest: Manifest
    manifest_cid: str
    fingerprint: Fingerprint

    @property
    def expected_decision(self) -> Decision:
        """
        Consent the manifest was generated with.

        :return: OptedIn if every training flag is allowed, else OptedOut.
        """
        flags = self.manifest.flags or {}
        if flags and all(v is FlagValue.ALLOWED for v in flags.values()):
            return Decision.OPTED_IN
        return Decision.OPTED_OUT


@dataclass
class Corpus:
    """A generated corpus."""

    seed: int
    entries: List[CorpusEntry]
    trust: TrustList
    signer_seeds: Dict[str, str]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def fingerprints(self) -> List[Fingerprint]:
        """
        Fingerprints in corpus order.

        :return: one per entry.
        """
        return [e.fingerprint for e in self.entries]

    def by_id(self, asset_id: str) -> CorpusEntry:
        """
        Look an entry up.

        :param asset_id: the asset id.

        :return: the entry.

        :raises InvalidInputError: for an unknown id.
        """
        for entry in self.entries:
            if entry.asset_id == asset_id:
                return entry
        raise InvalidInputError(f"No corpus image {asset_id}.")


def signer_seed(seed: int, signer_id: str) -> str:
    """
    Key seed of a corpus signer.

    :param seed: corpus seed.
    :param signer_id: signer identifier.

    :return: the seed string.
    """
    return f"corpus-{seed}:{signer_id}"


# pylint: disable=too-many-arguments,too-many-positional-arguments,too-many-locals
def generate_corpus(
    n: int,
    seed: int,
    content_store: ContentStore,
    root: Optional[Union[str, Path]] = None,
    force: bool = False,
    image_size: int = 96,
    opt_out_rate: float = 0.3,
    signers: int = 4,
    encoder: Optional[FingerprintEncoder] = None,
    fingerprint_seed: int = 20230917,
) -> Corpus:
    """
    Generate ``n`` images with distinct fingerprints and signed manifests.

    Each manifest carries a creator, randomised consent flags and a wallet.
    Images and manifests go into ``content_store``; with ``root`` the images
    and index files are also written there.

    :param n: number of images.
    :param seed: corpus seed.
    :param content_store: store for PNG bytes and manifests.
    :param root: optional output directory.
    :param force: overwrite an existing corpus under ``root``.
    :param image_size: image side length.
    :param opt_out_rate: probability that an image is opted out.
    :param signers: number of distinct creators.
    :param encoder: fingerprint encoder; the surrogate when omitted.
    :param fingerprint_seed: projection seed of the surrogate encoder.

    :return: the corpus.

    :raises InvalidInputError: if ``n`` < 1 or ``root`` already holds a
        corpus and ``force`` is not set.
    """
    if n < 1:
        raise InvalidInputError("A corpus needs at least one image.")
    if root is not None and (Path(root) / CORPUS_FILE).exists() and not force:
        raise InvalidInputError(f"{root} already holds a corpus; pass force.")

    rng = np.random.default_rng(seed)
    trust = TrustList()
    keys, seeds = {}, {}
    for j in range(signers):
        signer_id = f"creator-{j}"
        seeds[signer_id] = signer_seed(seed, signer_id)
        keys[signer_id] = derive_signing_key(seeds[signer_id])
        trust.add(signer_id, keys[signer_id])

    entries = []
    seen = set()
    slot = 0
    for i in range(n):
        asset_id = f"img-{i:05d}"
        while True:
            image = procedural_image(asset_id, image_seed(seed, slot), image_size)
            slot += 1
            fp = compute_fingerprint(image, encoder, seed=fingerprint_seed)
            key = to_fixed_point(fp)
            if key not in seen:
                seen.add(key)
                break
            logger.debug("Redrawing %s: fingerprint collision", asset_id)

        signer_id = f"creator-{i % signers}"
        consent = opted_out() if rng.random() < opt_out_rate else training_mining()
        asset_cid = content_store.store(encode_png(image))
        manifest = sign_manifest(
            Manifest(
                asset_cid,
                signer_id,
                (
                    creator(signer_id),
                    consent,
                    wallet(derive_address(f"wallet-{seed}", i)),
                ),
            ),
            keys[signer_id],
        )
        manifest_cid = store_manifest(manifest, content_store)
        entries.append(
            CorpusEntry(asset_id, image, asset_cid, manifest, manifest_cid, fp)
        )

    corpus = Corpus(seed, entries, trust, seeds)
    if root is not None:
        save_corpus(corpus, root)
    logger.info("Generated %d corpus images from seed %d", n, seed)
    return corpus


def save_corpus(corpus: Corpus, root: Union[str, Path]) -> None:
    """
    Write a corpus's images and index files.

    :param corpus: the corpus.
    :param root: output directory.
    """
    root = Path(root)
    (root / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    with open(root / CORPUS_FILE, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["asset_id", "file", "asset_cid"])
        for entry in corpus.entries:
            name = f"{IMAGES_DIR}/{entry.asset_id}.png"
            save_image(entry.image, root / name)
            writer.writerow([entry.asset_id, name, entry.asset_cid])
    with open(root / MANIFESTS_FILE, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["asset_id", "manifest_cid", "decision"])
        for entry in corpus.entries:
            writer.writerow(
                [entry.asset_id, entry.manifest_cid, entry.expected_decision.value]
            )
    with open(root / SIGNERS_FILE, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        writer.writerow(["seed", corpus.seed])
        for signer_id, key_seed in sorted(corpus.signer_seeds.items()):
            writer.writerow([signer_id, key_seed])
    corpus.trust.save(root / TRUST_FILE)


def _rows(path: Path) -> List[List[str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.reader(f, delimiter="\t"))


def read_manifest_index(root: Union[str, Path]) -> Dict[str, str]:
    """
    Manifest identifier of every corpus image.

    :param root: corpus directory.

    :return: manifest identifiers keyed by asset id, in corpus order.
    """
    return {row[0]: row[1] for row in _rows(Path(root) / MANIFESTS_FILE)[1:]}


def load_corpus(
    root: Union[str, Path],
    content_store: ContentStore,
    encoder: Optional[FingerprintEncoder] = None,
    fingerprint_seed: int = 20230917,
) -> Corpus:
    """
    Read a corpus written by :func:`generate_corpus`.

    Fingerprints are recomputed from the image files.

    :param root: corpus directory.
    :param content_store: store holding the manifests.
    :param encoder: fingerprint encoder; the surrogate when omitted.
    :param fingerprint_seed: projection seed of the surrogate encoder.

    :return: the corpus.

    :raises NotFoundError: if a manifest is missing from the store.
    """
    root = Path(root)
    manifests = read_manifest_index(root)
    signer_rows = _rows(root / SIGNERS_FILE)
    entries = []
    for asset_id, name, asset_cid in _rows(root / CORPUS_FILE)[1:]:
        image = load_image(root / name, asset_id)
        manifest_cid = manifests[asset_id]
        entries.append(
            CorpusEntry(
                asset_id,
                image,
                asset_cid,
                load_manifest(manifest_cid, content_store),
                manifest_cid,
                compute_fingerprint(image, encoder, seed=fingerprint_seed),
            )
        )
    return Corpus(
        int(signer_rows[0][1]),
        entries,
        TrustList.load(root / TRUST_FILE),
        {row[0]: row[1] for row in signer_rows[1:]},
    )
