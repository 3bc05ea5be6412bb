"""Settings for the consent registry, loaded from a YAML file."""

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import yaml

from consent_registry.constants import DEFAULT_REQUIRED_FLAGS, VARIANTS
from consent_registry.errors import ConfigurationError
from consent_registry.ledger import GasSchedule

CONFIG_ENV_VAR = "REGISTRY_CONFIG"


@dataclass(frozen=True)
class FingerprintSettings:
    """Reference fingerprinter and contrastive objective settings."""

    seed: int = 20230917
    temperature: float = 0.1
    # Calibrated over 100 seeded procedural images under sigma = 4/255 noise.
    noise_similarity_threshold: float = 0.9


@dataclass(frozen=True)
class PerturbationSettings:
    """Magnitudes of the mild perturbation suite."""

    noise_sigma: float = 4 / 255
    resize_factor: float = 0.75
    jpeg_quality: int = 80
    color_jitter: float = 0.05
    format: str = "GIF"
    crop_fraction: float = 0.9
    max_chain: int = 2


@dataclass(frozen=True)
class MatchnetSettings:
    """Match verifier settings."""

    gem_power: float = 3.0
    top_k: int = 10
    feature_seed: int = 11
    projection_seed: int = 7
    analytic_slope: float = 25.0
    analytic_offset: float = -1.5
    weights_file: Optional[str] = None


@dataclass(frozen=True)
class ApportionmentSettings:
    """Credit apportionment settings."""

    lam: float = 0.7


@dataclass(frozen=True)
class RegistrySettings:
    """Registry and ledger settings."""

    match_threshold: float = 0.7
    key_encoding: str = "int-array"
    gas_price: int = 1
    operator_funds: int = 10**18
    checkpoint_every: int = 100


@dataclass(frozen=True)
class ConsentSettings:
    """Which training-mining flags must be allowed for an opt-in."""

    required_flags: Tuple[str, ...] = tuple(DEFAULT_REQUIRED_FLAGS)


@dataclass(frozen=True)
class BenchSettings:
    """Benchmark defaults."""

    corpus_size: int = 2000
    query_count: int = 200
    shard_counts: Tuple[int, ...] = (1, 5, 25, 50)
    variants: Tuple[str, ...] = tuple(VARIANTS)
    corpus_sizes: Tuple[int, ...] = (2000, 5000)
    variant_k: int = 25
    cost_dims: Tuple[int, ...] = (256, 128, 64)
    repetitions: int = 5
    seed: int = 0
    query_seed: int = 1
    image_size: int = 96
    perturbation_suite: str = "mild"
    gas_schedule: str = "default"
    calibration_sample: int = 0
    sharding_variant: str = "E-FOF"
    cost_corpus_size: int = 200
    perturbed_floor: float = 80.0
    degradation_points: float = 10.0
    trend_tolerance: float = 0.1
    trend_min_corpus: int = 1000


@dataclass(frozen=True)
class DemoSettings:
    """End-to-end demo defaults."""

    seed: int = 5
    images: int = 6
    opted_out: int = 3
    budget: int = 1000
    payer_funds: int = 10**9
    variant: str = "E-FOF"
    shards: int = 2
    image_size: int = 96


@dataclass(frozen=True)
class Settings:
    """All settings."""

    fingerprint: FingerprintSettings = field(default_factory=FingerprintSettings)
    perturbation: PerturbationSettings = field(default_factory=PerturbationSettings)
    matchnet: MatchnetSettings = field(default_factory=MatchnetSettings)
    apportionment: ApportionmentSettings = field(
        default_factory=ApportionmentSettings
    )
    registry: RegistrySettings = field(default_factory=RegistrySettings)
    consent: ConsentSettings = field(default_factory=ConsentSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    demo: DemoSettings = field(default_factory=DemoSettings)
    gas: GasSchedule = field(default_factory=GasSchedule)

    def to_dict(self) -> Dict[str, Any]:
        """
        Render the settings as plain data, suitable for YAML.

        :return: nested dictionary of all settings.
        """

        def plain(value: Any) -> Any:
            if isinstance(value, tuple):
                return [plain(v) for v in value]
            return value

        return {
            f.name: {
                k: plain(v)
                for k, v in dataclasses.asdict(getattr(self, f.name)).items()
            }
            for f in dataclasses.fields(self)
        }


def _build_section(cls: type, section: str, data: Any) -> Any:
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"Section '{section}' must be a mapping.")

    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigurationError(f"Unknown setting '{section}.{key}'.")
        default = getattr(cls(), key)
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid settings in '{section}': {e}") from e


def load_settings(file_path: Optional[str] = None) -> Settings:
    """
    Load settings from a YAML file.

    :param file_path: Path to the YAML file. If None, the
        ``REGISTRY_CONFIG`` environment variable is consulted, and if that is
        unset too, defaults are returned.

    :return: the settings.

    :raises ConfigurationError: if the file names an unknown section or key.
    """
    file_path = file_path or os.environ.get(CONFIG_ENV_VAR)
    if not file_path:
        return Settings()

    with open(file_path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{file_path} does not contain a mapping.")

    sections = {f.name: f for f in dataclasses.fields(Settings)}
    kwargs = {}
    for name, section_data in data.items():
        if name not in sections:
            raise ConfigurationError(f"Unknown settings section '{name}'.")
        section_cls = type(sections[name].default_factory())
        kwargs[name] = _build_section(section_cls, name, section_data)
    return Settings(**kwargs)
