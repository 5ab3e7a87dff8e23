"""
Run configuration: an immutable dataclass tree built from a validated JSON
document (see interaction.serializers). Defaults live here.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from django.conf import settings

from interaction.exceptions import ConfigurationError
from interaction.services.generator import INQUIRY_TEMPLATE
from interaction.services.objectives import LossWeights
from interaction.services.perception import PerceptionConfig
from interaction.services.steering import SteeringConfig

logger = logging.getLogger(__name__)

TOGGLES = (
    'no_nce', 'no_gen', 'no_logic', 'no_csc', 'classifier',
    'no_global', 'no_local', 'naive_fusion', 'no_residual',
)


@dataclass(frozen=True)
class DatasetSection:
    source: str = 'synthetic'
    train_path: str = ''
    test_path: str = ''
    verbs_path: str = ''
    objects_path: str = ''
    synonyms_path: str = ''
    exclusions_path: str = ''


@dataclass(frozen=True)
class SyntheticSection:
    train_images: int = 200
    test_images: int = 100
    pairs_per_image: tuple = (1, 2)
    seed: int = 0
    holdout_triplets: tuple = ()


@dataclass(frozen=True)
class EncoderSection:
    raster_resolution: int = 32
    patch_size: int = 4
    detector_jitter: float = 0.05


@dataclass(frozen=True)
class SteeringSection:
    kernel_length: int = 8
    heads: int = 4
    residual: bool = True
    formulator: str = 'cross_attention'


@dataclass(frozen=True)
class GeneratorSection:
    seed: int = 0
    hidden_size: int = 32
    layers: int = 2
    heads: int = 4
    scene_dim: int = 32
    max_len: int = 4
    decode_mode: str = 'phrase'
    auxiliaries: tuple = None
    inquiry: str = INQUIRY_TEMPLATE


@dataclass(frozen=True)
class OptimizerSection:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    steps: int = 300
    batch_size: int = 8
    schedule: str = 'cosine'
    grad_clip: float = 1.0
    log_every: int = 25


@dataclass(frozen=True)
class SplitSection:
    mode: str = 'default'
    held_out: tuple = ()
    num_held_out: int = 0


@dataclass(frozen=True)
class EvaluationSection:
    iou_threshold: float = 0.5
    max_per_image: int = 100
    settings: tuple = ('default', 'known_object')
    open_vocab: bool = False
    synonym_filter: bool = True


@dataclass(frozen=True)
class ToggleSection:
    no_nce: bool = False
    no_gen: bool = False
    no_logic: bool = False
    no_csc: bool = False
    classifier: bool = False
    no_global: bool = False
    no_local: bool = False
    naive_fusion: bool = False
    no_residual: bool = False
    logic_masked: bool = True
    append_eos: bool = True

    def active(self):
        return [t for t in TOGGLES if getattr(self, t)]


SECTIONS = {
    'dataset': DatasetSection,
    'synthetic': SyntheticSection,
    'encoder': EncoderSection,
    'perception': PerceptionConfig,
    'steering': SteeringSection,
    'generator': GeneratorSection,
    'loss': LossWeights,
    'optimizer': OptimizerSection,
    'split': SplitSection,
    'evaluation': EvaluationSection,
    'toggles': ToggleSection,
}


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


@dataclass(frozen=True)
class RunConfig:
    name: str = 'run'
    seed: int = 0
    output_dir: str = ''
    dataset: DatasetSection = field(default_factory=DatasetSection)
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    steering: SteeringSection = field(default_factory=SteeringSection)
    generator: GeneratorSection = field(default_factory=GeneratorSection)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    split: SplitSection = field(default_factory=SplitSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    toggles: ToggleSection = field(default_factory=ToggleSection)

    @classmethod
    def from_dict(cls, data):
        """Build from already validated data; missing keys take the defaults"""
        kwargs = {}
        for key, value in data.items():
            if key in SECTIONS:
                section = SECTIONS[key]
                known = {f.name for f in fields(section)}
                unknown = set(value) - known
                if unknown:
                    raise ConfigurationError(f"unknown keys in '{key}': {sorted(unknown)}")
                kwargs[key] = section(**{k: _tupled(v) for k, v in value.items()})
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def as_dict(self):
        def plain(value):
            if isinstance(value, (tuple, list)):
                return [plain(v) for v in value]
            if isinstance(value, (set, frozenset)):
                return sorted(plain(v) for v in value)
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            return value
        return plain(asdict(self))

    def with_changes(self, **sections):
        """replace() on nested sections: with_changes(steering={'kernel_length': 1})"""
        changes = {}
        for key, value in sections.items():
            if key in SECTIONS:
                changes[key] = replace(getattr(self, key), **value)
            else:
                changes[key] = value
        return replace(self, **changes)

    def with_toggles(self, *names):
        unknown = [n for n in names if n not in TOGGLES]
        if unknown:
            raise ConfigurationError(f"unknown toggle(s) {unknown}; expected one of {list(TOGGLES)}")
        return self.with_changes(toggles={n: True for n in names})

    def steering_config(self):
        """Steering section with the ablation toggles applied"""
        t = self.toggles
        formulator = self.steering.formulator
        kernel_length = self.steering.kernel_length
        if t.naive_fusion:
            formulator = 'mlp'
        if t.no_csc:
            formulator, kernel_length = 'direct', 1
        return SteeringConfig(
            kernel_length=kernel_length,
            heads=self.steering.heads,
            residual=self.steering.residual and not t.no_residual,
            formulator=formulator,
            use_local_evidence=not t.no_local,
            use_global_evidence=not t.no_global,
            slot_seed=self.seed,
        )

    def loss_weights(self):
        """Loss weights with the ablation toggles applied"""
        t = self.toggles
        w = self.loss
        if t.classifier:
            return replace(w, gen=0.0, nce=0.0, logic=0.0)
        return replace(
            w,
            gen=0.0 if t.no_gen else w.gen,
            nce=0.0 if t.no_nce else w.nce,
            logic=0.0 if t.no_logic else w.logic,
            cls=0.0,
        )

    def output_path(self, override=None):
        base = Path(override or self.output_dir or settings.HOI_OUTPUT_DIR / self.name)
        base.mkdir(parents=True, exist_ok=True)
        return base


def parse_run_config(data):
    from interaction.serializers import RunConfigSerializer

    serializer = RunConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigurationError(f"invalid run config: {format_errors(serializer.errors)}")
    return RunConfig.from_dict(serializer.validated_data)


def load_run_config(path=None, seed=None):
    """Read and validate a JSON run config; no path gives the defaults"""
    data = {}
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    config = parse_run_config(data)
    if seed is not None:
        config = replace(config, seed=seed)
    elif not path or 'seed' not in data:
        config = replace(config, seed=settings.HOI_DEFAULT_SEED)
    logger.debug(f"run config {config.name} seed={config.seed}")
    return config


def format_errors(errors, prefix=''):
    parts = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            parts.extend(format_errors(value, f"{prefix}{key}.").split('; '))
    elif isinstance(errors, list):
        if errors and all(isinstance(e, str) for e in errors):
            parts.append(f"{prefix.rstrip('.')}: {' '.join(str(e) for e in errors)}")
        else:
            for e in errors:
                parts.extend(format_errors(e, prefix).split('; '))
    else:
        parts.append(f"{prefix.rstrip('.')}: {errors}")
    return '; '.join(p for p in parts if p)
