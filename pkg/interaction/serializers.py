"""
Run config validation.

Every section is a strict serializer: unknown keys are rejected with the
offending key named. Omitted keys fall back to the RunConfig defaults.
"""
from rest_framework import serializers

from interaction.services.generator import DECODE_MODES
from interaction.services.splits import SPLIT_MODES, UC_MODES
from interaction.services.steering import FORMULATORS
from interaction.services.evaluation import SETTINGS


class StrictSerializer(serializers.Serializer):
    """Serializer that refuses keys it does not declare"""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown field.'] for key in unknown})
        return super().to_internal_value(data)


def _optional(field_class, **kwargs):
    return field_class(required=False, **kwargs)


class DatasetSerializer(StrictSerializer):
    source = _optional(serializers.ChoiceField, choices=['synthetic', 'hico'])
    train_path = _optional(serializers.CharField, allow_blank=True)
    test_path = _optional(serializers.CharField, allow_blank=True)
    verbs_path = _optional(serializers.CharField, allow_blank=True)
    objects_path = _optional(serializers.CharField, allow_blank=True)
    synonyms_path = _optional(serializers.CharField, allow_blank=True)
    exclusions_path = _optional(serializers.CharField, allow_blank=True)

    def validate(self, attrs):
        if attrs.get('source') == 'hico':
            missing = [k for k in ('train_path', 'test_path', 'verbs_path', 'objects_path') if not attrs.get(k)]
            if missing:
                raise serializers.ValidationError(f"hico source needs {', '.join(missing)}")
        return attrs


class SyntheticSerializer(StrictSerializer):
    train_images = _optional(serializers.IntegerField, min_value=0)
    test_images = _optional(serializers.IntegerField, min_value=0)
    pairs_per_image = _optional(serializers.ListField, child=serializers.IntegerField(min_value=1, max_value=2),
                                min_length=2, max_length=2)
    seed = _optional(serializers.IntegerField)
    holdout_triplets = _optional(serializers.ListField,
                                 child=serializers.ListField(child=serializers.CharField(), min_length=2,
                                                             max_length=2))

    def validate_pairs_per_image(self, value):
        if value[0] > value[1]:
            raise serializers.ValidationError('Lower bound exceeds upper bound.')
        return value


class EncoderSerializer(StrictSerializer):
    raster_resolution = _optional(serializers.IntegerField, min_value=4)
    patch_size = _optional(serializers.IntegerField, min_value=1)
    detector_jitter = _optional(serializers.FloatField, min_value=0.0, max_value=0.49)


class PerceptionSerializer(StrictSerializer):
    d_z = _optional(serializers.IntegerField, min_value=1)
    d_a = _optional(serializers.IntegerField, min_value=1)
    d_e = _optional(serializers.IntegerField, min_value=1)
    d_g = _optional(serializers.IntegerField, min_value=1)
    d_model = _optional(serializers.IntegerField, min_value=1)
    sat_layers = _optional(serializers.IntegerField, min_value=1)
    sat_heads = _optional(serializers.IntegerField, min_value=1)
    alpha = _optional(serializers.FloatField, min_value=0.0, max_value=1.0)
    per_human_quota = _optional(serializers.IntegerField, min_value=1)
    max_candidates = _optional(serializers.IntegerField, min_value=1)
    roi_output_size = _optional(serializers.ListField, child=serializers.IntegerField(min_value=1),
                                min_length=2, max_length=2)

    def validate(self, attrs):
        d_model = attrs.get('d_model', 32)
        heads = attrs.get('sat_heads', 4)
        if d_model % heads:
            raise serializers.ValidationError('d_model must be divisible by sat_heads.')
        return attrs


class SteeringSerializer(StrictSerializer):
    kernel_length = _optional(serializers.IntegerField, min_value=0)
    heads = _optional(serializers.IntegerField, min_value=1)
    residual = _optional(serializers.BooleanField)
    formulator = _optional(serializers.ChoiceField, choices=list(FORMULATORS))


class GeneratorSerializer(StrictSerializer):
    seed = _optional(serializers.IntegerField)
    hidden_size = _optional(serializers.IntegerField, min_value=1)
    layers = _optional(serializers.IntegerField, min_value=1)
    heads = _optional(serializers.IntegerField, min_value=1)
    scene_dim = _optional(serializers.IntegerField, min_value=1)
    max_len = _optional(serializers.IntegerField, min_value=1)
    decode_mode = _optional(serializers.ChoiceField, choices=list(DECODE_MODES))
    auxiliaries = _optional(serializers.ListField, child=serializers.CharField(), allow_null=True)
    inquiry = _optional(serializers.CharField)

    def validate(self, attrs):
        hidden = attrs.get('hidden_size', 32)
        heads = attrs.get('heads', 4)
        if hidden % heads:
            raise serializers.ValidationError('hidden_size must be divisible by heads.')
        if attrs.get('scene_dim', 32) % heads:
            raise serializers.ValidationError('scene_dim must be divisible by heads.')
        return attrs


class LossSerializer(StrictSerializer):
    det = _optional(serializers.FloatField, min_value=0.0)
    sal = _optional(serializers.FloatField, min_value=0.0)
    gen = _optional(serializers.FloatField, min_value=0.0)
    nce = _optional(serializers.FloatField, min_value=0.0)
    logic = _optional(serializers.FloatField, min_value=0.0)
    cls = _optional(serializers.FloatField, min_value=0.0)
    tau = _optional(serializers.FloatField)

    def validate_tau(self, value):
        if value <= 0:
            raise serializers.ValidationError('Temperature must be positive.')
        return value


class OptimizerSerializer(StrictSerializer):
    lr = _optional(serializers.FloatField, min_value=0.0)
    weight_decay = _optional(serializers.FloatField, min_value=0.0)
    steps = _optional(serializers.IntegerField, min_value=0)
    batch_size = _optional(serializers.IntegerField, min_value=1)
    schedule = _optional(serializers.ChoiceField, choices=['cosine', 'constant'])
    grad_clip = _optional(serializers.FloatField, min_value=0.0)
    log_every = _optional(serializers.IntegerField, min_value=1)


class SplitSerializer(StrictSerializer):
    mode = _optional(serializers.ChoiceField, choices=list(SPLIT_MODES))
    held_out = _optional(serializers.ListField, child=serializers.JSONField())
    num_held_out = _optional(serializers.IntegerField, min_value=0)

    def validate(self, attrs):
        mode = attrs.get('mode', 'default')
        held_out = attrs.get('held_out', [])
        if mode in UC_MODES:
            for item in held_out:
                if not (isinstance(item, list) and len(item) == 2 and all(isinstance(x, str) for x in item)):
                    raise serializers.ValidationError({'held_out': f'{mode} expects ["verb", "object"] pairs.'})
        elif mode in ('uo', 'uv'):
            if not all(isinstance(x, str) for x in held_out):
                raise serializers.ValidationError({'held_out': f'{mode} expects names.'})
            if attrs.get('num_held_out'):
                raise serializers.ValidationError({'num_held_out': f'{mode} takes an explicit held_out list.'})
        elif held_out or attrs.get('num_held_out'):
            raise serializers.ValidationError({'held_out': f"mode '{mode}' takes no held-out set."})
        return attrs


class EvaluationSerializer(StrictSerializer):
    iou_threshold = _optional(serializers.FloatField, min_value=0.0, max_value=1.0)
    max_per_image = _optional(serializers.IntegerField, min_value=1)
    settings = _optional(serializers.ListField, child=serializers.ChoiceField(choices=list(SETTINGS)),
                         min_length=1)
    open_vocab = _optional(serializers.BooleanField)
    synonym_filter = _optional(serializers.BooleanField)


class ToggleSerializer(StrictSerializer):
    no_nce = _optional(serializers.BooleanField)
    no_gen = _optional(serializers.BooleanField)
    no_logic = _optional(serializers.BooleanField)
    no_csc = _optional(serializers.BooleanField)
    classifier = _optional(serializers.BooleanField)
    no_global = _optional(serializers.BooleanField)
    no_local = _optional(serializers.BooleanField)
    naive_fusion = _optional(serializers.BooleanField)
    no_residual = _optional(serializers.BooleanField)
    logic_masked = _optional(serializers.BooleanField)
    append_eos = _optional(serializers.BooleanField)


class RunConfigSerializer(StrictSerializer):
    name = _optional(serializers.RegexField, regex=r'^[\w.-]+$')
    seed = _optional(serializers.IntegerField)
    output_dir = _optional(serializers.CharField, allow_blank=True)
    dataset = DatasetSerializer(required=False)
    synthetic = SyntheticSerializer(required=False)
    encoder = EncoderSerializer(required=False)
    perception = PerceptionSerializer(required=False)
    steering = SteeringSerializer(required=False)
    generator = GeneratorSerializer(required=False)
    loss = LossSerializer(required=False)
    optimizer = OptimizerSerializer(required=False)
    split = SplitSerializer(required=False)
    evaluation = EvaluationSerializer(required=False)
    toggles = ToggleSerializer(required=False)

    def validate(self, attrs):
        toggles = attrs.get('toggles', {})
        if toggles.get('classifier') and toggles.get('no_csc'):
            raise serializers.ValidationError({'toggles': 'classifier and no_csc cannot be combined.'})
        steering = attrs.get('steering', {})
        if steering.get('formulator') == 'direct' and steering.get('kernel_length', 8) != 1:
            raise serializers.ValidationError({'steering': 'the direct formulator needs kernel_length 1.'})
        hidden = attrs.get('generator', {}).get('hidden_size', 32)
        if steering.get('formulator', 'cross_attention') == 'cross_attention' and hidden % steering.get('heads', 4):
            raise serializers.ValidationError(
                {'steering': f"heads must divide the generator hidden size ({hidden})."})
        return attrs
