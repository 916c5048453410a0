"""Robust dual-modal salient object detection with quality-weighted fusion."""

__version__ = "0.1.0"

from .data import (
    ALL_CONDITIONS,
    Condition,
    ConditionDistribution,
    Dataset,
    DualModalSample,
    ModalityImage,
    SaliencyMap,
    apply_condition,
    inject_noise,
    load_dataset,
    sample_condition,
    save_dataset,
    synth_dataset,
)
from .embedder import StubEmbedder, VisionLanguageEmbedder
from .lqa import (
    FusionWeights,
    LearnablePrompt,
    QualityScores,
    apply_prompt,
    fusion_weights,
    lqa_assess,
    quality_score,
)
from .backbone import (
    BackboneState,
    DualEncoder,
    EncoderBranch,
    ZeroConvs,
    cd_forward,
    encode,
    make_trainable_copy,
    param_digest,
)
from .decoder import CBAMBlock, Decoder, decode, fuse
from .losses import LossReport, bce_loss, grad_check, iou_loss, total_loss
from .metrics import (
    EvaluationReport,
    MetricSet,
    average,
    average_drop,
    e_measure_mean,
    evaluate,
    f_measure_adaptive,
    f_measure_mean,
    mae,
    s_measure,
)
from .config import RunConfig, config_digest, load_config
from .trainer import (
    GroundTruthOracle,
    ModelState,
    StageTwoToggles,
    assert_frozen,
    build_model,
    freeze,
    load_checkpoint,
    predict,
    save_checkpoint,
    train_stage1,
    train_stage2,
)
