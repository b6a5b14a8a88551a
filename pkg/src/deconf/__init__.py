"""De-confounded multimodal classification on a synthetic subject-confounded benchmark.

The package has three layers:

- exact discrete causal oracles (`scm`): observational conditioning vs
  backdoor-adjusted intervention on small structural causal models;
- a synthetic generator (`datagen`) whose subjects confound both the inputs
  (persistent style vectors) and the labels (skewed class priors), plus
  held-out subjects where those shortcuts stop working;
- a numpy training stack (`backbone`, `subject`, `dictionary`,
  `intervention`, `training`, `ablation`, `reporting`) implementing the
  subject-intervention method: frame-attention fusion, adversarially
  disentangled subject features, an epoch-refreshed prototype dictionary,
  and a backdoor-adjusted classification head.
"""

from .ablation import AblationResults, run_ablations
from .backbone import BackboneParams, VanillaHeadParams, encode, vanilla_logits
from .datagen import (
    DatasetBundle,
    GenConfig,
    MultimodalSample,
    SubjectProfile,
    generate,
    load_bundle,
    save_bundle,
)
from .dictionary import (
    ConfounderDictionary,
    accumulate_subject,
    clustered_dictionary,
    init_dictionary,
    random_dictionary,
    update_dictionary,
)
from .errors import (
    DeconfError,
    FormatVersionError,
    NonFiniteLossError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnreachableEvidenceError,
    ValidationError,
)
from .intervention import InterventionParams, intervene
from .metrics import MetricsReport, project2d
from .reporting import render_report
from .scm import (
    DiscreteSCM,
    interventional_backdoor,
    interventional_bruteforce,
    load_scm,
    observational,
    sample_observational,
    save_scm,
    tv_distance,
)
from .subject import (
    DiscriminatorParams,
    DynamicFusionParams,
    GeneratorParams,
    SubjectFeature,
    dynamic_fusion,
    subject_generator,
    subject_loss,
)
from .training import (
    VARIANTS,
    Checkpoint,
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_suci,
    train_vanilla,
)

__version__ = "0.1.0"

__all__ = [
    "AblationResults",
    "BackboneParams",
    "Checkpoint",
    "ConfounderDictionary",
    "DatasetBundle",
    "DeconfError",
    "DiscreteSCM",
    "DiscriminatorParams",
    "DynamicFusionParams",
    "FormatVersionError",
    "GenConfig",
    "GeneratorParams",
    "InterventionParams",
    "MetricsReport",
    "MultimodalSample",
    "NonFiniteLossError",
    "ShapeMismatchError",
    "SubjectFeature",
    "SubjectProfile",
    "TrainConfig",
    "TruncatedPayloadError",
    "UnreachableEvidenceError",
    "VARIANTS",
    "ValidationError",
    "VanillaHeadParams",
    "accumulate_subject",
    "clustered_dictionary",
    "dynamic_fusion",
    "encode",
    "evaluate",
    "generate",
    "init_dictionary",
    "intervene",
    "interventional_backdoor",
    "interventional_bruteforce",
    "load_bundle",
    "load_checkpoint",
    "load_scm",
    "observational",
    "project2d",
    "random_dictionary",
    "render_report",
    "run_ablations",
    "sample_observational",
    "save_bundle",
    "save_checkpoint",
    "save_scm",
    "subject_generator",
    "subject_loss",
    "train_suci",
    "train_vanilla",
    "tv_distance",
    "update_dictionary",
    "vanilla_logits",
]
