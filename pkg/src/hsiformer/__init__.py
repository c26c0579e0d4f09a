"""Energy-attention transformer pipeline for hyperspectral image classification.

The package is built on a self-contained reverse-mode autodiff engine
(:mod:`hsiformer.autodiff`); every model quantity is a composition of its
primitives, so one backward sweep trains the whole pipeline, including the
unrolled energy-descent encoder whose per-step descent direction is a
closed-form forward computation.
"""

from . import autodiff
from .autodiff import Tape, Tensor, backward
from .cbam import EcbamParams, channel_attention, fuse_and_embed, init_ecbam, spatial_attention
from .data import (
    HsiCube,
    LabelMap,
    Patch,
    Split,
    effective_patch_size,
    extract_patch,
    normalize,
    patch_count,
    read_cube,
    read_labels,
    stratified_split,
    write_cube,
    write_labels,
)
from .encoder import (
    EncoderParams,
    EnergyTrace,
    StandardParams,
    attention_energy,
    attention_scores,
    encoder_forward,
    energy_gradient,
    hopfield_energy,
    init_encoder,
    init_standard,
    standard_forward,
    total_energy,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DivergenceError,
    FormatError,
    ShapeError,
)
from .fourier_pos import FopeParams, PhaseField, apply_phase, build_phase, init_fope
from .metrics import EvalReport, build_report, compute_metrics, confusion_matrix
from .model import (
    ClassifierParams,
    HeadParams,
    ModelConfig,
    cast_parameters,
    classify,
    init_model,
    model_forward,
    named_parameters,
    set_parameter,
)
from .synth import nearest_centroid_accuracy, synth_dataset
from .training import (
    Adam,
    TrainConfig,
    apply_state,
    cross_entropy,
    evaluate,
    load_checkpoint,
    predict_map,
    run_pipeline,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
