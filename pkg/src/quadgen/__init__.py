"""Aspect sentiment quad prediction via templated generation, trained
with an uncertainty-aware unlikelihood objective.

The package is a small numpy-only stack: a template codec for quads, a
JSONL corpus layer with a synthetic-data generator, a reverse-mode
autodiff engine, a toy transformer encoder-decoder, last-layer Monte
Carlo dropout sampling of negative tokens, the marginalized-unlikelihood
/ likelihood / entropy-minimization objective stack, and the training,
ablation, and evaluation harnesses around them.
"""

from .codec import (AspectQuad, CodecError, ParseDiagnostic, QuadSurface, TargetSequence,
                    Template, TemplateKind, make_quad, parse, project, render)
from .corpus import (CorpusError, CorpusSplit, Example, SyntheticSpec, Vocabulary,
                     build_vocabulary, generate_synthetic, load_examples, load_split,
                     save_examples, save_split)
from .evaluation import ScoreReport, evaluate_model, low_resource_run, predict_quads, score
from .model import (ModelConfig, ModelParams, encode_decode, greedy_decode,
                    greedy_decode_batch, init_params, lm_head, load_checkpoint,
                    save_checkpoint)
from .objectives import (LossBundle, MulConfig, joint_loss, me_loss, mle_loss, mul_loss,
                         ul_loss)
from .training import (ConfigError, TrainConfig, TrainReport, TrainingDiverged,
                       baseline_of, inspect_negatives, load_config, run_ablation_suite,
                       save_config, train)
from .uncertainty import (SampleSets, UncertaintyConfig, acquire_samples, mc_distributions,
                          topk_negatives, topp_negatives)

__version__ = "0.1.0"
