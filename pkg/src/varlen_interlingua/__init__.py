"""Desk-scale multilingual NMT with variable-length neural interlingua representations."""

from .bleu import corpus_bleu
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (Batch, CorpusConfig, GrammarConfig, SentencePair, SyntheticLanguageSpec,
                     Vocab, build_corpus, derive_language, generate_centric_sentence,
                     load_corpus, make_batch, make_batches)
from .decoding import (DecodeConfig, beam_search, pivot_translate, translate_batch,
                       translate_with_gold_length)
from .errors import DataError, NumericError, ShapeError
from .evaluation import (EvaluationReport, ExperimentConfig, length_predictor_report,
                         run_experiment)
from .interlingua import (InterlinguaConfig, compute_interlingua_length, interlingua_forward,
                          predict_length, slice_query)
from .model import Model, ModelConfig, decoder_forward, encoder_forward, init_model
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward
from .training import (LossBreakdown, LossWeights, TrainConfig, combined_loss, count_parameters,
                       interlingua_alignment_loss, train)

__version__ = "0.1.0"
