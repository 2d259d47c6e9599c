"""Joint separation and compression of two-speaker speech in the codec token domain.

A mixture is mapped directly to one stream of first-stage RVQ tokens per
speaker. Only those base tokens are transmitted; the receiver predicts the
remaining RVQ stages and decodes them with the codec.
"""
from .atsp import ATSPConfig, ATSPModule, predict_aux, sub_predictor_input, teacher_forcing_ce, tf_ce_loss
from .bitstream import TokenBitstream, bitrate_of, pack, unpack
from .btd import BTDConfig, BTDModel, btd_forward, disentangle, mixture_mel, pi_ce_loss
from .checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint
from .codec import CodecConfig, CodecModel, decode_embeddings, encode, reconstruct, tokenize
from .config import TrainConfig, load_config
from .data import Corpus, MixturePair, ToySpeakerSpec, build_datasets, make_speakers, synth_utterance
from .dsp import MDCTSpectrum, MelSpectrogram, Waveform, imdct, mdct, mel_spectrogram, mix, read_wav, write_wav
from .errors import BitstreamError, CheckpointError, ConfigurationError, DataError, TrainingAborted
from .evalkit import EvalReport, mel_distance, pit_si_sdr, si_sdr
from .pipeline import (MaskSeparator, OracleSeparator, evaluate, fcts, fstc, jsac_decode, jsac_encode,
                       jsac_separate)
from .rvq import ResidualQuantizer, dequantize, quantization_loss, quantize

__version__ = "0.1.0"
