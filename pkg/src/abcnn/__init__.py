"""Attention-based CNN for five-class ECG beat classification (MIT-BIH, AAMI classes)."""
from .beats import AamiClass, BeatSegment, DatasetSplit, build_dataset, map_symbol_to_aami, segment_beats, split_train_test, zscore
from .kernels import BACKEND
from .model import AbcnnConfig, ModelParams, build_plain_cnn, forward, init_params, load_checkpoint, save_checkpoint
from .trainer import AdamState, TrainOptions, adam_step, evaluate_loss_accuracy, train
from .wfdb_io import EcgRecord, load_record

__version__ = "0.1.0"
