"""Text preprocessing, subword segmentation, vocabularies, batching,
feature-map storage, and the synthetic grounded-translation task."""

from .batching import Batch, ParallelCorpus, index_corpus, make_batches
from .bpe import BpeModel, apply_bpe, learn_bpe, load_bpe, remove_bpe, save_bpe
from .features import FeatureStore, load_features, normalize_channelwise, save_features
from .synthetic import SynthDataset, SynthSpec, generate_synthetic
from .text import preprocess_text, read_lines, write_lines
from .vocab import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Vocabulary

__all__ = [
    "Batch", "ParallelCorpus", "index_corpus", "make_batches",
    "BpeModel", "apply_bpe", "learn_bpe", "load_bpe", "remove_bpe", "save_bpe",
    "FeatureStore", "load_features", "normalize_channelwise", "save_features",
    "SynthDataset", "SynthSpec", "generate_synthetic",
    "preprocess_text", "read_lines", "write_lines",
    "BOS_ID", "EOS_ID", "PAD_ID", "UNK_ID", "Vocabulary",
]
