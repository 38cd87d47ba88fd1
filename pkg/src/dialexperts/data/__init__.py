"""Sample formats, tokenizer, synthetic corpora and batching."""
from .batching import Batch, collate, load_frames, make_batches, pad_ids
from .samples import NUM_CANDIDATES, CaptionSample, DialogSample, build_context, load_jsonl, write_jsonl
from .synth import KINDS, default_vocab, synth_corpus, verify_corpus
from .visual import read_visual, sample_frame_indices, write_visual
from .vocab import BOS, CLS, EOS, MASK, PAD, RESERVED, UNK, Vocabulary, detokenize, tokenize

__all__ = [
    "BOS", "CLS", "EOS", "KINDS", "MASK", "NUM_CANDIDATES", "PAD", "RESERVED", "UNK",
    "Batch", "CaptionSample", "DialogSample", "Vocabulary",
    "build_context", "collate", "default_vocab", "detokenize", "load_frames", "load_jsonl",
    "make_batches", "pad_ids", "read_visual", "sample_frame_indices", "synth_corpus",
    "tokenize", "verify_corpus", "write_jsonl", "write_visual",
]
