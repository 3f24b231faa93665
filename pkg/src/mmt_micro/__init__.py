"""Miniature multimodal machine translation stack.

A self-contained pipeline: seeded autodiff tensors, recurrent
encoder-decoder models with text/visual attention, subword preprocessing,
a synthetic grounded-translation task, Adam training, beam decoding, and
BLEU-based evaluation with significance testing.
"""

__version__ = "0.1.0"
