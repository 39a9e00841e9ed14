"""Few-shot opinion summarization laboratory.

A desk-scale pipeline: tensor autodiff, a miniature transformer
encoder-decoder, bottleneck adapters, leave-one-out self-supervised pair
construction, aspect-query conditioning, beam-search decoding, and the
full evaluation metric suite.
"""

__version__ = "0.1.0"
