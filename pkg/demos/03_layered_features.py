"""
Layered speech representations
==============================

The extractor is a frozen, randomly initialised stack of strided
convolution blocks. It plays the role of a pretrained speech encoder: every
block emits one layer of frame features at a common 20 ms rate, and
deeper layers see more temporal context. Those per-layer outputs are what
the speaker embeddings learn to mix.
"""

import numpy as np

from zstts.corpus import CorpusConfig, CorpusModel, quantize
from zstts.features import ExtractorConfig, extract, load_external, save_external

corpus = CorpusModel(CorpusConfig(), seed=0)
utt = corpus.utterance(corpus.speaker(3), 3, 0)
wave = quantize(utt.wave)

cfg = ExtractorConfig(dim=32)
stack = extract(wave, cfg, seed=0)
print("layers x frames x dims:", stack.data.shape, "hop", stack.hop_seconds, "s")

# deeper layers drift away from layer 0
for k in range(1, stack.n_layers):
    r = np.corrcoef(stack.data[0].ravel(), stack.data[k].ravel())[0, 1]
    print(f"layer {k}: corr with layer 0 = {r:+.3f}")

# stacks can be stored and read back bit for bit, which is also how features
# from an external model would be brought in
save_external(stack, "/tmp/demo_stack.fea")
print("round trip exact:", load_external("/tmp/demo_stack.fea") == stack)
