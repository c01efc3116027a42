"""Frozen oracle values. Written before the implementation they check.

Each constant records where the number comes from: a hand computation
(shown inline), or a value read off the reference paper's tables.
"""

import math

# --- hand computations --------------------------------------------------

# softmax([1, 2]) = [1, e] / (1 + e)
SOFTMAX_1_2 = (0.26894, 0.73106)
SOFTMAX_TOL = 1e-4

# one Adam step, grad = 1, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, lr = 0.1:
# m_hat = 1, v_hat = 1, update = 0.1 * 1 / (1 + 1e-8)
ADAM_FIRST_STEP_DELTA = 0.1 / (1.0 + 1e-8)

# noam(step=1, d=256, warmup=4000) = 256^-0.5 * 1 * 4000^-1.5
NOAM_STEP1_D256_W4000 = 2.4705e-7
NOAM_REL_TOL = 1e-4

# layers [2], [4], [6]; logits [0, ln 2, ln 4] -> weights [1, 2, 4] / 7
WEIGHTED_SUM_WEIGHTS = (1 / 7, 2 / 7, 4 / 7)
WEIGHTED_SUM_VALUE = 34 / 7  # (2 + 8 + 24) / 7

# to_frames: max(0, round_half_away(exp(x) - 1))
TO_FRAMES_CASES = [(0.0, 0), (math.log(6.0), 5), (math.log(5.5), 5)]

# length regulator
LR_DURATIONS = [2, 1, 3]
LR_PATTERN = [0, 0, 1, 2, 2, 2]
LR_ZERO_DURATIONS = [2, 0, 3]
LR_ZERO_PATTERN = [0, 0, 2, 2, 2]

# feature file for a [3][5][8] stack: 32-byte header + 4 bytes per entry
FEATURE_HEADER_BYTES = 8 + 4 * 4 + 8
FEATURE_FILE_3_5_8 = FEATURE_HEADER_BYTES + 4 * 3 * 5 * 8  # 512

# speaker split, 32 speakers at 0.8/0.1/0.1, floor for val/test, rest to train
SPLIT_32 = (26, 3, 3)

# stats baseline, 2-frame 1-bin mel [1, 3]: mean 2, population std 1
STATS_MEAN_STD = (2.0, 1.0)

# loss: |2 - 3| with lambda_mel = 1, lambda_dur = 0
LOSS_ONE_FRAME = 1.0

# speaking rate: 20 phonemes over 2.5 s
SPEAKING_RATE_20_OVER_2_5 = 8.0

# --- published reference values ------------------------------------------

# Table 1, HuBERT + LSTM aggregation, parallel duration RMSE (ms)
PAPER_DUR_RMSE_COMMON = 17.7
PAPER_DUR_RMSE_SEPARATE = 15.6
# Table 1, HuBERT + LSTM, Spec. MAE parallel vs non-parallel
PAPER_SPEC_PARALLEL = 1.15
PAPER_SPEC_NONPARALLEL = 1.27
# Table 4, speaker #1: original, duration reference, x-vector output, HuBERT output
PAPER_RATE_ORIGINAL = 8.17
PAPER_RATE_REFERENCE = 5.75
PAPER_RATE_XVECTOR = 7.68
PAPER_RATE_HUBERT = 5.64
# setup: SSL layer width, embedding size, mel bins, frame shift
PAPER_SSL_DIM = 768
PAPER_EMBED_DIM = 256
PAPER_N_MELS = 80
PAPER_HOP_SECONDS = 0.005

# --- regression fixtures --------------------------------------------------

# 4 frames x 3 dims whose reversal changes the attentive embedding of an
# AttentivePool("att", 3, 4, 2, default_rng(0), float64)
ORDER_FIXTURE = (
    (0.5, -1.0, 0.2),
    (1.5, 0.3, -0.7),
    (-0.4, 0.9, 1.1),
    (0.0, -0.6, 0.8),
)
