"""
Rhythm transfer
===============

With separate conditioning the duration predictor only listens to its own
reference. So one speaker's voice can be paired with another speaker's
pace. Two new speakers are made up here, a fast one (rate factor 0.7) and
a slow one (1.4), and 20 texts are synthesised with the references swapped.

Uses the separate-mode checkpoint from 04_train_and_evaluate.py if it is
there, otherwise trains one first.
"""

from pathlib import Path

from zstts.experiments import desk_data, rhythm_pair, rhythm_texts, train_desk
from zstts.evaluation import run_rhythm_transfer_eval
from zstts.training import load_model

ckpt = Path(__file__).parent / "out" / "separate" / "last.ckpt"
data = desk_data()
if ckpt.is_file():
    model, _ = load_model(ckpt)
else:
    model = train_desk(data, "separate", seed=0, checkpoint_dir=ckpt.parent).model

texts = rhythm_texts(data.corpus, 20)
fast, slow = rhythm_pair(data.corpus, data.extractor, texts)

# speaking rates in phonemes per second
table = run_rhythm_transfer_eval(model, fast, slow, texts)
print(table.to_text())

for row in table.rows[:2]:
    n = sum(table.closer_to_duration_ref(row))
    print(f"{row['name']}: {n}/{len(texts)} texts closer to the duration reference's rate")
