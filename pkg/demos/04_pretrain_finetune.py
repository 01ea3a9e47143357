"""Short pretraining and fine-tuning run on a synthetic corpus with the reduced model.

Steps are kept low so this finishes in a couple of minutes; the acceptance
suite (tests/test_acceptance.py) runs the longer protocol.
"""

import json
import tempfile
from pathlib import Path

from eegssm.ingest import load_manifest, preprocess_manifest, synth_corpus
from eegssm.model import reduced_config
from eegssm.train import TrainConfig, evaluate, finetune, pretrain

root = Path(tempfile.mkdtemp())
synth_corpus(root / "raw", 4, 2, seed=7, duration=30.0, seizure_seconds=(8.0, 14.0))
manifest = preprocess_manifest(load_manifest(root / "raw" / "manifest.json"), root / "pre")

pre = pretrain(manifest, reduced_config(), TrainConfig(steps=60, batch_size=4, lr=1e-2, eval_every=20),
               root / "pretrain")
print("pretrain:", json.dumps(pre.final, indent=1))

ft = finetune(manifest, pre.checkpoint, None,
              TrainConfig(steps=40, batch_size=4, lr=3e-3, eval_every=20, compare_from_scratch=True),
              root / "finetune")
for arm, summary in ft.arms.items():
    print(f"{arm}: held-out AUROC {summary['auroc']}")
print("evaluate:", evaluate(manifest, ft.checkpoint, "test").final)
