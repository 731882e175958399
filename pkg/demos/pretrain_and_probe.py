"""
Pretraining and a linear probe
==============================

A short progressive run at toy width, followed by a frozen-backbone linear
probe. An untrained backbone is probed the same way for contrast. Runs in
seconds; the full desk-scale run lives in the acceptance tests.
"""

import tempfile
from pathlib import Path

from specaware import ModelConfig, SpecAwareMAE, Stage, TrainConfig, Trainer, build_dataset, compute_stats
from specaware import linear_probe
from specaware.data import default_sensor_set

root = Path(tempfile.mkdtemp(prefix="specaware_demo_"))
ds = build_dataset(root / "data", default_sensor_set(), per_sensor=16, size=32, seed=0)
stats = compute_stats(ds, seed=0)

model_cfg = ModelConfig(img_size=32, width=64, depth=2, heads=4, dec_width=48, dec_depth=1,
                        hyper_hidden=64, dec_hyper_hidden=64, d=32)
sensors = [f"{s.name}/L1" for s in default_sensor_set()]
cfg = TrainConfig(lr_base=1e-3, batch=8, model=model_cfg, stages=[
    Stage("single-sensor", sensors=sensors[2:], epochs=6, warmup_epochs=1),
    Stage("mix", sensors=sensors, epochs=6, warmup_epochs=1),
])

trainer = Trainer(cfg, ds, stats)
for res in trainer.pretrain(root / "runs"):
    print(f"stage {res.stage}: loss {res.first_loss:.3f} -> {res.final_loss:.3f} ({res.seconds:.0f}s)")
print((root / "runs" / "metrics.log").read_text())

trained = linear_probe(trainer.model, ds, stats)
control = linear_probe(SpecAwareMAE(model_cfg), ds, stats)
print(f"probe accuracy: pretrained {trained.accuracy:.3f}, random backbone {control.accuracy:.3f}")
print(f"trainable probe parameters: {trained.trainable_parameters}")
