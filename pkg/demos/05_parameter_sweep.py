"""Sweep detector parameters on one scene, the way the ablations are run.

Uses the same machinery as `superad ablate`; each cell is an independent
deterministic training run, so the grid can be reproduced cell by cell.
"""

import time

from superad import SceneSpec, evaluate, synth_scene
from superad.model import AdaConvConfig
from superad.trainer import TrainConfig, train

cube, gt = synth_scene(SceneSpec(h=32, w=32, c=16, anomaly_rate=0.01, anomaly_contrast=0.12, seed=4))
print(f"scene 32x32x16, {gt.mask.sum()} anomalies\n")
print("segments  kernel  auc     snpr_db   seconds")

for segments in (20, 60):
    for k in (1, 3):
        cfg = TrainConfig(epochs=60, segments=segments, adaconv=AdaConvConfig(n=9, k=k))
        t0 = time.perf_counter()
        result = train(cube, cfg)
        report = evaluate(result.anomaly_map, gt)
        dt = time.perf_counter() - t0
        print(f"{segments:8d}  {k:6d}  {report.auc:.4f}  {report.snpr_db:+8.2f}  {dt:7.1f}")

print("\nthe same sweep via the command line:")
print("  superad ablate --input scene.hsi --gt gt.pgm \\")
print("      --grid segments=20,60 --grid kernel=1,3 --epochs 60 --out sweep/")
