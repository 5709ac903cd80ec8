"""Generate a synthetic hyperspectral scene and inspect what makes it hard.

The background mixes a handful of smooth endmember spectra through blobby
abundance fields; a few scattered pixels are replaced by a spectrum that
sits a controlled spectral angle away from every endmember. The same spec
always produces the same scene, byte for byte.
"""

import numpy as np

from superad import SceneSpec, normalize_bands, save_cube, save_mask, synth_scene

spec = SceneSpec(h=64, w=64, c=32, anomaly_rate=0.005, anomaly_contrast=0.12, seed=1)
cube, gt = synth_scene(spec)

print(f"scene: {cube.height}x{cube.width}x{cube.bands}")
print(f"anomaly pixels: {gt.mask.sum()} (rate {spec.anomaly_rate})")
print(f"value range: [{cube.data.min():.3f}, {cube.data.max():.3f}]")

# The anomaly is spectrally subtle: compare its mean spectrum to the
# background's.
anom = cube.data[gt.mask].mean(axis=0)
background = cube.data[~gt.mask].mean(axis=0)
cos = anom @ background / (np.linalg.norm(anom) * np.linalg.norm(background))
print(f"anomaly-to-background mean spectral angle: {np.degrees(np.arccos(cos)):.2f} deg")

normalized = normalize_bands(cube)
print(f"after band normalization: [{normalized.data.min():.3f}, {normalized.data.max():.3f}]")

save_cube(cube, "scene.hsi")
save_mask(gt, "gt.pgm")
print("wrote scene.hsi and gt.pgm")

again, _ = synth_scene(spec)
print("regeneration bit-identical:", np.array_equal(cube.data, again.data))
