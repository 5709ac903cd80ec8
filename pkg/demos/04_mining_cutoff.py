"""How the mining loss decides which pixels to trust.

Within each superpixel the reconstruction errors are sorted and the
largest jump in the sorted sequence becomes a cutoff: everything above it
is presumed anomalous and contributes neither loss nor gradient, while the
surviving background earns exponentially growing gradients the harder it
is to reconstruct.
"""

import numpy as np

import superad.diffkit as dk
from superad import SegmentLabels, ObpmConfig, obpm_loss, obpm_pointwise, segment_cutoff

# The classic worked example: three plausible errors and one outlier.
errors = np.array([[0.10, 0.12, 0.11, 0.90]])
labels = SegmentLabels(np.zeros((1, 4), int), 1)
report = segment_cutoff(errors, labels)
print("errors:        ", errors.ravel().tolist())
print("sorted:        ", report.sorted_errors[0].tolist())
print("boundary index:", int(report.q[0]), "(1-based), boundary value", float(report.boundary[0]))
print("kept mask:     ", report.keep_mask.ravel().tolist())

# The dropped pixel gets exactly zero gradient.
xhat = dk.DiffTensor(errors.reshape(4, 1))
loss, rep = obpm_loss(xhat, np.zeros((4, 1)), labels, ObpmConfig(alpha=1.0, beta=1.0))
dk.backward(loss)
print("\ngradients through the loss:", xhat.grad.ravel().tolist())

# Exponential gradient scaling: harder background, bigger push.
print("\npointwise gradient g(x) = exp(beta x) + alpha at beta=1, alpha=1:")
for x0 in (0.0, 0.5, 1.0, 2.0):
    leaf = dk.DiffTensor(np.asarray([x0]))
    dk.backward(dk.sum(obpm_pointwise(leaf, ObpmConfig(alpha=1.0, beta=1.0))))
    print(f"  x={x0:.1f}  g={float(leaf.grad[0]):.4f}")
