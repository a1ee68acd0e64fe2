"""
Learning a switched-linear model
================================

Collect canonical-frame image pairs for a few push lengths, fit one
non-negative transition matrix per length, and inspect what the matrices
learned: kernels far from the pusher are (nearly) one-hot, and the step
response shows mass leaving the push rectangle and piling up ahead of it.

A small dataset keeps this quick; the command line (``pileforesight collect``
and ``pileforesight train``) runs the full-size version.
"""
import numpy as np

from pileforesight.foresight import extract_kernel, step_response, train_switched_linear
from pileforesight.harness import collect_bucket
from pileforesight.lsq import fit_ols, objective

lengths = (0.12, 0.24)
data = [collect_bucket(length, 150, seed=k).paired(k) for k, length in enumerate(lengths)]
model = train_switched_linear(data, lengths, mode="nonneg")

# OLS can interpolate 150 training pairs exactly; the non-negative fit cannot, but it
# generalizes far better to unseen pushes (see compare.csv from the command line)
for k, d in enumerate(data):
    print("bucket %d: nonneg residual %.2f, ols residual %.2f"
          % (k, objective(model.matrices[k], d), objective(fit_ols(d), d)))

# a corner pixel is never touched by a canonical push: its kernel is one-hot
kern = extract_kernel(model, 1, 2, 2)
print("corner kernel argmax:", np.unravel_index(np.argmax(kern), kern.shape))

# uniform gray in, where does the mass go?
resp = step_response(model, 1)
print("step response along the push axis (row 16):")
print(np.round(resp[16, 12:32], 2))
