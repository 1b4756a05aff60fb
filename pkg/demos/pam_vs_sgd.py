"""
Training with exact decoder solves
==================================

With the codes held fixed, the decoder of a sparse autoencoder is a
ridge-style least-squares problem with a closed-form answer. PAM-SGD
alternates a few Adam steps on the encoder with that exact decoder
solve. This script compares it with plain Adam on all parameters, on
synthetic activations built from a known sparse dictionary, at two
training-set sizes.
"""

import math

from saegeom.data import SplitSpec, gen_synth_activations, split_and_subsample
from saegeom.sae import TopK
from saegeom.trainer import TrainConfig, pam_sgd_train, sgd_train

ds = gen_synth_activations(4000, dim=32, dict_size=96, true_sparsity=4, noise=0.01, seed=0)
d, k, epochs = 96, 4, 10

# %%
# One test set for every size: the split is fixed first and only the
# training part is subsampled.
for frac in (0.02, 0.2):
    train, test = split_and_subsample(ds, SplitSpec(0.75, frac, seed=0))
    sgd_cfg = TrainConfig(activation=TopK(k), t_max=epochs, eta=0.003, batch=128, seed=0)
    pam_cfg = TrainConfig(activation=TopK(k), t_max=epochs * math.ceil(len(train) / 256),
                          eta=0.003, batch=256, sgd_steps=10, seed=0,
                          mu_enc=1.0, nu_enc=1.0, mu_dec=1.0, nu_dec=1.0)
    _, sgd_log = sgd_train(train, test, sgd_cfg, d=d)
    _, pam_log = pam_sgd_train(train, test, pam_cfg, d=d)
    print(f"{len(train):5d} training samples: test MSE  SGD {sgd_log.records[-1].test_mse:.4f}"
          f"   PAM-SGD {pam_log.records[-1].test_mse:.4f}")

# %%
# Every evaluation also logs the fraction of active code units; for a
# TopK model it never exceeds K / d.
print(f"active fraction {pam_log.records[-1].active_frac:.4f} <= K/d = {k / d:.4f}")
