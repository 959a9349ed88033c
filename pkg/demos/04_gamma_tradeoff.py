"""The accuracy-versus-fairness trade-off as the fairness weight varies.

Sweeps gamma over several orders of magnitude on one dataset with one
shared pretrained autoencoder, printing the trade-off table behind the
fairness-weight curve: small gamma reproduces the plain baseline, large
gamma drives every centroid toward fairoid equidistance and the
histograms toward uniform.
"""

import numpy as np

import fairclust as fc

spec = fc.SynthSpec(n_points=2000, dims=10, n_blobs=4, T=4,
                    correlation=0.9, blob_spread=0.5, seed=42)
ds = fc.synth_blobs(spec)
ae, _ = fc.pretrain(ds.features, fc.AeConfig(
    dims=(10, 64, 32, 4), layerwise_epochs=60, global_epochs=60,
    lr_pretrain=0.05, batch=128, seed=0))

print(f"{'gamma':>8} {'acc':>7} {'nmi':>7} {'fwd_mean':>9} {'fwd_max':>8}")
for gamma in (0.0, 0.01, 0.1, 1.0, 10.0, 100.0):
    accs, nmis, fwds, fmaxs = [], [], [], []
    for seed in (1, 2, 3):
        cfg = fc.TrainConfig(K=4, gamma=gamma, lr=0.01, batch=256,
                             max_epochs=60, recon_weight=0.1, seed=seed)
        rep = fc.report(fc.train(ds, ae, cfg), ds)
        accs.append(rep.acc)
        nmis.append(rep.nmi)
        fwds.append(rep.fwd_mean)
        fmaxs.append(rep.fwd_max)
    print(f"{gamma:8g} {np.median(accs):7.3f} {np.median(nmis):7.3f} "
          f"{np.median(fwds):9.3f} {np.median(fmaxs):8.3f}")

print("\nreading the table: fwd_mean falls monotonically with gamma while")
print("accuracy degrades, mildly at first and then sharply once the")
print("fairness pull dominates the clustering pull.")
