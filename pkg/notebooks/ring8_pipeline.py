# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Ring of eight Gaussians
#
# Pre-train a WGAN, fine-tune its critic by contrastive divergence, then
# sample from `exp(D)` with latent-space Langevin dynamics started at the
# generator. Iteration counts are cut down so this runs in a few minutes;
# the CLI defaults are 10000 training and 1000 fine-tuning iterations.

# %%
import numpy as np

from dcdgan import dcd, evaluation, sampler, synth, wgan
from dcdgan.numcore import make_rng

spec = synth.ring8()
seed = 0
print(spec.means.round(3))

# %% [markdown]
# ## Pre-training
#
# Mode coverage of the raw generator is logged every 1000 iterations.

# %%
z_eval = make_rng(seed, 10).standard_normal((5000, 2))


def coverage(it, g, d):
    r = evaluation.mode_report(spec, g(z_eval))
    print(f"iteration {it}: {r.modes_recovered} modes, hq {r.hq_fraction:.3f}")
    return {"modes": r.modes_recovered, "hq": r.hq_fraction}


G, D, log = wgan.train(spec, wgan.TrainConfig(seed=seed, iterations=4000), callback=coverage, eval_every=1000)
print("last hinge critic loss", np.mean(log.critic_loss[-100:]))

# %% [markdown]
# ## Fine-tuning
#
# The objective is the mean critic on data minus the mean critic on chain
# samples. The chain here is the `latent` preset.

# %%
D_ft, dlog = dcd.dcd_finetune(G, D, spec, dcd.DcdConfig(seed=seed, iterations=300))
print("objective, first and last 50 iterations:", np.mean(dlog.objective[:50]), np.mean(dlog.objective[-50:]))

# %% [markdown]
# ## Sampling
#
# The same latents are used for the raw generator and for the chains, so
# the comparison is sample by sample.

# %%
z = make_rng(seed, 4).standard_normal((10_000, 2))
raw = G(z)
chains = {}
for name, critic in [("pre-trained", D), ("fine-tuned", D_ft)]:
    state = sampler.run_chain(critic, z, sampler.PRESETS["latent"], make_rng(seed, 5), generator=G, keep_trajectory=False)
    chains[name] = state.samples

for name, x in [("raw", raw), *chains.items()]:
    r = evaluation.mode_report(spec, x)
    print(f"{name:12s} modes {r.modes_recovered}  hq {r.hq_fraction:.3f}  mean distance {r.mean_nearest_distance:.4f}")

# %% [markdown]
# ## Critic surfaces
#
# Rank correlation of the critic with the true log-density, and a coarse
# text rendering of the fine-tuned critic on [-3, 3]^2.

# %%
for name, critic in [("pre-trained", D), ("fine-tuned", D_ft)]:
    print(name, "alignment", round(evaluation.energy_alignment(spec, critic, 5000), 3))

grid = evaluation.level_grid(D_ft, [[-3, 3], [-3, 3]], 25)
shades = " .:-=+*#%@"
t = (grid.values - grid.values.min()) / np.ptp(grid.values)
for row in t[::-1]:
    print("".join(shades[min(int(v * len(shades)), len(shades) - 1)] for v in row))
