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
# # Langevin samplers on a quadratic critic
#
# With `D(x) = -|x|^2 / 2` the target `exp(D)` is a standard normal, so every
# property of the samplers can be checked against closed forms.

# %%
import numpy as np

from dcdgan import sampler
from dcdgan.nn import QuadraticCritic
from dcdgan.numcore import make_rng

critic = QuadraticCritic()
eps = 0.01

# %% [markdown]
# ## Unadjusted chain
#
# The update is an AR(1) recursion `x' = (1 - eps/2) x + sqrt(eps) w`, whose
# stationary variance is `1 / (1 - eps/4)` rather than 1.

# %%
rng = make_rng(0, 3)
x = rng.standard_normal((64, 2))
acc = []
for k in range(20_000):
    x = sampler.langevin_step(critic, x, eps, rng)
    if k >= 1000:
        acc.append(x.copy())
acc = np.array(acc)
print("empirical variance", acc.var(axis=(0, 1)).mean())
print("exact            ", 1 / (1 - eps / 4))

# %% [markdown]
# ## Metropolis adjustment
#
# Adding the accept/reject step removes the discretization bias. Acceptance
# is close to 1 at this step size.

# %%
rng = make_rng(1, 3)
x = rng.standard_normal((64, 2))
acc, accepted = [], 0
for k in range(20_000):
    x, a = sampler.mala_step(critic, x, 0.5, rng)
    accepted += a.sum()
    if k >= 1000:
        acc.append(x.copy())
print("variance", np.array(acc).var(axis=(0, 1)).mean(), "acceptance", accepted / (64 * 20_000))

# %% [markdown]
# ## KL to the stationary law
#
# For a Gaussian start the law stays Gaussian and its moments follow an exact
# recursion, so the KL divergence can be tracked without sampling.

# %%
means, covs = sampler.ula_gaussian_moments(np.full(2, 5.0), 4.0 * np.eye(2), eps, 200)
mean_inf, cov_inf = sampler.ula_stationary(eps, 2)
kl = [sampler.gaussian_kl(m, c, mean_inf, cov_inf) for m, c in zip(means, covs)]
print("KL at t = 0, 50, 100, 200:", [round(kl[t], 4) for t in (0, 50, 100, 200)])
print("non-increasing:", bool(np.all(np.diff(kl) <= 0)))

# %% [markdown]
# ## Optimal-transport refinement is not unique
#
# A critic that rises with unit slope away from the anchor makes the
# refinement objective flat along the segment, so each start is a fixed point.

# %%
from dcdgan.nn import LinearCritic

anchor = np.zeros((3, 2))
starts = np.array([[0.5, 0.0], [1.0, 0.0], [1.5, 0.0]])
refined = sampler.dot_refine(LinearCritic(np.array([1.0, 0.0])), starts, anchor, step_size=0.01, steps=200)
print(refined)
