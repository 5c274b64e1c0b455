# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Thin plates without locking
#
# Low-order plate elements often lose accuracy as the thickness `t` goes to
# zero. Here the same meshes are solved for several thicknesses and the errors
# are compared level by level.

# %%
from rmdpg.model import problem_poly
from rmdpg.stages import run_pipeline

# %%
thicknesses = (1e-1, 1e-2, 1e-4, 1e-6)
errors = {}
for t in thicknesses:
    records, _ = run_pipeline(problem_poly(t), n_refinements=2)
    errors[t] = [r.errors for r in records]

# %% [markdown]
# ## Ratios against `t = 1e-2`
#
# Values near 1 mean the error does not depend on the thickness.

# %%
reference = errors[1e-2]
for t in thicknesses:
    ratios = [max(e[k] / ref[k] for k in e) for e, ref in zip(errors[t], reference)]
    print(f"t={t:.0e}", " ".join(f"{r:.3f}" for r in ratios))
