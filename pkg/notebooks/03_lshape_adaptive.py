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
# # Adaptive refinement on the L-shaped plate
#
# The L-shape has a re-entrant corner, so uniform refinement converges slower
# than `#T^(-1/2)`. Adaptive refinement marks elements with the combined
# error estimator and refines them by newest-vertex bisection, which recovers
# the optimal rate.

# %%
import numpy as np

from rmdpg.estimator import doerfler_mark
from rmdpg.model import example3_lshape
from rmdpg.stages import convergence_rate, run_pipeline, solve_level

problem = example3_lshape(t=1e-3)

# %% [markdown]
# ## Uniform against adaptive

# %%
uniform, _ = run_pipeline(problem, n_refinements=4)
adaptive, final = run_pipeline(problem, n_refinements=12, adaptive=True, theta=0.5)
for label, recs in (("uniform", uniform), ("adaptive", adaptive)):
    n_t = [r.n_triangles for r in recs]
    eta = [r.eta["eta"] for r in recs]
    print(f"{label:9s} #T={n_t[-1]:5d} eta={eta[-1]:.3e} rate={convergence_rate(n_t, eta):+.3f}")

# %% [markdown]
# ## Where the refinement goes
#
# The smallest triangles should cluster at the re-entrant corner at the origin.

# %%
mesh = final.mesh
centroids = mesh.vertices[mesh.triangles].mean(axis=1)
smallest = np.argsort(mesh.areas)[:10]
print("distance of the 10 smallest triangles from the corner:")
print(np.round(np.linalg.norm(centroids[smallest], axis=1), 4))

# %% [markdown]
# ## One marking step by hand
#
# Dörfler marking picks the fewest elements whose indicators carry half of
# the squared estimator.

# %%
sol = solve_level(problem.mesh, problem.config)
marked = doerfler_mark(sol.estimates.combined, theta=0.5)
share = np.sum(sol.estimates.combined[marked] ** 2) / np.sum(sol.estimates.combined**2)
print(f"marked {marked.size} of {problem.mesh.n_triangles} elements carrying {share:.2f} of eta^2")
