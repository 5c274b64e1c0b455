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
# # Quickstart: a clamped plate with a known solution
#
# The solver works in three stages. A P1 Poisson solve gives the potential of
# the gradient part of the shear force. An ultraweak DPG solve then gives the
# rotation `psi`, the bending moment `M` and the remaining unknowns. A second
# P1 solve recovers the deflection `u`. This script runs the whole chain on
# the clamped unit square, where the exact solution is a polynomial.

# %%
import numpy as np

from rmdpg.model import problem_poly
from rmdpg.stages import convergence_rate, run_pipeline

# %% [markdown]
# ## One level
#
# `problem_poly(t, n)` builds the criss-cross square with `2 n^2` triangles,
# the load and the exact solution.

# %%
problem = problem_poly(t=1e-2, n=4)
records, solution = run_pipeline(problem, n_refinements=0)
print("triangles:", problem.mesh.n_triangles, " dofs:", solution.dofs)
print("errors:", {k: f"{v:.3e}" for k, v in records[0].errors.items()})
print("estimator:", {k: f"{v:.3e}" for k, v in records[0].eta.items()})

# %% [markdown]
# ## Uniform refinement
#
# Each level splits every triangle into four. With lowest-order elements all
# three errors should decay like `#T^(-1/2)`.

# %%
records, solution = run_pipeline(problem, n_refinements=3)
n_t = [r.n_triangles for r in records]
for r in records:
    print(r.level, r.n_triangles, f"{r.errors['err_u_H1']:.3e}", f"{r.errors['err_M_L2']:.3e}")
for name in ("err_u_H1", "err_psi_L2", "err_M_L2"):
    print(name, "rate", round(convergence_rate(n_t, [r.errors[name] for r in records]), 3))

# %% [markdown]
# ## Solution fields
#
# `psi_h` and `M_h` are elementwise constants, and `u_h` lives on the vertices.

# %%
print("psi_h", solution.psi_h.shape, " M_h", solution.M_h.shape, " u_h", solution.u_h.shape)
print("max |u_h| =", float(np.abs(solution.u_h).max()))
