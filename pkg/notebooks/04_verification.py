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
# # Built-in verification
#
# The assembled matrices are checked against independent oracles:
#
# * quadrature rules against exact monomial integrals,
# * the assembled bilinear form against direct quadrature of its definition,
# * the trace orthogonality identity on conforming test functions,
# * positive definiteness of the element Gram matrices.
#
# The same checks run from the command line as `rmdpg verify`.

# %%
import numpy as np

from rmdpg import dpg_core, verify

for name, passed, detail in verify.run_checks(seed=0):
    print("PASS" if passed else "FAIL", name, "|", detail)

# %% [markdown]
# ## The checks catch a deliberate bug
#
# `inject_trace_sign_flip` flips the sign of one term in the moment trace.
# Both the bilinear-form comparison and the orthogonality check must fail.

# %%
with dpg_core.inject_trace_sign_flip():
    errs = verify.bilinear_errors(1, 5, np.random.default_rng(0))
    ratio = verify.lemma_ratio()
print(f"bilinear max rel err {errs.max():.2e}, orthogonality ratio {ratio:.2e}")
