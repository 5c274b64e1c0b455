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
# # Command-line workflow
#
# Experiments are described by JSON files (schema in `docs/config.md`). This
# script writes a small config to a scratch directory and drives the
# `run`, `plotdata` and `mesh-info` subcommands through `rmdpg.cli.main`,
# the same entry point as the `rmdpg` executable.

# %%
import json
import tempfile
from pathlib import Path

from rmdpg import cli

work = Path(tempfile.mkdtemp(prefix="rmdpg-demo-"))
config = {"problem": "kirchhoff", "t": 1e-2, "n_refinements": 2, "n_terms": 30,
          "output": {"csv": "kirchhoff.csv", "estimator_dump": "eta.txt"}}
(work / "kirchhoff.json").write_text(json.dumps(config, indent=2))

# %% [markdown]
# ## Run
#
# The command prints the CSV path and the fitted rates.

# %%
cli.main(["run", "--config", str(work / "kirchhoff.json"), "--out-dir", str(work)])
print((work / "kirchhoff.csv").read_text())

# %% [markdown]
# ## Plot data
#
# `plotdata` turns the CSV into whitespace-separated blocks (one per column
# plus a guide line of the chosen slope), ready for gnuplot or similar tools.

# %%
cli.main(["plotdata", str(work / "kirchhoff.csv"), "-o", str(work / "plot.dat")])
print((work / "plot.dat").read_text()[:400])

# %% [markdown]
# ## Mesh summary

# %%
cli.main(["mesh-info", "--config", str(work / "kirchhoff.json"), "--refine", "1"])
