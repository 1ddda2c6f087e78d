"""
Task ablation through the command line
======================================

Drive the mtlseg command line the way a user would: generate data, run the
five-row ablation and print the resulting table. Settings are tiny so the
whole script finishes in a couple of minutes.
"""

import os
import tempfile

from mtlseg.cli import main

tmp = tempfile.mkdtemp()
data_cfg = os.path.join(tmp, "data.ini")
with open(data_cfg, "w") as fh:
    fh.write("[data]\nn = 20\nsize = 32\nseed = 5\n")

run_cfg = os.path.join(tmp, "run.ini")
with open(run_cfg, "w") as fh:
    fh.write(
        f"[run]\ndataset = {tmp}/ds\nweighting = uncertainty\nepochs = 5\ncrop = 32\n"
        "depth = 2\nwidths = 16, 8\n"
    )

# every subcommand returns 0 on success, 1 for usage errors and 2 for runtime failures
assert main(["gen-data", "--config", data_cfg, "--out", f"{tmp}/ds"]) == 0
assert main(["ablation", "--config", run_cfg, "--out", f"{tmp}/ablation", "--seed", "0"]) == 0

with open(f"{tmp}/ablation/ablation.csv") as fh:
    print(fh.read())
