"""
Screening a small defect library from the command line
=======================================================

Runs the batch tool on a handful of scenarios at 1 mm cells, then reads the
summary back. The same commands with no ``--config`` reproduce the desk run.
"""

# %%
import json
import subprocess
import sys
from pathlib import Path

run = Path("notebook_output/library")
config = Path("notebook_output/library.json")
config.parent.mkdir(exist_ok=True)
config.write_text(json.dumps({"grid_h": 0.001, "freq_stride": 10,
                              "frequencies": [10000.0 * k for k in range(1, 21)]}))


def fixscreen(*args):
    cmd = [sys.executable, "-m", "fixscreen", *args]
    print("$", " ".join(cmd[2:]))
    subprocess.run(cmd, check=True)


# %%
# Healthy plus a few loosening layers and the side cracks.
fixscreen("sweep", "--config", str(config), "--out", str(run), "--scenarios", "1-4,13-16,25-28")
fixscreen("analyze", str(run))
fixscreen("render", str(run), "--normalization", "global")
fixscreen("verify", str(run))

# %%
print((run / "reports" / "summary.csv").read_text())
print((run / "reports" / "c028.txt").read_text())
