# # End to end: logs, models, replay
#
# Runs every stage on the small smoke configuration (about a quarter of a
# minute on one core) and prints the report. The same run is available as
# ``dcolab pipeline --config configs/smoke.ini --out <dir>``.

# %%
import tempfile
from pathlib import Path

from dcolab.cli import main

config = Path(__file__).resolve().parents[1] / "configs" / "smoke.ini"
out = Path(tempfile.mkdtemp(prefix="dcolab-"))

# %%
code = main(["pipeline", "--config", str(config), "--out", str(out)])
print("exit code", code)

# %%
print((out / "report" / "summary.md").read_text())
