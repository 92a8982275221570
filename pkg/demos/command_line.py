"""Simulate, fit, sweep and diagnose from the command line, in a temporary directory."""

import subprocess
import sys
import tempfile
from pathlib import Path


def udid(*args, cwd):
    cmd = [sys.executable, "-m", "udid.cli", *args]
    print("$ udid " + " ".join(args))
    proc = subprocess.run(cmd, cwd=cwd, capture_output=True, text=True)
    print(proc.stdout + proc.stderr + f"[exit {proc.returncode}]\n")


with tempfile.TemporaryDirectory() as tmp:
    Path(tmp, "sim.cfg").write_text("dgp = zika_like\nseed = 4\n")
    Path(tmp, "fit.cfg").write_text("estimators = glm,ipw,dr,pt-reg\nci_level = 0.9\n")
    udid("simulate", "--config", "sim.cfg", "--out", "panel.csv", cwd=tmp)
    print(Path(tmp, "panel.truth.json").read_text())
    udid("fit", "panel.csv", "--config", "fit.cfg", "--out", "result", cwd=tmp)
    udid("sensitivity", "panel.csv", "--estimator", "dr", "--grid-lo", "-1", "--grid-hi", "1",
         "--grid-step", "0.5", "--out", "curve.csv", cwd=tmp)
    udid("diagnose", "panel.csv", cwd=tmp)
    Path(tmp, "broken.csv").write_text("y0,y1,a\n1,2,0\n1,x,1\n")
    udid("fit", "broken.csv", cwd=tmp)
