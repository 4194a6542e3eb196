"""Drive the command line end to end and replay a run from its manifest.

Every file the CLI writes gets a sibling ``.manifest.json`` with the argv,
seed, config and input/output hashes; ``replay`` reruns the command and
compares the new outputs byte for byte.
"""

import json
import os
import tempfile

from ccr.cli import run_cli

work = tempfile.mkdtemp(prefix="ccr-demo-")
os.chdir(work)
with open("config.json", "w") as fh:
    json.dump({"d": 32, "n_q": 4, "epochs": 3, "data": "synth.lecr"}, fh)

steps = [
    ["gen-synth", "--n-items", "300", "--n-test", "100", "--seed", "1", "--out", "synth.lecr"],
    ["train", "--config", "config.json", "--out", "model.ckpt", "--log-every", "10"],
    ["eval", "--checkpoint", "model.ckpt", "--data", "synth.lecr", "--report", "report.csv",
     "--dump-attn", "attention"],
    ["replay", "report.csv.manifest.json"],
]
for argv in steps:
    print("$ ccr", " ".join(argv))
    code = run_cli(argv)
    print(f"exit {code}\n")

print(open("report.csv").read())
print("outputs in", work)
