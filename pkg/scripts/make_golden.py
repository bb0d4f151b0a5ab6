"""Regenerate the frozen eval fixture in tests/data/golden.

Synthesizes a 16x16x24 scene, trains GAUSS and then GAUSS_prime with the true
abundances as pseudo-ground truth, and stores the resulting checkpoint, the
inputs and the metrics JSON that ``gaussunmix eval`` produced for it.
"""
import json
import shutil
import tempfile
from pathlib import Path

from gaussunmix.cli import main

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "golden"
SYNTH = {"synth": {"width": 16, "height": 16, "sources": 3, "tile": 8, "bands": 24}}


def run(*argv):
    code = main([str(a) for a in argv])
    if code != 0:
        raise SystemExit(f"gaussunmix {' '.join(map(str, argv))} exited with {code}")


def build():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        cfg = tmp / "cfg.json"
        cfg.write_text(json.dumps(SYNTH))
        data, gauss, prime, ev = tmp / "data", tmp / "gauss", tmp / "prime", tmp / "eval"
        run("synth", "--seed", 0, "--config", cfg, "--out", data)
        run("train", "--seed", 0, "--cube", data / "cube.hsi", "--sources", 3, "--out", gauss)
        run("train", "--seed", 0, "--strategy", "prime", "--cube", data / "cube.hsi", "--init", gauss,
            "--pgt", data / "abundances.csv", "--out", prime)
        run("eval", "--checkpoint", prime, "--cube", data / "cube.hsi", "--abundances", data / "abundances.csv",
            "--endmembers", data / "endmembers.csv", "--out", ev)

        if OUT.exists():
            shutil.rmtree(OUT)
        (OUT / "checkpoint").mkdir(parents=True)
        for name in ("cube.hsi", "abundances.csv", "endmembers.csv"):
            shutil.copy(data / name, OUT / name)
        for name in ("model.json", "an.json", "an.bin", "un.json", "un.bin", "mn.json", "mn.bin"):
            shutil.copy(prime / name, OUT / "checkpoint" / name)
        shutil.copy(ev / "eval.json", OUT / "eval.json")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    build()
