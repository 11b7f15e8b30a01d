"""
The whole pipeline from the command line
========================================

Each stage is a ``triplane-inversion`` subcommand that reads one JSON config
and writes checkpoints under ``--out``. This script runs the chain on a tiny
configuration and prints every command, so it doubles as a shell recipe:

    make-data -> train-gen -> fit-depth-prior -> train-encoder -> train-afa
    -> invert -> render -> fit-direction -> edit -> eval

Budgets here are a few iterations per stage; the results are not meant to
look good, only to show the artifacts each step produces.
"""
import subprocess
import sys

from _tiny import out_dir, tiny_config

root = out_dir("07_cli")
cfg = tiny_config(resolution=16, samples=8)
cfg.data.yaws = [-30.0, 0.0, 30.0]
cfg.data.n_scenes = 4
cfg.gen_train.rays = 64
cfg.gen_train.w_avg_samples = 64
cfg.depth_prior.samples = 8
cfg.stage1.batch = cfg.stage2.batch = 2
cfg.edit.samples = 100
cfg.edit.svm_epochs = 20
cfg.save(root / "config.json")


def step(name, *args):
    argv = [name, "--config", root / "config.json", "--seed", "0", *args]
    print("$ triplane-inversion", " ".join(str(a).replace(str(root), "$OUT") for a in argv))
    done = subprocess.run([sys.executable, "-m", "triplane_inversion", *map(str, argv)],
                          capture_output=True, text=True)
    if done.stdout.strip():
        print("  ", done.stdout.strip().replace("\n", "\n   "))
    if done.returncode:
        sys.exit(f"{name} failed with exit code {done.returncode}: {done.stderr}")


gen, prior = root / "gen/generator.tpck", root / "prior/depth_prior.tpck"
enc, afa = root / "enc/encoder.tpck", root / "afa/afa.tpck"
view = root / "data/scene_0"

step("make-data", "--out", root / "data")
step("train-gen", "--data", root / "data", "--iters", 40, "--out", root / "gen")
step("fit-depth-prior", "--generator", gen, "--out", root / "prior")
step("train-encoder", "--generator", gen, "--prior", prior, "--data", root / "data", "--iters", 4,
     "--out", root / "enc")
step("train-afa", "--generator", gen, "--encoder", enc, "--prior", prior, "--data", root / "data",
     "--iters", 4, "--out", root / "afa")
step("invert", "--image", view / "view_1.png", "--camera", view / "view_1.cam", "--generator", gen,
     "--encoder", enc, "--afa", afa, "--out", root / "inv")
step("render", "--bundle", root / "inv/bundle.tpck", "--generator", gen, "--yaws", -60, 0, 60,
     "--out", root / "views")
step("fit-direction", "--generator", gen, "--attribute", "radius", "--out", root / "dir")
step("edit", "--bundle", root / "inv/bundle.tpck", "--generator", gen, "--direction",
     root / "dir/direction_radius.tpck", "--strength", 1.5, "--out", root / "edit")
step("eval", "--data", root / "data", "--generator", gen, "--encoder", enc, "--afa", afa,
     "--out", root / "eval")

print("\nartifacts:")
for path in sorted(p for p in root.rglob("*") if p.is_file() and "data" not in p.parts):
    print("  ", path.relative_to(root))
