"""
The command line, end to end
============================

Generate archives, train briefly, evaluate, compare three clips and inspect
the files, all through ``m3net.cli.main`` (the same code as the ``m3net``
executable).
"""

import tempfile
from pathlib import Path

from m3net.cli import main
from m3net.formats import load_feature_archive

work = Path(tempfile.mkdtemp(prefix="m3net-cli-"))
cfg = work / "run.cfg"
cfg.write_text(f"""
# a tiny run
d = 16
n = 2
total_episodes = 100
learning_rate = 0.001
temperature = 0.1
checkpoint_every = 50
val_episodes = 10
out_dir = {work / 'run'}
""")

main(["gen-data", "--config", str(cfg), "--out", str(work / "data")])
main(["train", "--config", str(cfg), "--set", f"source={work / 'data'}"])
main(["eval", str(work / "run" / "last.m3ck"), "--episodes", "50"])

test = load_feature_archive(work / "data" / "novel-test.m3fa")
first_of = {}
for clip in test.clips:
    first_of.setdefault(clip.class_id, []).append(clip.clip_id)
supports = [ids[0] for ids in first_of.values()]
query = next(iter(first_of.values()))[1]
main(["match", str(work / "run" / "last.m3ck"), str(work / "data" / "novel-test.m3fa"),
      str(query), *map(str, supports)])
main(["inspect", str(work / "run" / "last.m3ck")])
