import json
import math

import numpy as np
import pytest

from rewave.cli import main
from rewave.config import load_config
from rewave.datasetgen import class_seed, episode_seed, enumerate_classes
from rewave.dynamics import ACTIVE, simulate_episode
from rewave.imageio import decode, encode_binary
from rewave.lattice import build_lattice, neighbors
from rewave.manifest import read_manifest
from rewave.projection import BinaryImage, raw_cell_map

TINY = [
    "--set", "retina_radius=24.0",
    "--set", "image_side=32",
    "--set", "images_per_class=10",
    "--set", 'grid.altered=["propagation_prob"]',
    "--set", "grid.values.propagation_prob=[0.8, 1.0]",
    "--set", "grid.base.spontaneous_rate=0.002",
    "--set", "selection.threshold=5",
]


def tree(root):
    return {
        str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_generate_layout(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["generate", *TINY, "--seed", "7", "--out", str(out)]) == 0
    files = tree(out)
    pngs = [k for k in files if k.endswith(".png")]
    assert len(pngs) == 20
    assert sorted(k for k in files if k.startswith("params/")) == ["params/class_00000.txt", "params/class_00001.txt"]
    assert {"manifest.csv", "config.json"} <= set(files)
    assert all(k.split("/")[0] in ("train", "val", "test") for k in pngs)
    meta = json.loads(files["config.json"])
    assert meta["master_seed"] == 7
    assert "wrote 20 images" in capsys.readouterr().out


def test_generate_matches_library_fixture(tmp_path, tiny_dataset):
    out = tmp_path / "ds"
    assert main(["generate", *TINY, "--seed", "7", "--out", str(out), "--threads", "2"]) == 0
    assert tree(out) == tree(tiny_dataset)


def test_generate_refuses_non_empty_dir(tmp_path, capsys):
    out = tmp_path / "full"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["generate", *TINY, "--out", str(out)]) == 2
    assert "error" in capsys.readouterr().err


def test_generate_bad_config_exit_code(tmp_path):
    assert main(["generate", *TINY, "--set", "images_per_class=13", "--out", str(tmp_path / "x")]) == 2
    assert main(["generate", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path / "y")]) == 2


def test_generate_silent_class_exit_code(tmp_path, capsys):
    args = [*TINY, "--set", "grid.base.spontaneous_rate=0.0", "--set", "selection.max_episodes_per_attempt=1"]
    assert main(["generate", *args, "--out", str(tmp_path / "z")]) == 3
    assert "class 0" in capsys.readouterr().err


def test_generate_io_error_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["generate", *TINY, "--out", str(blocker / "sub")]) == 4


def test_threads_env_fallback(tmp_path, monkeypatch, tiny_dataset):
    monkeypatch.setenv("REWAVE_THREADS", "2")
    out = tmp_path / "env"
    assert main(["generate", *TINY, "--seed", "7", "--out", str(out)]) == 0
    assert tree(out) == tree(tiny_dataset)
    monkeypatch.setenv("REWAVE_THREADS", "many")
    assert main(["generate", *TINY, "--out", str(tmp_path / "bad")]) == 2


def test_simulate_twice_identical(tmp_path):
    args = ["simulate", "--set", "retina_radius=12.0", "--set", "grid.base.spontaneous_rate=0.003",
            "--set", "dynamics.max_steps=80", "--seed", "11"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a == b
    assert sorted(a) == [f"ep0000_t{t:05d}.png" for t in range(81)]


def test_simulate_quiet_episode(tmp_path):
    out = tmp_path / "q"
    assert main(["simulate", "--set", "retina_radius=8.0", "--set", "grid.base.spontaneous_rate=0.0",
                 "--format", "cropped", "--set", "image_side=16", "--out", str(out)]) == 0
    files = sorted(out.iterdir())
    assert len(files) == 201
    assert all(not decode(p.read_bytes()).pixels.any() for p in files)


def test_simulate_raw_red_against_decay(tmp_path):
    out = tmp_path / "r"
    overrides = ["retina_radius=12.0", "grid.base.spontaneous_rate=0.003", "dynamics.max_steps=150",
                 'grid.altered=["propagation_prob"]', "grid.values.propagation_prob=[0.9]"]
    argv = ["simulate", "--seed", "5", "--class-id", "0", "--out", str(out)]
    for o in overrides:
        argv += ["--set", o]
    assert main(argv) == 0
    cfg = load_config(None, overrides + ["master_seed=5"])
    spec = enumerate_classes(cfg.parameter_grid(), 5)[0]
    lat = build_lattice(12.0)
    frames = simulate_episode(lat, neighbors(lat, spec.params.dendritic_radius), spec.params, cfg.dynamics,
                              episode_seed(class_seed(5, 0), 0))
    cmap = raw_cell_map(lat)
    tau = cfg.dynamics.calcium_decay
    checked = 0
    # rebuild each cell's calcium from its last activation time
    last_active = np.full(lat.n_cells, -1)
    for f in frames:
        last_active[f.state == ACTIVE] = f.step
        red = decode((out / f"ep0000_t{f.step:05d}.png").read_bytes()).pixels[..., 0]
        for v, u in [(6, 6), (12, 12), (3, 15), (20, 9)]:
            cell = cmap[v, u]
            if last_active[cell] < 0:
                want = 0
            else:
                k = f.step - last_active[cell]
                want = math.floor(255 * math.exp(-k / tau) + 0.5)
            assert int(red[v, u]) == want
            checked += 1
    assert checked > 400


def test_simulate_bad_class(tmp_path):
    assert main(["simulate", *TINY, "--class-id", "9", "--out", str(tmp_path / "s")]) == 2


def test_verify_ok_and_failures(tmp_path, tiny_dataset, capsys):
    assert main(["verify", str(tiny_dataset)]) == 0
    assert "OK" in capsys.readouterr().out

    rows = read_manifest(tiny_dataset).rows
    victim = tiny_dataset / rows[3].relative_path
    victim.unlink()
    assert main(["verify", str(tiny_dataset)]) == 1
    assert rows[3].relative_path in capsys.readouterr().out


def test_verify_flags_grey_pixel(tiny_dataset, capsys):
    rows = read_manifest(tiny_dataset).rows
    path = tiny_dataset / rows[0].relative_path
    img = decode(path.read_bytes())
    px = img.pixels.copy()
    px[1, 1] = 37
    path.write_bytes(encode_binary(BinaryImage(px)))
    assert main(["verify", str(tiny_dataset)]) == 1
    out = capsys.readouterr().out
    assert rows[0].relative_path in out and "37" in out


def test_verify_flags_tampered_manifest(tiny_dataset, capsys):
    m = tiny_dataset / "manifest.csv"
    lines = m.read_text().splitlines()
    cols = lines[1].split(",")
    cols[5] = str(int(cols[5]) + 1)  # frame_step no longer a multiple of spacing
    lines[1] = ",".join(cols)
    m.write_text("\n".join(lines) + "\n")
    assert main(["verify", str(tiny_dataset)]) == 1


def test_verify_deep(tiny_dataset):
    assert main(["verify", "--deep", str(tiny_dataset)]) == 0


def test_verify_missing_manifest(tmp_path):
    assert main(["verify", str(tmp_path)]) == 2
    assert main(["stats", str(tmp_path)]) == 2


def test_stats(tiny_dataset, capsys):
    assert main(["stats", "--json", "--images", str(tiny_dataset)]) == 0
    stats = json.loads(capsys.readouterr().out)
    total = stats["total"]
    assert total["images"] == 20
    assert total["splits"] == {"train": 16, "val": 2, "test": 2}
    assert all(c["images"] == 10 for c in stats["classes"].values())
    assert total["identity_pixels"]["min"] >= total["min_threshold_used"]
    assert main(["stats", str(tiny_dataset)]) == 0
    assert "total: 2 classes, 20 images" in capsys.readouterr().out


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.startswith("rewave ")
