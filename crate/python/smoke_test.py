"""Import the extension and exercise each binding once.

Uses an installed `forest_py` if present, else the library from
`cargo build -p forest-py` (target/debug or target/release).
"""

import importlib.util
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import forest_py

        return forest_py
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libforest_py.so"
        if lib.exists():
            tmp = pathlib.Path(tempfile.mkdtemp()) / "forest_py.so"
            shutil.copy(lib, tmp)
            spec = importlib.util.spec_from_file_location("forest_py", tmp)
            mod = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(mod)
            return mod
    sys.exit("forest_py not found; run `cargo build -p forest-py` first")


fp = load()
ADC_MAX = 4095

s = fp.compute_signal(512, 36.0, 25.0)
assert abs(s - (0.6 * 512 / ADC_MAX + 0.3 + 0.05)) < 1e-12, s
assert fp.rank_sectors([(0, 0.2), (1, 0.7), (2, 0.7)]) == 1

wire = fp.encode_reading(1, 7, 1000, 21.5, 40.0, 650.0, 100, 0)
msg = fp.decode(wire)
assert msg["node_id"] == 1 and msg["seq"] == 7, msg
try:
    fp.decode(b'{"node_id":1}')
    raise AssertionError("malformed wire accepted")
except ValueError as e:
    print("rejected:", e)

net = fp.QNetwork(6, 3, seed=1)
assert net.sizes() == [6, 24, 24, 3]
q = net.forward([0.0] * 6)
clone = fp.QNetwork.from_bytes(net.to_bytes())
assert clone.forward([0.0] * 6) == q

net, metrics = fp.train("episodes = 3\nsteps_per_episode = 10\nseed = 2\n")
assert len(metrics["episode_rewards"]) == 3

assert fp.moving_average([1.0, 2.0, 3.0, 4.0], 2) == [1.0, 1.5, 2.5, 3.5]
assert fp.amdf([0.0, 1.0] * 8, 2) < 1e-9
assert len(fp.preprocess(320, 240, 3, bytes(320 * 240 * 3))) == 240 * 240
assert fp.rotation_ms(0.0, 90.0) == 1500
assert fp.rotation_ms(350.0, 10.0) == 333

scenario = (ROOT / "scenarios" / "deployment.toml").read_text()
policy = (ROOT / "scenarios" / "deployment-policy.toml").read_text()
out = fp.run_scenario(scenario, policy)
print(out["summary_text"], end="")
assert len(out["alerts"]) == 15

print("smoke test ok")
