import numpy as np
import pytest

from rangeview.ingest import data_path, generate_synthetic_scan, load_label_map, random_synth_spec
from rangeview.model import ClassWeights, PointAnnotations, PointCloud, SensorConfig, validate_frame


@pytest.fixture(scope="session")
def label_map():
    return load_label_map()


@pytest.fixture(scope="session")
def things(label_map):
    return frozenset(label_map.thing_classes)


def make_frame(xyz, sem=None, ins=None, rem=None):
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    n = len(xyz)
    rem = np.full(n, 0.5) if rem is None else rem
    sem = np.zeros(n, dtype=np.int64) if sem is None else sem
    ins = np.zeros(n, dtype=np.int64) if ins is None else ins
    return validate_frame(PointCloud(xyz, rem), PointAnnotations(sem, ins))


def random_frame(seed, n_points, rings=None):
    spec = random_synth_spec(seed, n_points, rings=rings)
    cloud, ann, rows = generate_synthetic_scan(spec)
    return validate_frame(cloud, ann), rows, spec


def random_config(rng, rings):
    """A raster small enough that many-to-one conflicts occur."""
    return SensorConfig(width=int(rng.choice([64, 128, 256, 512])), height=int(rng.choice([max(1, rings // 2), rings])))


@pytest.fixture(scope="session")
def occluder_scene():
    from rangeview.ingest import load_synth_spec

    spec = load_synth_spec(data_path("occluder-scene.cfg"))
    cloud, ann, rows = generate_synthetic_scan(spec)
    return validate_frame(cloud, ann), rows, spec


@pytest.fixture(scope="session")
def sample_weights(label_map):
    from rangeview.score import load_class_weights

    return load_class_weights(data_path("cwap-sample.cfg"), label_map)


ZERO_WEIGHTS = ClassWeights({}, 0.0)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
