"""Voxel IoU, experiment protocols and table reporting."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stackrecon.evaluation import (
    PUBLISHED_TABLE,
    TABLE_COLUMNS,
    ExperimentReport,
    IoURecord,
    binarize,
    report_table,
    run_experiment,
    standard_error,
    voxel_iou,
)
from stackrecon.geometry import box_mesh, icosphere, write_obj
from stackrecon.geometry.dataset import DatasetManifest, build_dataset
from stackrecon.geometry.grids import VoxelGrid

grids = arrays(np.uint8, (4, 4, 4), elements=st.integers(0, 1))


def count_iou(a, b):
    """Independent oracle by explicit voxel enumeration."""
    inter = union = 0
    for u, v in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += u and v
        union += u or v
    return 1.0 if union == 0 else inter / union


class TestBinarize:
    def test_examples(self):
        assert binarize(np.full((2, 2, 2), 0.6)).values.all()
        assert not binarize(np.full((2, 2, 2), 0.5)).values.any()

    @given(grids, st.floats(0.01, 0.99))
    def test_idempotent_on_binary(self, g, t):
        assert np.array_equal(binarize(g, t).values, g)

    def test_threshold_range(self):
        with pytest.raises(ValueError):
            binarize(np.zeros((2, 2, 2)), 1.0)


class TestIoU:
    def test_column_overlap_one_third(self):
        a = np.zeros((32, 32, 32), dtype=np.uint8)
        b = np.zeros_like(a)
        a[0:16, 5, 5] = 1
        b[8:24, 5, 5] = 1
        assert voxel_iou(a, b) == 1 / 3

    def test_examples(self):
        a = np.zeros((4, 4, 4), dtype=np.uint8)
        a[0] = 1
        assert voxel_iou(a, a) == 1.0
        assert voxel_iou(a, 1 - a) == 0.0
        assert voxel_iou(np.zeros_like(a), np.zeros_like(a)) == 1.0

    @settings(max_examples=200)
    @given(grids, grids)
    def test_axioms(self, a, b):
        v = voxel_iou(a, b)
        assert v == count_iou(a, b)
        assert v == voxel_iou(b, a)
        assert 0.0 <= v <= 1.0
        assert (v == 1.0) == np.array_equal(a, b)

    @given(grids, grids)
    def test_monotone_under_disjoint_additions(self, a, b):
        extra = (1 - a) & (1 - b)
        flat = np.flatnonzero(extra)
        prev = voxel_iou(a, b)
        grown = b.copy()
        for i in flat[:5]:
            grown.flat[i] = 1
            cur = voxel_iou(a, grown)
            assert cur <= prev
            prev = cur

    def test_errors(self):
        with pytest.raises(ValueError, match="resolution"):
            voxel_iou(np.zeros((2, 2, 2)), np.zeros((3, 3, 3)))
        with pytest.raises(ValueError, match="binary"):
            voxel_iou(np.full((2, 2, 2), 0.5), np.zeros((2, 2, 2)))


class TestReport:
    def records(self):
        rng = np.random.default_rng(0)
        return [IoURecord("m", 18.0 * (i % 10 + 1), 20.0, i % 3 == 0, float(rng.random()), "single")
                for i in range(30)]

    def test_standard_error(self):
        v = [0.2, 0.4, 0.9]
        assert standard_error(v) == pytest.approx(np.std(v, ddof=1) / np.sqrt(3))
        assert standard_error([0.5]) == 0.0

    def test_convex_combination(self):
        rep = ExperimentReport("E1", "toy", "single", self.records())
        nh, ne = rep.count("hard"), rep.count("easy")
        mixed = (nh * rep.mean("hard") + ne * rep.mean("easy")) / (nh + ne)
        assert rep.mean() == pytest.approx(mixed, rel=1e-12)

    def test_json_round_trip(self):
        rep = ExperimentReport("E2", "toy", "stacked", self.records(), "abc", seed=5)
        back = ExperimentReport.from_json(rep.to_json())
        assert back == rep
        d = json.loads(rep.to_json())
        assert d["aggregates"]["all"]["count"] == 30
        assert sum(d["histogram"]["counts"]) == 30

    def test_records_csv(self):
        rep = ExperimentReport("E1", "toy", "single", self.records()[:2])
        lines = rep.records_csv().splitlines()
        assert lines[0] == "model_id,alpha,beta,hard,network,iou"
        assert len(lines) == 3

    def test_iou_bounds_enforced(self):
        with pytest.raises(ValueError):
            IoURecord("m", 1, 1, False, 1.5, "single")

    def test_empty_table(self):
        md, table_csv = report_table([])
        assert md.count("\n") == 2
        assert table_csv.strip() == "category,source,column,mean,stderr,count"

    def test_reference_rows(self):
        md, _ = report_table([], reference=True)
        cars = [l for l in md.splitlines() if l.startswith("| Cars")][0]
        values = [c.strip() for c in cars.strip("|").split("|")][2:]
        assert values == ["0.798", "0.699", "0.765", "0.817", "0.828", "0.601", "0.686"]
        planes = [l for l in md.splitlines() if l.startswith("| Planes")][0]
        values = [c.strip() for c in planes.strip("|").split("|")][2:]
        assert values == ["0.513", "0.373", "0.469", "0.473", "0.474", "0.384", "0.430"]
        assert "published" in cars

    def test_missing_cells_blank(self):
        rep = ExperimentReport("E2", "toy", "single", self.records())
        md, table_csv = report_table([rep])
        row = [c.strip() for c in md.splitlines()[2].strip("|").split("|")]
        filled = {col for col, cell in zip(TABLE_COLUMNS, row[3:]) if cell}
        assert filled == {"S-All-E2"}
        assert table_csv.count("measured") == 1

    def test_published_columns(self):
        for values in PUBLISHED_TABLE.values():
            assert set(values) == {"3D-R2N2", *TABLE_COLUMNS}


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    write_obj(box_mesh(), root / "cube.obj")
    write_obj(icosphere(2), root / "ball.obj")
    return build_dataset([root / "cube.obj", root / "ball.obj"], root / "data", train_ratio=0.5,
                         resolution=16, n_polar=10, n_azimuth=18)


class TestRunExperiment:
    @staticmethod
    def oracle(samples):
        """Predicts the ground truth exactly."""
        return np.stack([s.gt[0] for s in samples])

    def test_perfect_predictor(self, toy_manifest):
        predict = self.oracle
        rep = run_experiment(None, toy_manifest, "E1", predictor=predict, network="stacked")
        assert rep.count() == 180 and rep.count("hard") == 20
        assert rep.mean() == 1.0 and rep.stderr() == 0.0

    def test_e2_views_and_determinism(self, toy_manifest):
        predict = self.oracle
        a = run_experiment(None, toy_manifest, "E2", seed=3, predictor=predict)
        b = run_experiment(None, toy_manifest, "E2", seed=3, predictor=predict)
        e1 = run_experiment(None, toy_manifest, "E1", predictor=predict)
        assert a == b and a.seed == 3 and a.experiment == "E2"
        assert not {(r.alpha, r.beta) for r in a.records} & {(r.alpha, r.beta) for r in e1.records}

    def test_resolution_mismatch(self, toy_manifest):
        from stackrecon.network import NetworkSpec, init_params

        p = init_params(NetworkSpec(resolution=32, width_mult=1 / 16), 1)
        with pytest.raises(ValueError, match="resolution mismatch"):
            run_experiment(p, toy_manifest, "E1")

    def test_bad_mode(self, toy_manifest):
        predict = self.oracle
        with pytest.raises(ValueError, match="E1 or E2"):
            run_experiment(None, toy_manifest, "E3", predictor=predict)

    def test_network_path(self, toy_manifest):
        from stackrecon.network import NetworkSpec, init_params

        p = init_params(NetworkSpec(resolution=16, width_mult=1 / 16), 2)
        rep = run_experiment(p, toy_manifest, "E1")
        assert rep.network == "stacked" and rep.count() == 180
        assert all(0.0 <= r.iou <= 1.0 for r in rep.records)


class TestDataset:
    def test_counts_and_files(self, tmp_path):
        write_obj(box_mesh(), tmp_path / "a.obj")
        write_obj(icosphere(1), tmp_path / "b.obj")
        m = build_dataset([tmp_path / "a.obj", tmp_path / "b.obj"], tmp_path / "out", n_polar=2, n_azimuth=3,
                          resolution=16, train_ratio=0.5)
        assert len(list((tmp_path / "out").rglob("view_*.pbm"))) == 12
        assert len(list((tmp_path / "out").rglob("*.vox"))) == 2
        assert len(m.split("train")) == len(m.split("test")) == 1

    def test_split_ratio(self):
        from stackrecon.geometry.dataset import split_models

        mask = split_models(100, 0.78, seed=0)
        assert mask.sum() == 78 and (~mask).sum() == 22

    def test_rebuild_identical_and_skip_bad(self, tmp_path):
        write_obj(box_mesh(), tmp_path / "a.obj")
        (tmp_path / "broken.obj").write_text("v 0 0 0\nf 1 2 3\n")
        kw = dict(n_polar=2, n_azimuth=2, resolution=16, silhouette_format="bits")
        m1 = build_dataset([tmp_path / "a.obj", tmp_path / "broken.obj"], tmp_path / "o1", **kw)
        m2 = build_dataset([tmp_path / "a.obj", tmp_path / "broken.obj"], tmp_path / "o1", **kw)
        assert m1.to_json() == m2.to_json()
        assert m1.warnings == 1 and "broken.obj" in m1.skipped[0]["path"]
        loaded = DatasetManifest.load(tmp_path / "o1" / "manifest.json")
        assert loaded.to_json() == m1.to_json()
        entry = loaded.models[0].views[0]
        assert loaded.load_silhouette(entry).pixels.shape == (16, 16)
        assert isinstance(loaded.load_voxels(loaded.models[0]), VoxelGrid)

    def test_no_meshes(self, tmp_path):
        with pytest.raises(ValueError):
            build_dataset([], tmp_path)
