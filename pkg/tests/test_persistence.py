"""Tests for file formats, atomic writes and reports."""

import dataclasses

import numpy as np
import pytest

from nbv_planner.errors import ArchitectureMismatchError, FormatError, InvalidArgumentError
from nbv_planner.loop import EpisodeLog, EpisodeStep, EvalSummary, Termination
from nbv_planner.models import Architecture, ObjectSpec, SceneConfig
from nbv_planner.net import init_params, predict
from nbv_planner.oracle import CandidateAudit, Example
from nbv_planner.persistence import (
    atomic_write,
    decode_dataset,
    decode_weights,
    encode_dataset,
    encode_weights,
    episode_csv,
    load_object,
    merge_datasets,
    read_csv_rows,
    read_dataset,
    read_ply,
    read_views_csv,
    read_weights,
    read_xyz,
    removed_on_failure,
    write_candidates_csv,
    write_comparison_csv,
    write_dataset,
    write_history_csv,
    write_ply,
    write_views_csv,
    write_weights,
    write_xyz,
)
from nbv_planner.scene import PointCloud, box_mesh, generate_view_sphere
from nbv_planner.training import HistoryRow

QUAD_PLY = """ply
format ascii 1.0
comment made by hand
element vertex 4
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
{second}
0.1 0.1 0
0 0.1 0
4 0 1 2 3
"""


def make_examples(n, edge=4, seed=0):
    rng = np.random.default_rng(seed)
    return [
        Example(
            grid=rng.uniform(0.0, 1.0, size=(edge, edge, edge)).astype(np.float32),
            label=int(rng.integers(0, 14)),
            object_id=i % 2,
            run_id=i,
            iteration=i % 3,
        )
        for i in range(n)
    ]


def assert_same_examples(left, right):
    assert len(left) == len(right)
    for a, b in zip(left, right):
        assert (a.label, a.object_id, a.run_id, a.iteration) == (
            b.label,
            b.object_id,
            b.run_id,
            b.iteration,
        )
        np.testing.assert_array_equal(a.grid, b.grid)


# --- datasets -----------------------------------------------------------------


def test_dataset_round_trip(tmp_path):
    """Test that examples survive a write and read unchanged."""
    examples = make_examples(5)
    path = tmp_path / "data.nbvd"

    write_dataset(examples, path)
    data = read_dataset(path)

    assert data.edge == 4 and data.num_classes == 14
    assert_same_examples(data.examples, examples)
    raw = path.read_bytes()
    assert raw[:4] == b"NBVD"
    assert len(raw) == 16 + 5 * (11 + 4 * 4**3)


def test_empty_dataset(tmp_path):
    """Test a dataset with no examples."""
    path = tmp_path / "empty.nbvd"
    write_dataset([], path, edge=8)

    data = read_dataset(path)
    assert data.examples == [] and data.edge == 8


def test_encode_dataset_rejects_bad_examples():
    """Test label and grid shape checks on write."""
    bad_label = dataclasses.replace(make_examples(1)[0], label=14)
    with pytest.raises(InvalidArgumentError):
        encode_dataset([bad_label], 4, 14)
    with pytest.raises(InvalidArgumentError):
        encode_dataset(make_examples(1, edge=3), 4, 14)
    with pytest.raises(InvalidArgumentError):
        encode_dataset([], 4, 0)


def test_dataset_corruption_is_reported():
    """Test truncation, trailing bytes, magic, version and record checks."""
    data = encode_dataset(make_examples(3), 4, 14)

    with pytest.raises(FormatError, match="truncated"):
        decode_dataset(data[:-1])
    with pytest.raises(FormatError, match="truncated dataset header"):
        decode_dataset(data[:10])
    with pytest.raises(FormatError, match="trailing"):
        decode_dataset(data + b"\x00")
    with pytest.raises(FormatError, match="bad magic"):
        decode_dataset(b"XXXX" + data[4:])
    with pytest.raises(FormatError, match="version"):
        decode_dataset(data[:4] + b"\x02\x00" + data[6:])

    label_at = 16 + 10
    bad = bytearray(data)
    bad[label_at] = 200
    with pytest.raises(FormatError) as excinfo:
        decode_dataset(bytes(bad))
    assert excinfo.value.offset == label_at


def test_dataset_probability_range_is_checked():
    """Test that grid values outside [0, 1] are rejected on read."""
    examples = make_examples(2)
    examples[1].grid[0, 0, 0] = 1.5
    with pytest.raises(FormatError, match="probability"):
        decode_dataset(encode_dataset(examples, 4, 14))


def test_merge_datasets(tmp_path):
    """Test concatenation order and the updated count."""
    first, second = make_examples(2, seed=1), make_examples(3, seed=2)
    write_dataset(first, tmp_path / "a.nbvd")
    write_dataset(second, tmp_path / "b.nbvd")

    total = merge_datasets([tmp_path / "a.nbvd", tmp_path / "b.nbvd"], tmp_path / "all.nbvd")

    assert total == 5
    assert_same_examples(read_dataset(tmp_path / "all.nbvd").examples, first + second)


def test_merge_datasets_rejects_mixed_inputs(tmp_path):
    """Test mismatched edges, corrupt inputs and an empty input list."""
    write_dataset(make_examples(1, edge=4), tmp_path / "a.nbvd")
    write_dataset(make_examples(1, edge=5), tmp_path / "b.nbvd")
    (tmp_path / "bad.nbvd").write_bytes(b"junk")

    with pytest.raises(InvalidArgumentError):
        merge_datasets([tmp_path / "a.nbvd", tmp_path / "b.nbvd"], tmp_path / "out.nbvd")
    with pytest.raises(FormatError, match="bad.nbvd"):
        merge_datasets([tmp_path / "a.nbvd", tmp_path / "bad.nbvd"], tmp_path / "out.nbvd")
    with pytest.raises(InvalidArgumentError):
        merge_datasets([], tmp_path / "out.nbvd")
    assert not (tmp_path / "out.nbvd").exists()


# --- weights ------------------------------------------------------------------


@pytest.fixture(scope="module")
def nbvnet():
    return init_params(Architecture.NBVNET, seed=3)


def test_weights_round_trip(tmp_path, nbvnet):
    """Test that a saved network predicts exactly like the original."""
    path = tmp_path / "w.nbvw"
    write_weights(nbvnet, path)

    loaded = read_weights(path, expected=Architecture.NBVNET)

    assert loaded.architecture == Architecture.NBVNET
    assert loaded.num_classes == 14
    assert loaded.describe() == nbvnet.describe()
    for a, b in zip(loaded.arrays(), nbvnet.arrays()):
        np.testing.assert_array_equal(a, b)
    grid = np.random.default_rng(0).uniform(size=(32, 32, 32))
    assert predict(loaded, grid)[0] == predict(nbvnet, grid)[0]
    np.testing.assert_array_equal(predict(loaded, grid)[1], predict(nbvnet, grid)[1])


def test_weights_architecture_mismatch(nbvnet):
    """Test a requested layout that differs from the stored one."""
    data = encode_weights(nbvnet)

    with pytest.raises(ArchitectureMismatchError, match="architecture mismatch"):
        decode_weights(data, expected=Architecture.FCBASELINE)

    relabeled = bytearray(data)
    relabeled[6] = Architecture.FCBASELINE.code
    with pytest.raises(ArchitectureMismatchError):
        decode_weights(bytes(relabeled))


def test_weights_corruption_is_reported(nbvnet):
    """Test truncation, trailing bytes, magic and architecture id checks."""
    data = encode_weights(nbvnet)

    with pytest.raises(FormatError, match="truncated"):
        decode_weights(data[:-8])
    with pytest.raises(FormatError, match="trailing"):
        decode_weights(data + b"\x00")
    with pytest.raises(FormatError, match="bad magic"):
        decode_weights(b"NBVD" + data[4:])
    unknown = bytearray(data)
    unknown[6] = 9
    with pytest.raises(FormatError, match="unknown architecture"):
        decode_weights(bytes(unknown))


# --- meshes and clouds ----------------------------------------------------------


def test_ply_round_trip(tmp_path):
    """Test that written meshes read back exactly."""
    mesh = box_mesh([0.1, 0.08, 0.06])
    write_ply(mesh, tmp_path / "box.ply")

    loaded = read_ply(tmp_path / "box.ply")

    np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
    np.testing.assert_array_equal(loaded.triangles, mesh.triangles)


def test_ply_polygons_are_fan_triangulated(tmp_path):
    """Test a quad face with header comments."""
    path = tmp_path / "quad.ply"
    path.write_text(QUAD_PLY.format(second="0.1 0 0"))

    mesh = read_ply(path)

    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    assert mesh.vertices.shape == (4, 3)


def test_ply_errors_name_the_line(tmp_path):
    """Test malformed vertices, missing magic and binary formats."""
    path = tmp_path / "bad.ply"
    path.write_text(QUAD_PLY.format(second="0.1 zero 0"))
    with pytest.raises(FormatError, match="at line 12"):
        read_ply(path)

    path.write_text(QUAD_PLY.replace("ply\n", "mesh\n", 1).format(second="0.1 0 0"))
    with pytest.raises(FormatError, match="bad magic"):
        read_ply(path)

    path.write_text(QUAD_PLY.replace("ascii", "binary_little_endian").format(second="0.1 0 0"))
    with pytest.raises(FormatError, match="unsupported"):
        read_ply(path)

    path.write_text(QUAD_PLY.replace("4 0 1 2 3", "3 0 1 9").format(second="0.1 0 0"))
    with pytest.raises(FormatError, match="out of range"):
        read_ply(path)


def test_xyz_round_trip_and_errors(tmp_path):
    """Test cloud files and a short line."""
    cloud = PointCloud(np.random.default_rng(0).normal(size=(20, 3)))
    write_xyz(cloud, tmp_path / "c.xyz")
    np.testing.assert_array_equal(read_xyz(tmp_path / "c.xyz").points, cloud.points)

    (tmp_path / "bad.xyz").write_text("0 0 0\n1 2\n")
    with pytest.raises(FormatError, match="at line 2"):
        read_xyz(tmp_path / "bad.xyz")


def test_load_object(tmp_path):
    """Test procedural and PLY objects and the view sphere bound."""
    scene = SceneConfig()
    demo = load_object(ObjectSpec(object_id=0, kind="box", seed=1), scene)
    assert demo.half_extent() < scene.sphere_radius

    inside = tmp_path / "inside.ply"
    inside.write_text(QUAD_PLY.format(second="0.1 0 0"))
    assert len(load_object(ObjectSpec(object_id=1, kind="ply", path=str(inside)), scene).triangles)

    outside = tmp_path / "outside.ply"
    outside.write_text(QUAD_PLY.format(second="1.0 0 0"))
    with pytest.raises(InvalidArgumentError, match="outside the view sphere"):
        load_object(ObjectSpec(object_id=2, kind="ply", path=str(outside)), scene)


# --- reports ----------------------------------------------------------------------


def test_views_csv(tmp_path):
    """Test that the views table reproduces every pose exactly."""
    views = generate_view_sphere(14, 0.4, hemisphere_only=True)
    write_views_csv(views, tmp_path / "views.csv")

    rows = read_views_csv(tmp_path / "views.csv")

    assert len(rows) == 14
    for row, view in zip(rows, views):
        assert int(row["id"]) == view.id
        assert (row["x"], row["y"], row["z"]) == (view.x, view.y, view.z)
        assert (row["alpha"], row["beta"], row["gamma"]) == (view.alpha, view.beta, view.gamma)


def test_episode_csv_marks_last_row():
    """Test that only the final row carries the termination reason."""
    log = EpisodeLog(0, 1, 0, 3, "random", termination=Termination.REPEATED_POSE)
    log.steps = [EpisodeStep(1, 3, 0.25, 0.0, "a"), EpisodeStep(2, 5, 0.5, 0.75, "b")]

    lines = episode_csv(log).splitlines()

    assert lines == [
        "iter,view_id,coverage,overlap,term_reason",
        "1,3,0.25,0,",
        "2,5,0.5,0.75,repeated_pose",
    ]


def _summary(policy, coverage):
    log = EpisodeLog(0, 0, 0, 0, policy)
    log.steps = [EpisodeStep(1, 0, coverage, 0.0, "")]
    return EvalSummary.from_logs(policy, [log], {0: "box:0"})


def test_comparison_and_history_csv(tmp_path):
    """Test paired comparison rows and the training history table."""
    write_comparison_csv(
        {"random": _summary("random", 0.4), "network": _summary("network", 0.7)},
        tmp_path / "cmp.csv",
    )
    rows = read_csv_rows(tmp_path / "cmp.csv")
    assert [(r["object"], r["policy"], r["mean_cov"]) for r in rows] == [
        ("box:0", "network", "0.7"),
        ("box:0", "random", "0.4"),
    ]

    write_history_csv([HistoryRow(1, 0.5, 0.25, 2.0)], tmp_path / "h.csv")
    assert read_csv_rows(tmp_path / "h.csv") == [
        {"epoch": "1", "train_acc": "0.5", "test_acc": "0.25", "loss": "2"}
    ]


def test_candidates_csv(tmp_path):
    """Test the candidate table with the selected flag."""
    candidates = [
        CandidateAudit(0, 0.0, None, 0.0, False, visited=True),
        CandidateAudit(1, 0.8, 5, 0.125, True),
        CandidateAudit(2, 0.1, None, 0.5, False),
    ]
    write_candidates_csv(candidates, 1, tmp_path / "c.csv")

    rows = read_csv_rows(tmp_path / "c.csv")

    assert [r["selected"] for r in rows] == ["0", "1", "0"]
    assert [r["features"] for r in rows] == ["", "5", ""]
    assert rows[0]["visited"] == "1" and rows[1]["feasible"] == "1"


# --- atomic writes ----------------------------------------------------------------


def test_atomic_write(tmp_path):
    """Test parent creation, replacement and no leftover temporaries."""
    path = tmp_path / "nested" / "out.txt"
    atomic_write(path, "first")
    atomic_write(path, b"second")

    assert path.read_bytes() == b"second"
    assert [p.name for p in path.parent.iterdir()] == ["out.txt"]


def test_removed_on_failure(tmp_path):
    """Test that outputs written before an error are removed and older files kept."""
    kept = tmp_path / "kept.txt"
    kept.write_text("old")
    created = tmp_path / "new.txt"
    later = tmp_path / "later.txt"

    with pytest.raises(RuntimeError):
        with removed_on_failure([kept, created]) as tracked:
            created.write_text("partial")
            tracked.append(later)
            later.write_text("partial")
            raise RuntimeError("boom")

    assert kept.read_text() == "old"
    assert not created.exists()
    assert not later.exists()


def test_removed_on_failure_keeps_outputs_on_success(tmp_path):
    """Test that a clean exit leaves the outputs in place."""
    path = tmp_path / "out.txt"
    with removed_on_failure([path]):
        path.write_text("done")
    assert path.read_text() == "done"
