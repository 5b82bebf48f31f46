"""On-disk formats: datasets, weights, meshes, clouds, CSV reports and manifests.

Binary integers and reals are little-endian. Every reader loads the whole file
before parsing, so a malformed file never yields a partial result.
"""

import csv
import io
import os
import struct
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Optional, Sequence, Union

import numpy as np
import yaml

from nbv_planner import __version__
from nbv_planner.config import flatten_config
from nbv_planner.errors import ArchitectureMismatchError, FormatError, InvalidArgumentError
from nbv_planner.loop import EpisodeLog, EvalSummary
from nbv_planner.models import Architecture, ObjectSpec, SceneConfig, ToolkitConfig
from nbv_planner.net import (
    Conv3d,
    Dense,
    LayerParams,
    NetworkParams,
    architecture_layers,
)
from nbv_planner.oracle import CandidateAudit, Example
from nbv_planner.scene import PointCloud, TriangleMesh, ViewSet, generate_demo_object
from nbv_planner.training import HistoryRow

PathLike = Union[str, Path]

DATASET_MAGIC = b"NBVD"
DATASET_VERSION = 1
DATASET_HEADER = struct.Struct("<4sHHHHI")
RECORD_PREFIX = 11

WEIGHTS_MAGIC = b"NBVW"
WEIGHTS_VERSION = 1
WEIGHTS_HEADER = struct.Struct("<4sHBI")
LAYER_HEADER = struct.Struct("<B4I")
KIND_CONV = 1
KIND_DENSE = 2


def atomic_write(path: PathLike, data: Union[bytes, str]) -> None:
    """Write to a temporary sibling, then rename over `path`."""
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        if isinstance(data, bytes):
            tmp.write_bytes(data)
        else:
            with open(tmp, "w", newline="") as f:
                f.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _stamp(path: Path) -> Optional[tuple[int, int, int]]:
    try:
        st = path.stat()
    except FileNotFoundError:
        return None
    return (st.st_ino, st.st_mtime_ns, st.st_size)


@contextmanager
def removed_on_failure(paths: Iterable[PathLike] = ()) -> Iterator[list[Path]]:
    """Track output files; if the block raises, delete those it created or replaced.

    Outputs only known later can be appended to the yielded list.
    """
    tracked = [Path(p) for p in paths]
    before = {p: _stamp(p) for p in tracked}
    try:
        yield tracked
    except BaseException:
        for path in tracked:
            if path.exists() and before.get(path) != _stamp(path):
                path.unlink()
        raise


# --- datasets -----------------------------------------------------------------


@dataclass
class Dataset:
    examples: list[Example]
    edge: int
    num_classes: int


def record_dtype(edge: int) -> np.dtype:
    return np.dtype(
        [
            ("object_id", "<u4"),
            ("run_id", "<u4"),
            ("iteration", "<u2"),
            ("label", "u1"),
            ("grid", "<f4", (edge, edge, edge)),
        ]
    )


def encode_dataset(examples: Sequence[Example], edge: int, num_classes: int) -> bytes:
    if not 1 <= num_classes <= 255:
        raise InvalidArgumentError(f"class count must be in 1..255, got {num_classes}")
    records = np.zeros(len(examples), dtype=record_dtype(edge))
    for i, example in enumerate(examples):
        grid = np.asarray(example.grid, dtype=np.float32)
        if grid.shape != (edge, edge, edge):
            raise InvalidArgumentError(f"example {i} grid {grid.shape} is not {edge}^3")
        if not 0 <= example.label < num_classes:
            raise InvalidArgumentError(f"example {i} label {example.label} >= {num_classes}")
        records[i] = (example.object_id, example.run_id, example.iteration, example.label, grid)
    header = DATASET_HEADER.pack(
        DATASET_MAGIC, DATASET_VERSION, edge, num_classes, 0, len(examples)
    )
    return header + records.tobytes()


def write_dataset(
    examples: Sequence[Example], path: PathLike, edge: Optional[int] = None, num_classes: int = 14
) -> None:
    """Write examples; `edge` defaults to the first grid's edge (32 when empty)."""
    if edge is None:
        edge = int(np.asarray(examples[0].grid).shape[0]) if examples else 32
    atomic_write(path, encode_dataset(examples, edge, num_classes))


def _parse_dataset_header(data: bytes) -> tuple[int, int, int]:
    if len(data) < DATASET_HEADER.size:
        raise FormatError("truncated dataset header", len(data))
    magic, version, edge, num_classes, _, count = DATASET_HEADER.unpack_from(data)
    if magic != DATASET_MAGIC:
        raise FormatError("bad magic, not a dataset file", 0)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    if edge < 1 or num_classes < 1:
        raise FormatError(f"invalid grid edge {edge} or class count {num_classes}", 6)
    record_size = RECORD_PREFIX + 4 * edge**3
    expected = DATASET_HEADER.size + count * record_size
    if len(data) < expected:
        complete = (len(data) - DATASET_HEADER.size) // record_size
        raise FormatError(
            f"truncated dataset: header promises {count} examples, file holds {complete}",
            DATASET_HEADER.size + complete * record_size,
        )
    if len(data) > expected:
        raise FormatError("trailing bytes after the last example", expected)
    return edge, num_classes, count


def decode_dataset(data: bytes) -> Dataset:
    edge, num_classes, count = _parse_dataset_header(data)
    dtype = record_dtype(edge)
    records = np.frombuffer(data, dtype=dtype, count=count, offset=DATASET_HEADER.size)

    bad_label = np.nonzero(records["label"] >= num_classes)[0]
    if len(bad_label):
        i = int(bad_label[0])
        raise FormatError(
            f"example {i} label {records['label'][i]} >= {num_classes}",
            DATASET_HEADER.size + i * dtype.itemsize + 10,
        )
    grids = records["grid"]
    bad_prob = np.nonzero(~np.all((grids >= 0.0) & (grids <= 1.0), axis=(1, 2, 3)))[0]
    if len(bad_prob):
        i = int(bad_prob[0])
        raise FormatError(
            f"example {i} holds a probability outside [0, 1]",
            DATASET_HEADER.size + i * dtype.itemsize + RECORD_PREFIX,
        )

    examples = [
        Example(
            grid=np.array(r["grid"], dtype=np.float32),
            label=int(r["label"]),
            object_id=int(r["object_id"]),
            run_id=int(r["run_id"]),
            iteration=int(r["iteration"]),
        )
        for r in records
    ]
    return Dataset(examples, edge, num_classes)


def read_dataset(path: PathLike) -> Dataset:
    return decode_dataset(Path(path).read_bytes())


def merge_datasets(paths: Sequence[PathLike], out: PathLike) -> int:
    """Concatenate dataset files with the same edge and class count.

    Records are copied verbatim; only the header count changes. Returns the total.
    """
    if not paths:
        raise InvalidArgumentError("nothing to merge")
    blobs = []
    shape: Optional[tuple[int, int]] = None
    total = 0
    for path in paths:
        data = Path(path).read_bytes()
        try:
            edge, num_classes, count = _parse_dataset_header(data)
        except FormatError as e:
            raise FormatError(f"{path}: {e.reason}", e.offset) from e
        if shape is not None and shape != (edge, num_classes):
            raise InvalidArgumentError(
                f"{path} has edge {edge} and {num_classes} classes, "
                f"expected {shape[0]} and {shape[1]}"
            )
        shape = (edge, num_classes)
        total += count
        blobs.append(data[DATASET_HEADER.size :])
    assert shape is not None
    header = DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, shape[0], shape[1], 0, total)
    atomic_write(out, header + b"".join(blobs))
    return total


# --- weights ------------------------------------------------------------------


def encode_weights(params: NetworkParams) -> bytes:
    parts = []
    layers = params.parametric()
    parts.append(
        WEIGHTS_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, params.architecture.code, len(layers))
    )
    for layer, p in layers:
        if isinstance(layer, Conv3d):
            f, c = p.weight.shape[:2]
            parts.append(LAYER_HEADER.pack(KIND_CONV, f, c, layer.kernel, layer.stride))
        else:
            n_out, n_in = p.weight.shape
            parts.append(LAYER_HEADER.pack(KIND_DENSE, n_out, n_in, 1, 1))
        parts.append(p.weight.astype("<f8").tobytes())
        parts.append(p.bias.astype("<f8").tobytes())
    return b"".join(parts)


def write_weights(params: NetworkParams, path: PathLike) -> None:
    atomic_write(path, encode_weights(params))


def decode_weights(
    data: bytes, expected: Optional[Architecture] = None, keep: float = 0.7
) -> NetworkParams:
    """Parse a weights file and check it against its architecture's layer walk."""
    if len(data) < WEIGHTS_HEADER.size:
        raise FormatError("truncated weights header", len(data))
    magic, version, arch_code, count = WEIGHTS_HEADER.unpack_from(data)
    if magic != WEIGHTS_MAGIC:
        raise FormatError("bad magic, not a weights file", 0)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights version {version}", 4)
    try:
        arch = Architecture.from_code(arch_code)
    except ValueError:
        raise FormatError(f"unknown architecture id {arch_code}", 6)
    if expected is not None and arch != expected:
        raise ArchitectureMismatchError(
            f"architecture mismatch: file holds {arch.value}, requested {expected.value}", 6
        )

    offset = WEIGHTS_HEADER.size
    stored: list[tuple[int, tuple[int, int, int, int], LayerParams, int]] = []
    for i in range(count):
        if offset + LAYER_HEADER.size > len(data):
            raise FormatError(f"truncated layer {i} header", offset)
        kind, a, b, c, d = LAYER_HEADER.unpack_from(data, offset)
        start = offset
        offset += LAYER_HEADER.size
        if kind == KIND_CONV:
            w_shape: tuple[int, ...] = (a, b, c, c, c)
        elif kind == KIND_DENSE:
            w_shape = (a, b)
        else:
            raise FormatError(f"unknown layer kind {kind}", start)
        n_w = int(np.prod(w_shape))
        end = offset + 8 * (n_w + a)
        if end > len(data):
            raise FormatError(f"truncated layer {i} values", offset)
        weight = np.frombuffer(data, "<f8", n_w, offset).reshape(w_shape).astype(np.float64)
        bias = np.frombuffer(data, "<f8", a, offset + 8 * n_w).astype(np.float64)
        stored.append((kind, (a, b, c, d), LayerParams(weight, bias), start))
        offset = end
    if offset != len(data):
        raise FormatError("trailing bytes after the last layer", offset)
    if not stored or stored[-1][0] != KIND_DENSE:
        raise ArchitectureMismatchError("architecture mismatch: no output layer", offset)

    num_classes = stored[-1][1][0]
    layers = tuple(architecture_layers(arch, num_classes, keep))
    slots = [i for i, layer in enumerate(layers) if isinstance(layer, (Conv3d, Dense))]
    if len(slots) != len(stored):
        raise ArchitectureMismatchError(
            f"architecture mismatch: {arch.value} has {len(slots)} parametric layers, "
            f"file holds {len(stored)}",
            7,
        )

    params: list[Optional[LayerParams]] = [None] * len(layers)
    channels = 1
    previous_units: Optional[int] = None
    for slot, (kind, (a, b, c, d), values, start) in zip(slots, stored):
        layer = layers[slot]
        if isinstance(layer, Conv3d):
            ok = kind == KIND_CONV and (a, b, c, d) == (
                layer.filters, channels, layer.kernel, layer.stride
            )
            channels = a
        else:
            ok = kind == KIND_DENSE and a == layer.units and d == 1 and c == 1
            ok = ok and (previous_units is None or b == previous_units)
            previous_units = a
        if not ok:
            raise ArchitectureMismatchError(
                f"architecture mismatch: layer {layer} does not match stored shape "
                f"({a}, {b}, {c}, {d})",
                start,
            )
        params[slot] = values
    return NetworkParams(arch, layers, params, seed=0)


def read_weights(
    path: PathLike, expected: Optional[Architecture] = None, keep: float = 0.7
) -> NetworkParams:
    return decode_weights(Path(path).read_bytes(), expected, keep)


# --- meshes and clouds ----------------------------------------------------------


def write_ply(mesh: TriangleMesh, path: PathLike) -> None:
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"element vertex {len(mesh.vertices)}\n")
    out.write("property float x\nproperty float y\nproperty float z\n")
    out.write(f"element face {len(mesh.triangles)}\n")
    out.write("property list uchar int vertex_indices\nend_header\n")
    for x, y, z in mesh.vertices.tolist():
        out.write(f"{x!r} {y!r} {z!r}\n")
    for a, b, c in mesh.triangles.tolist():
        out.write(f"3 {a} {b} {c}\n")
    atomic_write(path, out.getvalue())


def read_ply(path: PathLike) -> TriangleMesh:
    """ASCII PLY: `vertex` with x, y, z properties and `face` with vertex_indices lists.

    Polygons with more than three corners are fan-triangulated.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("bad magic, not a PLY file", 1, unit="line")

    elements: list[tuple[str, int, list[str]]] = []
    body = None
    for number, line in enumerate(lines[1:], start=2):
        words = line.split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "format":
            if words[1:2] != ["ascii"]:
                raise FormatError(f"unsupported PLY format '{' '.join(words[1:])}'", number, "line")
        elif words[0] == "element" and len(words) == 3:
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property" and elements:
            elements[-1][2].append(words[-1])
        elif words[0] == "end_header":
            body = number
            break
        else:
            raise FormatError(f"unexpected PLY header line '{line}'", number, "line")
    if body is None:
        raise FormatError("PLY header has no end_header", len(lines), "line")

    vertices: list[list[float]] = []
    triangles: list[list[int]] = []
    cursor = body
    for name, count, props in elements:
        for _ in range(count):
            if cursor >= len(lines):
                raise FormatError(f"PLY ends inside element '{name}'", cursor, "line")
            words = lines[cursor].split()
            cursor += 1
            try:
                if name == "vertex":
                    vertices.append([float(words[props.index(k)]) for k in ("x", "y", "z")])
                elif name == "face":
                    n = int(words[0])
                    corners = [int(w) for w in words[1 : n + 1]]
                    if n < 3 or len(corners) != n:
                        raise ValueError(f"face with {n} corners")
                    triangles += [[corners[0], corners[k], corners[k + 1]] for k in range(1, n - 1)]
            except (ValueError, IndexError) as e:
                raise FormatError(f"malformed {name} entry: {e}", cursor, "line")
    try:
        return TriangleMesh(np.array(vertices), np.array(triangles))
    except InvalidArgumentError as e:
        raise FormatError(str(e), body, "line")


def write_xyz(cloud: PointCloud, path: PathLike) -> None:
    atomic_write(path, "".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in cloud.points.tolist()))


def read_xyz(path: PathLike) -> PointCloud:
    points = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        words = line.split()
        if len(words) != 3:
            raise FormatError(f"expected 'x y z', got '{line}'", number, "line")
        try:
            points.append([float(w) for w in words])
        except ValueError:
            raise FormatError(f"not a number in '{line}'", number, "line")
    return PointCloud(np.array(points).reshape(-1, 3))


def load_object(spec: ObjectSpec, scene: SceneConfig) -> TriangleMesh:
    """Mesh for a `kind:seed` spec or a PLY path; it must sit inside the view sphere."""
    if spec.kind == "ply":
        assert spec.path is not None
        mesh = read_ply(spec.path)
    else:
        mesh = generate_demo_object(spec.kind, spec.seed, scene.object_scale)
    if len(mesh.triangles) == 0:
        raise InvalidArgumentError(f"object {spec.label} has no triangles")
    if float(np.linalg.norm(mesh.vertices, axis=1).max()) >= scene.sphere_radius:
        raise InvalidArgumentError(
            f"object {spec.label} reaches outside the view sphere of radius {scene.sphere_radius}"
        )
    return mesh


# --- CSV reports ----------------------------------------------------------------


def _g(value: float) -> str:
    return f"{value:.6g}"


def _csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def write_views_csv(views: ViewSet, path: PathLike) -> None:
    rows = [
        [v.id] + [repr(float(getattr(v, k))) for k in ("x", "y", "z", "alpha", "beta", "gamma")]
        for v in views
    ]
    atomic_write(path, _csv(["id", "x", "y", "z", "alpha", "beta", "gamma"], rows))


def read_views_csv(path: PathLike) -> list[dict[str, float]]:
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def episode_csv(log: EpisodeLog) -> str:
    rows = []
    for step in log.steps:
        last = step is log.steps[-1]
        rows.append(
            [
                step.iteration,
                step.view_id,
                _g(step.coverage),
                _g(step.overlap),
                log.termination.value if last else "",
            ]
        )
    return _csv(["iter", "view_id", "coverage", "overlap", "term_reason"], rows)


def write_episode_csv(log: EpisodeLog, path: PathLike) -> None:
    atomic_write(path, episode_csv(log))


def write_summary_csv(summary: EvalSummary, path: PathLike) -> None:
    rows = [[r.name, _g(r.mean_cov), _g(r.std_cov), _g(r.mean_iters)] for r in summary.rows]
    atomic_write(path, _csv(["object", "mean_cov", "std_cov", "mean_iters"], rows))


def write_comparison_csv(summaries: Mapping[str, EvalSummary], path: PathLike) -> None:
    """One row per (object, policy), sorted so paired policies sit together."""
    rows = []
    for policy, summary in summaries.items():
        for r in summary.rows:
            rows.append([r.name, policy, _g(r.mean_cov), _g(r.std_cov), _g(r.mean_iters)])
    rows.sort(key=lambda row: (row[0], row[1]))
    atomic_write(path, _csv(["object", "policy", "mean_cov", "std_cov", "mean_iters"], rows))


def write_history_csv(history: Sequence[HistoryRow], path: PathLike) -> None:
    rows = [[h.epoch, _g(h.train_acc), _g(h.test_acc), _g(h.loss)] for h in history]
    atomic_write(path, _csv(["epoch", "train_acc", "test_acc", "loss"], rows))


def read_csv_rows(path: PathLike) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_candidates_csv(
    candidates: Sequence[CandidateAudit], selected: Optional[int], path: PathLike
) -> None:
    rows = [
        [
            c.view_id,
            _g(c.overlap),
            "" if c.features is None else c.features,
            _g(c.delta),
            int(c.feasible),
            int(c.visited),
            int(c.view_id == selected),
        ]
        for c in candidates
    ]
    header = ["view_id", "overlap", "features", "delta", "feasible", "visited", "selected"]
    atomic_write(path, _csv(header, rows))


# --- manifests ------------------------------------------------------------------


def manifest_data(
    cfg: ToolkitConfig,
    command: str,
    seeds: Mapping[str, int],
    objects: Sequence[ObjectSpec] = (),
    extra: Optional[Mapping[str, Any]] = None,
) -> dict[str, Any]:
    """Flat dotted mapping: the resolved config plus provenance under toolkit.* and run.*"""
    data: dict[str, Any] = dict(flatten_config(cfg))
    data["toolkit.version"] = __version__
    data["toolkit.prng"] = "numpy.PCG64"
    data["run.command"] = command
    for name, value in seeds.items():
        data[f"run.{name}"] = value
    if objects:
        data["run.objects"] = ",".join(spec.label for spec in objects)
    for key, value in (extra or {}).items():
        data[f"run.{key}"] = value
    return data


def write_manifest(data: Mapping[str, Any], path: PathLike) -> None:
    atomic_write(path, yaml.safe_dump(dict(data), sort_keys=False))


def read_manifest(path: PathLike) -> dict[str, Any]:
    loaded = yaml.safe_load(Path(path).read_text())
    if not isinstance(loaded, dict):
        raise FormatError("manifest must be a flat mapping", 1, "line")
    return loaded
