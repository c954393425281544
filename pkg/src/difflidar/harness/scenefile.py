"""Scene documents: YAML schema, validation, tessellation and parameter binding.

A scene document has three blocks::

    sensor:
      pose: [x_m, y_m, yaw_deg]
      height: 0.14            # any SensorModel field may be overridden
      diode: [a, b, c]
      free: [x, y, yaw]       # optional; also a, b, c
    materials:
      wall: {type: lambertian, k_r: 0.8, free: [k_r]}
      glass: {type: glass, eta: 1.5}
    objects:
      - name: room
        primitive: box        # box | quad | checkerboard | mesh
        size: [0.92, 1.85, 0.28]
        pose: [0.0, 0.0, 0.0]
        z: 0.14               # height of the object centre
        material: wall
        free: [x, y, yaw]     # optional
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np
import yaml

from .. import scalar as sc
from ..cwmeasure import SensorModel
from ..estimate.params import Parameter, ParameterVector
from ..geometry import Scene, build_kdtree
from ..materials import KINDS, Material

PRIMITIVES = ("box", "quad", "checkerboard", "mesh")
MATERIAL_TYPES = KINDS + ("plastic",)
_SENSOR_FIELDS = {f.name for f in fields(SensorModel)}
DIODE_SCALE = 0.01  # radians; one optimizer unit of a diode coefficient


class SceneParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


@dataclass
class MaterialSpec:
    name: str
    type: str
    k_r: float | None = None
    sigma: float | None = None
    eta: float | None = None
    diffuse: float | None = None
    free: tuple = ()

    def build(self, k_r=None) -> Material:
        k = self.k_r if k_r is None else k_r
        if self.type == "lambertian":
            return Material.lambertian(0.5 if k is None else k, self.name)
        if self.type == "oren_nayar":
            return Material.oren_nayar(0.5 if k is None else k,
                                       0.35 if self.sigma is None else self.sigma, self.name)
        if self.type == "mirror":
            return Material.mirror(self.eta, self.name)
        if self.type == "glass":
            return Material.glass(1.5 if self.eta is None else self.eta,
                                  0.0 if self.diffuse is None else self.diffuse, self.name)
        if self.type == "plastic":
            return Material.plastic(1.5 if self.eta is None else self.eta,
                                    0.05 if self.diffuse is None else self.diffuse, self.name)
        raise ValueError(f"unknown material variant {self.type!r}")


@dataclass
class ObjectSpec:
    name: str
    primitive: str
    pose: tuple = (0.0, 0.0, 0.0)  # x m, y m, yaw deg
    z: float = 0.0
    material: str | None = None
    materials: tuple = ()  # checkerboard colours
    size: tuple = ()
    rows: int | None = None
    columns: int | None = None
    square: float | None = None
    vertices: tuple = ()
    faces: tuple = ()
    free: tuple = ()


@dataclass
class SensorSpec:
    pose: tuple = (0.0, 0.0, 0.0)  # x m, y m, yaw deg
    overrides: dict = field(default_factory=dict)
    free: tuple = ()

    def model(self) -> SensorModel:
        return SensorModel(**self.overrides)


@dataclass
class SceneDescription:
    name: str = "scene"
    sensor: SensorSpec = field(default_factory=SensorSpec)
    materials: dict = field(default_factory=dict)
    objects: list = field(default_factory=list)

    def sensor_pose(self) -> sc.PoseSE2:
        x, y, yaw = self.sensor.pose
        return sc.PoseSE2.from_degrees(x, y, yaw)

    def object(self, name: str) -> ObjectSpec:
        for o in self.objects:
            if o.name == name:
                return o
        raise KeyError(f"no object named {name!r}")

    def object_index(self, name: str) -> int:
        for k, o in enumerate(self.objects):
            if o.name == name:
                return k
        raise KeyError(f"no object named {name!r}")

    def parameter_template(self) -> ParameterVector:
        """Free-flagged quantities in a fixed order: sensor pose, diode, materials, objects."""
        params = []
        x, y, yaw = self.sensor.pose
        pose_vals = {"x": x, "y": y, "yaw": math.radians(yaw)}
        for key in ("x", "y", "yaw"):
            if key in self.sensor.free:
                params.append(Parameter(f"pose.{key}", pose_vals[key]))
        diode = self.sensor.model().diode
        for k, key in enumerate("abc"):
            if key in self.sensor.free:
                params.append(Parameter(f"diode.{key}", diode[k], scale=DIODE_SCALE))
        for m in self.materials.values():
            if "k_r" in m.free:
                params.append(Parameter(f"material.k_r[{m.name}]", m.k_r, "logistic"))
        for o in self.objects:
            ox, oy, oyaw = o.pose
            vals = {"x": ox, "y": oy, "yaw": math.radians(oyaw)}
            for key in ("x", "y", "yaw"):
                if key in o.free:
                    params.append(Parameter(f"object.{key}[{o.name}]", vals[key]))
        return ParameterVector(params)


class LoadedScene(NamedTuple):
    description: SceneDescription
    scene: Scene
    sensor: SensorModel
    parameters: ParameterVector


# -- tessellation ---------------------------------------------------------------

_BOX_FACES = np.array([
    (0, 2, 1), (0, 3, 2), (4, 5, 6), (4, 6, 7), (0, 1, 5), (0, 5, 4),
    (1, 2, 6), (1, 6, 5), (2, 3, 7), (2, 7, 6), (3, 0, 4), (3, 4, 7),
])


def _box(size):
    sx, sy, sz = (0.5 * float(v) for v in size)
    corners = np.array([
        (-sx, -sy, -sz), (sx, -sy, -sz), (sx, sy, -sz), (-sx, sy, -sz),
        (-sx, -sy, sz), (sx, -sy, sz), (sx, sy, sz), (-sx, sy, sz),
    ])
    return corners[_BOX_FACES]


def _quad(width, height, cy=0.0, cz=0.0):
    w, h = 0.5 * width, 0.5 * height
    a = np.array([0.0, cy - w, cz - h])
    b = np.array([0.0, cy + w, cz - h])
    c = np.array([0.0, cy + w, cz + h])
    d = np.array([0.0, cy - w, cz + h])
    return np.array([[a, b, c], [a, c, d]])


def local_triangles(obj: ObjectSpec, material_index: dict):
    """Object-frame triangles and their material ids."""
    if obj.primitive == "box":
        tris = _box(obj.size)
        return tris, np.full(len(tris), material_index[obj.material])
    if obj.primitive == "quad":
        tris = _quad(obj.size[0], obj.size[1])
        return tris, np.full(len(tris), material_index[obj.material])
    if obj.primitive == "checkerboard":
        rows, cols, sq = obj.rows, obj.columns or obj.rows, obj.square
        tris, mats = [], []
        for r in range(rows):
            for c in range(cols):
                cy = (c - (cols - 1) / 2.0) * sq
                cz = (r - (rows - 1) / 2.0) * sq
                tris.append(_quad(sq, sq, cy, cz))
                mats += [material_index[obj.materials[(r + c) % 2]]] * 2
        return np.concatenate(tris), np.array(mats)
    if obj.primitive == "mesh":
        v = np.asarray(obj.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(obj.faces, dtype=np.intp).reshape(-1, 3)
        return v[f], np.full(len(f), material_index[obj.material])
    raise ValueError(f"unknown primitive {obj.primitive!r}")


def place(local, x, y, yaw, z):
    """Rotate object-frame points about z by ``yaw`` (radians) and translate."""
    c, s = np.cos(yaw), np.sin(yaw)
    px, py, pz = local[..., 0], local[..., 1], local[..., 2]
    return sc.stack([c * px - s * py + x, s * px + c * py + y, pz + z + 0.0 * c], axis=-1)


_TREE_CACHE: OrderedDict = OrderedDict()
_TREE_CACHE_SIZE = 32


def _cached_tree(tris: np.ndarray):
    key = hashlib.sha1(np.ascontiguousarray(tris).tobytes()).hexdigest()
    tree = _TREE_CACHE.get(key)
    if tree is None:
        tree = build_kdtree(tris)
        _TREE_CACHE[key] = tree
        if len(_TREE_CACHE) > _TREE_CACHE_SIZE:
            _TREE_CACHE.popitem(last=False)
    else:
        _TREE_CACHE.move_to_end(key)
    return tree


def build_scene(desc: SceneDescription, values: dict | None = None) -> Scene:
    """Tessellate and place every object; ``values`` binds free parameters (floats or ``Dual``)."""
    values = values or {}
    names = list(desc.materials)
    index = {n: k for k, n in enumerate(names)}
    materials = [
        desc.materials[n].build(values.get(f"material.k_r[{n}]")) for n in names
    ]
    tris, mats, objs = [], [], []
    for k, o in enumerate(desc.objects):
        local, mids = local_triangles(o, index)
        x, y, yaw = o.pose
        x = values.get(f"object.x[{o.name}]", x)
        y = values.get(f"object.y[{o.name}]", y)
        yaw = values.get(f"object.yaw[{o.name}]", math.radians(yaw))
        tris.append(place(local, x, y, yaw, o.z))
        mats.append(mids)
        objs.append(np.full(len(mids), k))
    if not tris:
        return Scene(np.empty((0, 3, 3)), [], [], materials, [])
    triangles = sc.concatenate(tris)
    tree = _cached_tree(sc.value(triangles))
    return Scene(triangles, np.concatenate(mats), np.concatenate(objs), materials,
                 [o.name for o in desc.objects], tree=tree)


def sensor_pose_from(desc: SceneDescription, values: dict | None = None, pose=None) -> sc.PoseSE2:
    values = values or {}
    base = desc.sensor_pose() if pose is None else pose
    return sc.PoseSE2(
        values.get("pose.x", base.x), values.get("pose.y", base.y), values.get("pose.yaw", base.yaw)
    )


def diode_from(desc: SceneDescription, values: dict | None = None, sensor: SensorModel | None = None):
    values = values or {}
    base = (sensor or desc.sensor.model()).diode
    return tuple(values.get(f"diode.{k}", base[i]) for i, k in enumerate("abc"))


# -- YAML document ----------------------------------------------------------------


class _Marked(dict):
    mark = None

    def __init__(self):
        super().__init__()
        self.marks = {}


class _MarkedList(list):
    mark = None

    def __init__(self):
        super().__init__()
        self.marks = []


class _Loader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node):
    loader.flatten_mapping(node)
    out = _Marked()
    out.mark = node.start_mark
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        out[key] = loader.construct_object(value_node, deep=True)
        out.marks[key] = value_node.start_mark
    return out


def _construct_sequence(loader, node):
    out = _MarkedList()
    out.mark = node.start_mark
    for child in node.value:
        out.append(loader.construct_object(child, deep=True))
        out.marks.append(child.start_mark)
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)
_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_SEQUENCE_TAG, _construct_sequence)


def _fail(msg, mark):
    if mark is None:
        raise SceneParseError(msg)
    raise SceneParseError(msg, mark.line + 1, mark.column + 1)


def _mark_of(container, key):
    marks = getattr(container, "marks", None)
    if isinstance(marks, dict):
        return marks.get(key, container.mark)
    if isinstance(marks, list) and isinstance(key, int) and key < len(marks):
        return marks[key]
    return getattr(container, "mark", None)


def _number(container, key, default=None, required=False):
    present = key < len(container) if isinstance(container, list) else key in container
    if not present:
        if required:
            _fail(f"missing field {key!r}", getattr(container, "mark", None))
        return default
    v = container[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"field {key!r} must be a number", _mark_of(container, key))
    if not math.isfinite(v):
        _fail(f"field {key!r} is not finite", _mark_of(container, key))
    return float(v)


def _numbers(container, key, length=None, default=(), required=False):
    present = key < len(container) if isinstance(container, list) else key in container
    if not present:
        if required:
            _fail(f"missing field {key!r}", getattr(container, "mark", None))
        return tuple(default)
    seq = container[key]
    if not isinstance(seq, list):
        _fail(f"field {key!r} must be a list", _mark_of(container, key))
    out = []
    for i, _ in enumerate(seq):
        out.append(_number(seq, i))
    if length is not None and len(out) != length:
        _fail(f"field {key!r} needs {length} numbers", _mark_of(container, key))
    return tuple(out)


def _names(container, key):
    seq = container.get(key, [])
    if isinstance(seq, str):
        seq = [seq]
    if not isinstance(seq, list) or not all(isinstance(s, str) for s in seq):
        _fail(f"field {key!r} must be a list of names", _mark_of(container, key))
    return tuple(seq)


def parse_scene_document(text: str) -> SceneDescription:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise SceneParseError(f"malformed scene document: {exc.problem}",
                              mark.line + 1 if mark else None, mark.column + 1 if mark else None) from exc
    if not isinstance(doc, dict):
        raise SceneParseError("scene document must be a mapping")

    sensor_doc = doc.get("sensor", _Marked())
    if not isinstance(sensor_doc, dict):
        _fail("sensor block must be a mapping", _mark_of(doc, "sensor"))
    pose = _numbers(sensor_doc, "pose", 3, (0.0, 0.0, 0.0))
    overrides = {}
    for key, val in sensor_doc.items():
        if key in ("pose", "free"):
            continue
        if key not in _SENSOR_FIELDS:
            _fail(f"unknown sensor field {key!r}", _mark_of(sensor_doc, key))
        if key == "diode":
            overrides[key] = _numbers(sensor_doc, key, 3)
        elif key == "sensor_id":
            overrides[key] = str(val)
        elif key in ("periods_observed", "sample_count", "ray_count", "beam_rays"):
            overrides[key] = int(_number(sensor_doc, key))
        else:
            overrides[key] = _number(sensor_doc, key)
    sensor_free = _names(sensor_doc, "free")
    for f in sensor_free:
        if f not in ("x", "y", "yaw", "a", "b", "c"):
            _fail(f"sensor cannot free {f!r}", _mark_of(sensor_doc, "free"))
    try:
        SensorModel(**overrides)
    except (TypeError, ValueError) as exc:
        _fail(f"invalid sensor block: {exc}", getattr(sensor_doc, "mark", None))
    sensor = SensorSpec(pose, overrides, sensor_free)

    mats_doc = doc.get("materials", _Marked())
    if not isinstance(mats_doc, dict):
        _fail("materials block must be a mapping", _mark_of(doc, "materials"))
    materials = {}
    for name, m in mats_doc.items():
        mark = _mark_of(mats_doc, name)
        if not isinstance(m, dict):
            _fail(f"material {name!r} must be a mapping", mark)
        kind = m.get("type")
        if kind not in MATERIAL_TYPES:
            _fail(f"unknown material variant {kind!r}", _mark_of(m, "type") if "type" in m else mark)
        free = _names(m, "free")
        if any(f != "k_r" for f in free) or (free and kind not in ("lambertian", "oren_nayar")):
            _fail(f"material {name!r}: only k_r of diffuse materials can be free", _mark_of(m, "free"))
        spec = MaterialSpec(
            str(name), kind, _number(m, "k_r"), _number(m, "sigma"), _number(m, "eta"),
            _number(m, "diffuse"), free,
        )
        if kind in ("lambertian", "oren_nayar") and spec.k_r is None:
            spec.k_r = 0.5
        try:
            spec.build()
        except ValueError as exc:
            _fail(f"material {name!r}: {exc}", mark)
        materials[str(name)] = spec

    objs_doc = doc.get("objects", _MarkedList())
    if not isinstance(objs_doc, list):
        _fail("objects block must be a list", _mark_of(doc, "objects"))
    if len(objs_doc) == 0:
        _fail("empty scene", getattr(objs_doc, "mark", None) or getattr(doc, "mark", None))
    objects = []
    seen = set()
    for i, o in enumerate(objs_doc):
        mark = _mark_of(objs_doc, i)
        if not isinstance(o, dict):
            _fail("object entries must be mappings", mark)
        name = str(o.get("name", f"object{i}"))
        if name in seen:
            _fail(f"duplicate object name {name!r}", mark)
        seen.add(name)
        prim = o.get("primitive")
        if prim not in PRIMITIVES:
            _fail(f"unknown primitive {prim!r}", _mark_of(o, "primitive") if "primitive" in o else mark)
        obj = ObjectSpec(
            name=name, primitive=prim,
            pose=_numbers(o, "pose", 3, (0.0, 0.0, 0.0)),
            z=_number(o, "z", 0.0),
            free=_names(o, "free"),
        )
        for f in obj.free:
            if f not in ("x", "y", "yaw"):
                _fail(f"object {name!r} cannot free {f!r}", _mark_of(o, "free"))
        if prim == "checkerboard":
            obj.materials = _names(o, "materials")
            if len(obj.materials) != 2:
                _fail("checkerboard needs exactly two materials", _mark_of(o, "materials"))
            obj.rows = int(_number(o, "rows", required=True))
            obj.columns = int(_number(o, "columns", obj.rows))
            obj.square = _number(o, "square", required=True)
            refs = obj.materials
        else:
            if "material" not in o:
                _fail(f"object {name!r} needs a material", mark)
            obj.material = str(o["material"])
            refs = (obj.material,)
        for ref in refs:
            if ref not in materials:
                key = "materials" if prim == "checkerboard" else "material"
                _fail(f"dangling material reference {ref!r}", _mark_of(o, key))
        if prim == "box":
            obj.size = _numbers(o, "size", 3, required=True)
        elif prim == "quad":
            obj.size = _numbers(o, "size", 2, required=True)
        elif prim == "mesh":
            verts = o.get("vertices")
            faces = o.get("faces")
            if not isinstance(verts, list) or not isinstance(faces, list):
                _fail(f"mesh {name!r} needs vertices and faces lists", mark)
            obj.vertices = tuple(_numbers(verts, i, 3) for i in range(len(verts)))
            obj.faces = tuple(tuple(int(v) for v in _numbers(faces, i, 3)) for i in range(len(faces)))
            if any(not 0 <= v < len(obj.vertices) for f in obj.faces for v in f):
                _fail(f"mesh {name!r}: face index out of range", _mark_of(o, "faces"))
        objects.append(obj)
    return SceneDescription(str(doc.get("name", "scene")), sensor, materials, objects)


def scene_to_dict(desc: SceneDescription) -> dict:
    sensor = {"pose": list(desc.sensor.pose)}
    for k, v in desc.sensor.overrides.items():
        sensor[k] = list(v) if isinstance(v, tuple) else v
    if desc.sensor.free:
        sensor["free"] = list(desc.sensor.free)
    materials = {}
    for name, m in desc.materials.items():
        entry = {"type": m.type}
        for key in ("k_r", "sigma", "eta", "diffuse"):
            if getattr(m, key) is not None:
                entry[key] = getattr(m, key)
        if m.free:
            entry["free"] = list(m.free)
        materials[name] = entry
    objects = []
    for o in desc.objects:
        entry = {"name": o.name, "primitive": o.primitive, "pose": list(o.pose), "z": o.z}
        if o.primitive == "checkerboard":
            entry.update(materials=list(o.materials), rows=o.rows, columns=o.columns, square=o.square)
        else:
            entry["material"] = o.material
        if o.primitive in ("box", "quad"):
            entry["size"] = list(o.size)
        if o.primitive == "mesh":
            entry["vertices"] = [list(v) for v in o.vertices]
            entry["faces"] = [list(f) for f in o.faces]
        if o.free:
            entry["free"] = list(o.free)
        objects.append(entry)
    return {"name": desc.name, "sensor": sensor, "materials": materials, "objects": objects}


def serialize_scene(desc: SceneDescription) -> str:
    return yaml.safe_dump(scene_to_dict(desc), sort_keys=False, default_flow_style=None)


def load_description(desc: SceneDescription) -> LoadedScene:
    try:
        scene = build_scene(desc)
    except ValueError as exc:
        raise SceneParseError(str(exc)) from exc
    return LoadedScene(desc, scene, desc.sensor.model(), desc.parameter_template())


def parse_scene(text: str) -> LoadedScene:
    """Parse a scene document and build its geometry, sensor model and parameter template."""
    return load_description(parse_scene_document(text))
