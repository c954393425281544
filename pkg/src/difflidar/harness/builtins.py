"""Built-in scenes for the localization, tracking and calibration experiments.

Coordinates are meters in the world frame, with the sensor at the origin
looking along +x unless stated.  Walls are boxes seen from the inside and are
centered on the sensor's scan height.
"""

from __future__ import annotations

import re

from .scenefile import MaterialSpec, ObjectSpec, SceneDescription, SensorSpec

ROOM_SIZE = (0.92, 1.85, 0.28)  # depth x width x wall height
WALL_HEIGHT = 0.28
SCAN_HEIGHT = 0.14


def _room(name="room", size=ROOM_SIZE, center=(0.0, 0.0), material="wall"):
    return ObjectSpec(name=name, primitive="box", size=tuple(size),
                      pose=(center[0], center[1], 0.0), z=WALL_HEIGHT / 2, material=material)


def cuboid_room() -> SceneDescription:
    """Sensor centered in a 1.85 m x 0.92 m x 0.28 m room."""
    return SceneDescription(
        name="cuboid_room",
        sensor=SensorSpec(free=("x", "y", "yaw")),
        materials={"wall": MaterialSpec("wall", "lambertian", k_r=0.8)},
        objects=[_room()],
    )


def cuboid_with_plastic() -> SceneDescription:
    """The cuboid room with a 3 mm transparent plastic sheet across the right half."""
    desc = cuboid_room()
    desc.name = "cuboid_with_plastic"
    desc.sensor = SensorSpec()
    desc.materials["plastic"] = MaterialSpec("plastic", "plastic", eta=1.5, diffuse=0.005)
    desc.objects.append(ObjectSpec(
        name="sheet", primitive="box", size=(0.003, 0.5, WALL_HEIGHT),
        pose=(0.1, -0.55, 30.0), z=WALL_HEIGHT / 2, material="plastic",
    ))
    return desc


def mirror_room() -> SceneDescription:
    """Two mirrors, one glass block and Lambertian walls and pillar."""
    return SceneDescription(
        name="mirror_room",
        sensor=SensorSpec(free=("x", "y", "yaw")),
        materials={
            "wall": MaterialSpec("wall", "lambertian", k_r=0.8),
            "pillar": MaterialSpec("pillar", "lambertian", k_r=0.4),
            "mirror": MaterialSpec("mirror", "mirror"),
            "glass": MaterialSpec("glass", "glass", eta=1.5),
        },
        objects=[
            _room(size=(1.4, 1.85, WALL_HEIGHT), center=(0.1, 0.0)),
            ObjectSpec(name="mirror_left", primitive="quad", size=(0.4, WALL_HEIGHT),
                       pose=(0.45, 0.55, -35.0), z=SCAN_HEIGHT, material="mirror"),
            ObjectSpec(name="mirror_right", primitive="quad", size=(0.35, WALL_HEIGHT),
                       pose=(-0.2, -0.6, 60.0), z=SCAN_HEIGHT, material="mirror"),
            ObjectSpec(name="glass_block", primitive="box", size=(0.08, 0.25, 0.2),
                       pose=(0.5, -0.25, 15.0), z=SCAN_HEIGHT, material="glass"),
            ObjectSpec(name="pillar", primitive="box", size=(0.12, 0.12, WALL_HEIGHT),
                       pose=(-0.35, 0.45, 20.0), z=WALL_HEIGHT / 2, material="pillar"),
        ],
    )


def mirror_tracking() -> SceneDescription:
    """A free 20 cm mirror ahead-left of the sensor, tilted 25 degrees off facing it."""
    desc = cuboid_room()
    desc.name = "mirror_tracking"
    desc.sensor = SensorSpec()
    desc.materials["mirror"] = MaterialSpec("mirror", "mirror")
    desc.objects.append(ObjectSpec(
        name="mirror", primitive="quad", size=(0.2, 0.2), pose=(0.3, 0.25, -115.0),
        z=SCAN_HEIGHT, material="mirror", free=("x", "y", "yaw"),
    ))
    return desc


def checkerboard(distance: float = 0.5) -> SceneDescription:
    """Eight 7.5 cm stripes of two free reflectances at ``distance`` ahead of the sensor.

    The surrounding room uses a fixed reflectance, which pins the overall
    scale of the diode polynomial.
    """
    return SceneDescription(
        name=f"checkerboard({distance:g})",
        sensor=SensorSpec(free=("a", "b", "c")),
        materials={
            "background": MaterialSpec("background", "lambertian", k_r=0.5),
            "white": MaterialSpec("white", "lambertian", k_r=0.9, free=("k_r",)),
            "black": MaterialSpec("black", "lambertian", k_r=0.1, free=("k_r",)),
        },
        objects=[
            _room(size=(3.4, 3.0, WALL_HEIGHT), center=(0.5, 0.0), material="background"),
            ObjectSpec(name="board", primitive="checkerboard", rows=3, columns=8, square=0.075,
                       materials=("white", "black"), pose=(float(distance), 0.0, 0.0),
                       z=SCAN_HEIGHT),
        ],
    )


BUILTINS = {
    "cuboid_room": cuboid_room,
    "cuboid_with_plastic": cuboid_with_plastic,
    "mirror_room": mirror_room,
    "mirror_tracking": mirror_tracking,
}

_CHECKER = re.compile(r"^checkerboard(\((?P<d>[-+0-9.eE]+)\))?$")


def build_builtin_scene(name: str) -> SceneDescription:
    """Scene description for a built-in name, e.g. ``mirror_room`` or ``checkerboard(0.9)``."""
    if name in BUILTINS:
        return BUILTINS[name]()
    m = _CHECKER.match(name.strip())
    if m:
        return checkerboard(float(m["d"]) if m["d"] else 0.5)
    raise ValueError(f"unknown built-in scene {name!r}")
