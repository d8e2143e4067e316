"""Writes the bundled world files under data/worlds/."""
import json
import os

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "data", "worlds")


def world(name, regions, doors, start, goal):
    return {
        "name": name,
        "regions": [{"id": i, "type": t, "rect": r} for i, (t, r) in enumerate(regions)],
        "doorways": [{"a": a, "b": b, "midpoint": m} for a, b, m in doors],
        "start": {"region": start, "heading": 0.0},
        "goal_region": goal,
    }


stata = world(
    "stata-lobby",
    [
        ("lobby", [0, 0, 10, 10]),
        ("hallway", [10, 4, 34, 7]),
        ("kitchen", [34, 1, 39, 10]),
        ("lab", [3, 10, 8, 16]),
        ("office", [3, -5, 8, 0]),
        ("office", [14, 7, 18, 11]),
        ("lab", [20, 0, 24, 4]),
        ("conference room", [26, 7, 31, 12]),
        ("elevator lobby", [-5, 3, 0, 8]),
        ("hallway", [18, 7, 21, 25]),
        ("bathroom", [21, 12, 25, 16]),
        ("break room", [14, 18, 18, 22]),
        ("copy room", [21, 20, 25, 24]),
        ("stairwell", [17, 25, 22, 29]),
    ],
    [
        (0, 1, [10, 5.5]),
        (1, 2, [34, 5.5]),
        (0, 3, [5.5, 10]),
        (0, 4, [5.5, 0]),
        (1, 5, [16, 7]),
        (1, 6, [22, 4]),
        (1, 7, [28.5, 7]),
        (0, 8, [0, 5.5]),
        (1, 9, [19.5, 7]),
        (9, 10, [21, 14]),
        (9, 11, [18, 20]),
        (9, 12, [21, 22]),
        (9, 13, [19.5, 25]),
    ],
    0,
    2,
)

three = world(
    "sim-3room",
    [
        ("office", [0, -5, 4, 0]),
        ("hallway", [0, 0, 20, 3]),
        ("kitchen", [20, -2, 25, 5]),
        ("lab", [0, 3, 5, 8]),
        ("copy room", [6, -4, 10, 0]),
        ("bathroom", [10, 3, 14, 7]),
    ],
    [
        (0, 1, [2, 0]),
        (1, 2, [20, 1.5]),
        (1, 3, [2.5, 3]),
        (1, 4, [8, 0]),
        (1, 5, [12, 3]),
    ],
    0,
    2,
)

os.makedirs(OUT, exist_ok=True)
for w in (stata, three):
    with open(os.path.join(OUT, w["name"] + ".json"), "w") as f:
        json.dump(w, f, indent=1)
