"""Generates data/directions.json from the bundled worlds.

Every description is checked against world geometry so the stated relation
holds for the goal region and fails for other regions of the same type.
"""
import heapq
import json
import math
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "data")


def load(name):
    with open(os.path.join(DATA, "worlds", name + ".json")) as f:
        return json.load(f)


def center(r):
    x0, y0, x1, y1 = r["rect"]
    return ((x0 + x1) / 2, (y0 + y1) / 2)


def region_path(w, s, g):
    """Shortest region sequence from s to g through doorway midpoints."""
    pts = {("c", r["id"]): center(r) for r in w["regions"]}
    adj = {k: [] for k in pts}
    for i, d in enumerate(w["doorways"]):
        k = ("d", i)
        pts[k] = tuple(d["midpoint"])
        adj[k] = []
        for rid in (d["a"], d["b"]):
            adj[k].append(("c", rid))
            adj[("c", rid)].append(k)
    for rid in [r["id"] for r in w["regions"]]:
        doors = [("d", i) for i, d in enumerate(w["doorways"]) if rid in (d["a"], d["b"])]
        for a in doors:
            for b in doors:
                if a != b:
                    adj[a].append(b)
    dist = {("c", s): 0.0}
    prev = {}
    pq = [(0.0, ("c", s))]
    while pq:
        d, k = heapq.heappop(pq)
        if d > dist.get(k, 1e18):
            continue
        for n in adj[k]:
            nd = d + math.dist(pts[k], pts[n])
            if nd < dist.get(n, 1e18):
                dist[n] = nd
                prev[n] = k
                heapq.heappush(pq, (nd, n))
    seq = [("c", g)]
    while seq[-1] != ("c", s):
        seq.append(prev[seq[-1]])
    seq.reverse()
    regions = [s]
    for k in seq[1:]:
        if k[0] == "d":
            d = w["doorways"][k[1]]
            nxt = d["b"] if d["a"] == regions[-1] else d["a"]
            regions.append(nxt)
    return regions, [pts[k] for k in seq]


def door_between(w, a, b):
    for d in w["doorways"]:
        if {d["a"], d["b"]} == {a, b}:
            return tuple(d["midpoint"])
    return None


def holds(w, rel, s, g, l):
    rs = w["regions"]
    cs, cg, cl = center(rs[s]), center(rs[g]), center(rs[l])
    if g == l or s == g:
        return False
    if rel == "near":
        return math.dist(cg, cl) <= 8.0
    if rel == "past":
        if s == l:
            return False
        d = (cl[0] - cs[0], cl[1] - cs[1])
        n = math.hypot(*d)
        u = (d[0] / n, d[1] / n)
        v = (cg[0] - cl[0], cg[1] - cl[1])
        proj = v[0] * u[0] + v[1] * u[1]
        lat = abs(-v[0] * u[1] + v[1] * u[0])
        return proj > 2.0 and lat < max(proj, 4.0)
    if rel == "before":
        if s == l:
            return False
        d = (cl[0] - cs[0], cl[1] - cs[1])
        n = math.hypot(*d)
        u = (d[0] / n, d[1] / n)
        v = (cg[0] - cs[0], cg[1] - cs[1])
        proj = v[0] * u[0] + v[1] * u[1]
        lat = abs(-v[0] * u[1] + v[1] * u[0])
        return 0.15 * n < proj < 0.85 * n and lat < 6.0
    if rel == "through":
        path, _ = region_path(w, s, g)
        return l in path[1:-1]
    if rel == "down":
        if rs[l]["type"] != "hallway" or door_between(w, g, l) is None:
            return False
        path, pts = region_path(w, s, g)
        if l not in path:
            return False
        x0, y0, x1, y1 = rs[l]["rect"]
        axis = 0 if (x1 - x0) >= (y1 - y0) else 1
        length = max(x1 - x0, y1 - y0)
        if s == l:
            entry = cs
        else:
            entry = door_between(w, path[path.index(l) - 1], l)
        gd = door_between(w, g, l)
        return abs(gd[axis] - entry[axis]) > 0.5 * length
    raise ValueError(rel)


NOUN = {"hallway": ["hallway", "hall", "corridor"]}

TEMPLATES = {
    None: ["{v} to the {g}", "find the {g}", "navigate to the {g}"],
    "down": ["{v} to the {g} that is down the {l}", "{v} to the {g} down the {l}",
             "{v} down the {l} to the {g}", "{v} down the {l} and {v} to the {g}"],
    "past": ["{v} to the {g} that is past the {l}", "{v} past the {l} to the {g}",
             "{v} to the {g} past the {l}"],
    "near": ["{v} to the {g} near the {l}", "{v} to the {g} that is near the {l}"],
    "through": ["{v} through the {l} to the {g}", "{v} through the {l} and {v} to the {g}"],
    "before": ["{v} to the {g} before the {l}"],
}
VERBS = ["go", "walk", "head", "proceed", "move"]


def candidates(w):
    rs = w["regions"]
    out = []
    for s in range(len(rs)):
        for g in range(len(rs)):
            if s == g or rs[g]["type"] == "hallway":
                continue
            same = [r["id"] for r in rs if r["type"] == rs[g]["type"] and r["id"] != g]
            if not same and rs[g]["type"] != rs[s]["type"]:
                out.append((s, g, None, None))
            for rel in ("down", "past", "near", "through", "before"):
                for l in range(len(rs)):
                    if rs[l]["type"] == rs[g]["type"]:
                        continue
                    if rs[l]["type"] == "hallway" and rel not in ("down", "through"):
                        continue
                    if not holds(w, rel, s, g, l):
                        continue
                    # the landmark type must name one region, or every one of them must work
                    if any(holds(w, rel, s, o, l2) for o in same
                           for l2 in range(len(rs)) if rs[l2]["type"] == rs[l]["type"]):
                        continue
                    if rs[s]["type"] == rs[g]["type"]:
                        continue
                    out.append((s, g, rel, l))
    return out


def render(rng, w, s, g, rel, l):
    rs = w["regions"]
    noun = lambda t: rng.choice(NOUN.get(t, [t]))
    v = rng.choice(VERBS)
    t = rng.choice(TEMPLATES[rel])
    return t.format(v=v, g=noun(rs[g]["type"]), l=noun(rs[l]["type"]) if l is not None else "")


def main():
    rng = random.Random(11)
    fixed = [
        ("stata-lobby", 0, 2, "go to the kitchen that is down the hallway"),
        ("sim-3room", 0, 2, "go to the kitchen that is down the hallway"),
    ]
    quota = {"stata-lobby": 40, "sim-3room": 15}
    out = [{"text": t, "world": wn, "start_region": s, "goal_region": g} for wn, s, g, t in fixed]
    for wn, n in quota.items():
        w = load(wn)
        cands = candidates(w)
        rng.shuffle(cands)
        # prefer relational descriptions; keep a handful of figure-only ones
        rel = [c for c in cands if c[2] is not None]
        plain = [c for c in cands if c[2] is None]
        take = rel[: n - 1 - max(2, n // 6)] + plain[: max(2, n // 6)]
        seen = {d["text"] + d["world"] + str(d["start_region"]) for d in out}
        for s, g, r, l in take:
            for _ in range(10):
                text = render(rng, w, s, g, r, l)
                if text + wn + str(s) not in seen:
                    break
            seen.add(text + wn + str(s))
            out.append({"text": text, "world": wn, "start_region": s, "goal_region": g})
    assert len(out) == 55, len(out)
    with open(os.path.join(DATA, "directions.json"), "w") as f:
        json.dump({"directions": out}, f, indent=1)


if __name__ == "__main__":
    main()
