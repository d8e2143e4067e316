"""Builds data/grounding_corpus.json: parsed directions with gold groundings per phrase.

Sentences come from templates over the symbol inventory; trees come from
`wayfinder parse`; gold groundings are assigned bottom-up by hand-written rules.
"""
import json
import os
import random
import subprocess
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, "..", "data")
BIN = sys.argv[1] if len(sys.argv) > 1 else os.path.join(HERE, "..", "build", "tools", "wayfinder")

SYM = json.load(open(os.path.join(DATA, "symbols.json")))
REL_WORD = {w: r["name"] for r in SYM["relations"] for w in r["words"]}
COMPOUND = {t["name"]: t["name"] for t in SYM["object_types"] if " " in t["name"]}
SINGLE = {}
for t in SYM["object_types"]:
    if t["name"] not in COMPOUND.values():
        for w in t["words"]:
            SINGLE[w] = t["name"]


def read_tree(s):
    toks = s.replace("(", " ( ").replace(")", " ) ").split()
    pos = 0
    idx = 0

    def node():
        nonlocal pos, idx
        assert toks[pos] == "("
        pos += 1
        label = toks[pos]
        pos += 1
        if toks[pos] != "(":
            word = toks[pos]
            pos += 2
            idx += 1
            return {"label": label, "word": word, "begin": idx - 1, "end": idx}
        kids = []
        begin = idx
        while toks[pos] == "(":
            kids.append(node())
        pos += 1
        return {"label": label, "children": kids, "begin": begin, "end": idx}

    return node()


def noun_type(nouns):
    if len(nouns) >= 2 and " ".join(nouns[-2:]) in COMPOUND:
        return COMPOUND[" ".join(nouns[-2:])]
    if nouns and nouns[-1] in SINGLE:
        return SINGLE[nouns[-1]]
    return None


def is_obj(s):
    return "(" not in s


def is_sub(s):
    return s.count("(") == 1 and not s.startswith("(")


def sub_landmark(s):
    return s[s.index("(") + 1:-1]


def combine(sets):
    objs, typed, subs = [], [], []
    for st in sets:
        for s in st:
            bucket = objs if is_obj(s) else subs if is_sub(s) else typed
            if s not in bucket:
                bucket.append(s)
    if not objs:
        return subs + typed
    out = objs + typed
    for o in objs:
        for r in subs:
            if sub_landmark(r) != o and f"{o}({r})" not in out:
                out.append(f"{o}({r})")
    return out


def label(node, out):
    """Returns the gold set for node; appends phrase records in preorder."""
    if "word" in node:
        return []
    rec = {"label": node["label"], "begin": node["begin"], "end": node["end"], "groundings": []}
    out.append(rec)
    kids = node["children"]
    own = [k["word"] for k in kids if "word" in k]
    child_sets = [label(k, out) for k in kids if "word" not in k]
    lab = node["label"]
    if lab == "NP":
        nouns = [k["word"] for k in kids if "word" in k and k["label"] == "NN"]
        if nouns:
            t = noun_type(nouns)
            res = [t] if t else []
        else:
            res = combine(child_sets)
    elif lab in ("PP", "ADVP"):
        rel = next((REL_WORD[w] for w in own if w in REL_WORD), None)
        inner = [s for st in child_sets for s in st]
        if rel is not None and inner:
            res = [f"{rel}({s})" for s in inner if is_obj(s)]
        elif rel is not None:
            res = []
        else:
            res = inner
    elif lab == "WHNP":
        res = []
    else:
        res = combine(child_sets)
    rec["groundings"] = res
    return res


TYPES = [t["name"] for t in SYM["object_types"] if t["name"] != "corridor-junction"]


def noun(rng, t):
    spec = next(x for x in SYM["object_types"] if x["name"] == t)
    if t in COMPOUND.values():
        return " ".join(spec["words"])
    return rng.choice(spec["words"])


def sentences(rng):
    fixed = ["go to the kitchen that is down the hall", "go", "stop", "explore",
             "follow the hallway", "go down the hallway", "go quickly to the office",
             "go safely to the lab", "go directly to the kitchen"]
    verbs = ["go", "walk", "head", "proceed", "move"]
    out = list(fixed)
    rels = ["down", "past", "near", "through", "before", "after", "up"]
    forms = [
        "{v} to the {a}",
        "{v} to the {a} that is {r} the {b}",
        "{v} to the {a} {r} the {b}",
        "{v} {r} the {b} to the {a}",
        "{v} {r} the {b} and {v} to the {a}",
        "{v} to the {a} that is {s} of the {b}",
        "{v} to the {a} far from the {b}",
    ]
    while len(out) < 54:
        f = forms[len(out) % len(forms)]
        a, b = rng.sample(TYPES, 2)
        r = rng.choice(rels)
        if r in ("down", "up") or (r == "through" and rng.random() < 0.5):
            b = "hallway"
            if a == b:
                a = "kitchen"
        s = rng.choice(["left", "right"])
        text = f.format(v=rng.choice(verbs), a=noun(rng, a), b=noun(rng, b), r=r, s=s)
        if text not in out:
            out.append(text)
    return out


def main():
    rng = random.Random(5)
    examples = []
    for text in sentences(rng):
        tree = subprocess.run([BIN, "parse", text], check=True, capture_output=True, text=True).stdout.strip()
        phrases = []
        label(read_tree(tree), phrases)
        examples.append({"text": text, "tree": tree, "phrases": phrases})
    with open(os.path.join(DATA, "grounding_corpus.json"), "w") as f:
        json.dump({"examples": examples}, f, indent=1)


if __name__ == "__main__":
    main()
