"""Templated question answering derived from the scene graph."""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..errors import EmptyQAError
from .types import CATEGORIES, COLORS, PLURALS, TASKS, QAItem, SceneGraph

SPATIAL_MARGIN = 0.3


def _degraded(elements) -> bool:
    """True when every supporting element is a void or jitter target."""
    if not elements:
        return False
    for el in elements:
        target = el.textureless if hasattr(el, "textureless") else el.complex
        if not target:
            return False
    return True


def _count_qa(scene, rng):
    present = sorted({o.category for o in scene.objects})
    absent = [c for c in CATEGORIES if c not in present]
    if absent and (not present or rng.random() < 0.3):
        cat = absent[int(rng.integers(len(absent)))]
    else:
        cat = present[int(rng.integers(len(present)))]
    support = [o for o in scene.objects if o.category == cat]
    return QAItem(f"how many {PLURALS[cat]} are there", str(len(support)), "count", _degraded(support))


def _color_qa(scene, rng):
    counts = Counter(o.category for o in scene.objects)
    targets = [o for o in scene.objects if counts[o.category] == 1] + list(scene.surfaces)
    if not targets:
        return None
    t = targets[int(rng.integers(len(targets)))]
    name = t.name if hasattr(t, "name") else t.category
    return QAItem(f"what color is the {name}", t.color, "color", _degraded([t]))


def _exist_qa(scene, rng):
    present = sorted({o.category for o in scene.objects})
    absent = [c for c in CATEGORIES if c not in present]
    pool = absent if (absent and rng.random() < 0.5) else present
    cat = pool[int(rng.integers(len(pool)))]
    support = [o for o in scene.objects if o.category == cat]
    return QAItem(f"is there a {cat}", "yes" if support else "no", "exist", _degraded(support))


def _spatial_qa(scene, rng):
    keys = Counter((o.color, o.category) for o in scene.objects)
    unique = [o for o in scene.objects if keys[(o.color, o.category)] == 1]
    pairs = [
        (a, b)
        for a in unique
        for b in unique
        if a.id != b.id and abs(a.center[0] - b.center[0]) >= SPATIAL_MARGIN
    ]
    if not pairs:
        return None
    a, b = pairs[int(rng.integers(len(pairs)))]
    answer = "yes" if a.center[0] < b.center[0] else "no"
    q = f"is the {a.color} {a.category} left of the {b.color} {b.category}"
    return QAItem(q, answer, "spatial", _degraded([a, b]))


def _caption_qa(scene, rng):
    floor = [s for s in scene.surfaces if s.kind == "floor"]
    if not floor:
        return None
    n = len(scene.objects)
    noun = "object" if n == 1 else "objects"
    answer = f"a room with {n} {noun} and a {floor[0].color} floor"
    return QAItem("describe the room", answer, "caption", _degraded(list(scene.objects) + floor))


_MAKERS = {
    "count": _count_qa,
    "color": _color_qa,
    "exist": _exist_qa,
    "spatial": _spatial_qa,
    "caption": _caption_qa,
}


def generate_qa(scene: SceneGraph, per_task: dict, seed: int) -> list[QAItem]:
    """Generate up to ``per_task[task]`` distinct questions per task.

    Templates that the scene cannot satisfy are skipped; if nothing at all can
    be generated while questions were requested, ``EmptyQAError`` is raised.
    """
    rng = np.random.default_rng(seed)
    items: list[QAItem] = []
    seen = set()
    requested = 0
    for task in TASKS:
        want = int(per_task.get(task, 0))
        if want < 0:
            raise ValueError(f"per_task[{task!r}] must be >= 0")
        requested += want
        got = 0
        for _ in range(want * 8):
            if got == want:
                break
            item = _MAKERS[task](scene, rng)
            if item is None:
                break
            if item.question in seen:
                continue
            seen.add(item.question)
            items.append(item)
            got += 1
    if requested and not items:
        raise EmptyQAError("no QA template is satisfiable for this scene")
    return items


def describe_scene(scene: SceneGraph) -> str:
    """Comma-separated phrases: surface colors in fixed order, then objects left to right."""
    parts = [f"{s.name} {s.color}" for s in scene.surfaces]
    objs = sorted(scene.objects, key=lambda o: (o.center[0], o.id))
    parts += [f"{o.color} {o.category}" for o in objs]
    return ", ".join(parts)


def qa_vocabulary() -> list[str]:
    """Every word any template, answer or description can produce."""
    words = set(CATEGORIES) | set(PLURALS.values()) | set(COLORS)
    words |= {str(i) for i in range(13)}
    words |= set(
        "how many are there what color is the a left of describe room with objects object "
        "and floor back wall window pane yes no".split()
    )
    return sorted(words)
