"""Fixed two-tier text prompts and the DoTA category -> prompt mapping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

ANOMALY_CATEGORIES = ("ST", "AH", "LA", "OC", "TC", "VP", "VO", "OO", "UK")
CATEGORIES = ANOMALY_CATEGORIES + ("NORMAL",)

NUM_FINE = 11
NUM_GENERAL = 2
FINE_NORMAL_INDEX = 11
GENERAL_ANOMALY_INDEX = 1
GENERAL_NORMAL_INDEX = 2


@dataclass(frozen=True)
class PromptEntry:
    index: int
    tier: str
    text: str


_GENERAL_TEXTS = (
    "A traffic anomaly occurred in the scene.",
    "The traffic in this scenario is normal.",
)

# Object slot order inside the collision template: vehicle, pedestrian, obstacle.
_COLLISION_OBJECTS = ("vehicle", "pedestrian", "obstacle")
_SUBJECTS = ("ego", "non-ego")


def _fine_texts() -> tuple[str, ...]:
    texts = []
    for subject in _SUBJECTS:
        for obj in _COLLISION_OBJECTS:
            texts.append(f"The {subject} vehicle collision with another {obj}.")
    for subject in _SUBJECTS:
        texts.append(f"The {subject} vehicle out-of-control and leaving the roadway.")
    for subject in _SUBJECTS:
        texts.append(f"The {subject} vehicle has an unknown accident.")
    texts.append("The vehicle is running normally on the road.")
    return tuple(texts)


_FINE_TEXTS = _fine_texts()

# category -> offset inside the ego block; non-ego adds the block width
_COLLISION_SLOT = {"ST": 1, "AH": 1, "LA": 1, "OC": 1, "TC": 1, "VP": 2, "VO": 3}


def general_prompts() -> list[PromptEntry]:
    """Index 1 is the anomaly sentence, index 2 the normal one."""
    return [PromptEntry(i + 1, "general", t) for i, t in enumerate(_GENERAL_TEXTS)]


def fine_grained_prompts() -> list[PromptEntry]:
    return [PromptEntry(i + 1, "fine_grained", t) for i, t in enumerate(_FINE_TEXTS)]


def general_texts() -> list[str]:
    return list(_GENERAL_TEXTS)


def fine_texts() -> list[str]:
    return list(_FINE_TEXTS)


def map_category(category: str, ego_involved: bool) -> tuple[int, int]:
    """Return ``(fine_prompt_index, general_prompt_index)``, both 1-based.

    The ego flag is ignored for ``NORMAL``.
    """
    if category == "NORMAL":
        return FINE_NORMAL_INDEX, GENERAL_NORMAL_INDEX
    if category in _COLLISION_SLOT:
        fine = _COLLISION_SLOT[category] + (0 if ego_involved else 3)
    elif category == "OO":
        fine = 7 if ego_involved else 8
    elif category == "UK":
        fine = 9 if ego_involved else 10
    else:
        raise ValueError(f"unknown anomaly category {category!r}; expected one of {CATEGORIES}")
    return fine, GENERAL_ANOMALY_INDEX


def export_prompts(path: str | Path) -> Path:
    """Write both prompt tiers plus the category mapping as JSON."""
    path = Path(path)
    mapping = {}
    for cat in ANOMALY_CATEGORIES:
        for ego in (True, False):
            fine, general = map_category(cat, ego)
            mapping[f"{cat}{'' if ego else '*'}"] = {"fine": fine, "general": general}
    mapping["NORMAL"] = dict(zip(("fine", "general"), map_category("NORMAL", False)))
    payload = {
        "general": [asdict(p) for p in general_prompts()],
        "fine_grained": [asdict(p) for p in fine_grained_prompts()],
        "category_map": mapping,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path
