"""Synthetic interaction world: users with latent attribute affinities rate items.

Rating model: rating = quantize(clamp(3.0 + scale * mean_affinity + noise, 1, 5))
where mean_affinity averages the user's affinity over the item's attributes and
quantize rounds to one decimal. Reviews are templated from the noise-free
affinities: `[like] <attrs above threshold> [dislike] <attrs below threshold>`.

The default affinity prior U(-0.3, 1.0) is deliberately skewed positive (mean
rating ~3.7): with a symmetric prior the constant prediction 3.0 is already
optimal and no trained model could beat the untrained fallback, which would
make learning-progress comparisons vacuous at this scale.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, EmptyDatasetError, ParseError


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 50
    n_items: int = 200
    alphabet_size: int = 16
    attrs_per_item: int = 4
    events_per_user: int = 52
    min_history: int = 4
    max_history: int = 8
    rating_scale: float = 2.0
    noise_std: float = 0.1
    affinity_low: float = -0.3
    affinity_high: float = 1.0
    like_threshold: float = 0.3
    dislike_threshold: float = -0.3

    def validate(self) -> None:
        if min(self.n_users, self.n_items, self.alphabet_size, self.attrs_per_item) < 1:
            raise ConfigError("world sizes must be positive")
        if self.attrs_per_item > self.alphabet_size:
            raise ConfigError("attrs_per_item cannot exceed alphabet_size")
        if self.events_per_user > self.n_items:
            raise ConfigError("events_per_user cannot exceed n_items (items are rated once)")
        if not (1 <= self.min_history <= self.max_history):
            raise ConfigError("need 1 <= min_history <= max_history")
        if self.min_history >= self.events_per_user:
            raise ConfigError("min_history must leave at least one rating example per user")
        if self.noise_std < 0 or self.rating_scale <= 0:
            raise ConfigError("rating_scale must be positive and noise_std non-negative")
        if self.affinity_low >= self.affinity_high:
            raise ConfigError("affinity_low must be below affinity_high")
        if self.dislike_threshold >= self.like_threshold:
            raise ConfigError("dislike_threshold must be below like_threshold")


@dataclass(frozen=True)
class ItemMeta:
    item_id: int
    title: str
    attributes: tuple[int, ...]  # indices into the attribute alphabet

    def attribute_tokens(self) -> tuple[str, ...]:
        return tuple(f"attr_{a}" for a in self.attributes)


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    affinity: tuple[float, ...]  # one entry per alphabet attribute


@dataclass(frozen=True)
class Interaction:
    item: ItemMeta
    rating: float
    review: tuple[str, ...]  # review tokens, e.g. ("[like]", "attr_3", "[dislike]")


@dataclass(frozen=True)
class InteractionHistory:
    user_id: int
    events: tuple[Interaction, ...]  # oldest first


@dataclass(frozen=True)
class RatingExample:
    history: InteractionHistory
    target: ItemMeta
    rating: float


@dataclass(frozen=True)
class World:
    config: WorldConfig
    users: tuple[UserProfile, ...]
    items: tuple[ItemMeta, ...]
    examples: tuple[RatingExample, ...]


def mean_affinity(profile: UserProfile, item: ItemMeta) -> float:
    return float(np.mean([profile.affinity[a] for a in item.attributes]))


def quantize_rating(raw: float) -> float:
    return round(float(np.clip(raw, 1.0, 5.0)), 1)


def true_rating(profile: UserProfile, item: ItemMeta, cfg: WorldConfig, noise: float) -> float:
    return quantize_rating(3.0 + cfg.rating_scale * mean_affinity(profile, item) + noise)


def review_tokens(profile: UserProfile, item: ItemMeta, cfg: WorldConfig) -> tuple[str, ...]:
    liked = [f"attr_{a}" for a in item.attributes if profile.affinity[a] > cfg.like_threshold]
    disliked = [f"attr_{a}" for a in item.attributes if profile.affinity[a] < cfg.dislike_threshold]
    return ("[like]", *liked, "[dislike]", *disliked)


def generate_world(cfg: WorldConfig, rng: np.random.Generator) -> World:
    cfg.validate()
    items = []
    for item_id in range(cfg.n_items):
        attrs = rng.choice(cfg.alphabet_size, size=cfg.attrs_per_item, replace=False)
        items.append(ItemMeta(item_id, f"item_{item_id}", tuple(int(a) for a in attrs)))
    users = [
        UserProfile(u, tuple(rng.uniform(cfg.affinity_low, cfg.affinity_high, cfg.alphabet_size)))
        for u in range(cfg.n_users)
    ]
    examples: list[RatingExample] = []
    for profile in users:
        order = rng.choice(cfg.n_items, size=cfg.events_per_user, replace=False)
        events = []
        for item_id in order:
            item = items[int(item_id)]
            noise = float(rng.normal(0.0, cfg.noise_std)) if cfg.noise_std > 0 else 0.0
            events.append(
                Interaction(item, true_rating(profile, item, cfg, noise), review_tokens(profile, item, cfg))
            )
        for j in range(cfg.min_history, cfg.events_per_user):
            window = tuple(events[max(0, j - cfg.max_history) : j])
            examples.append(
                RatingExample(
                    history=InteractionHistory(profile.user_id, window),
                    target=events[j].item,
                    rating=events[j].rating,
                )
            )
    return World(cfg, tuple(users), tuple(items), tuple(examples))


def split_dataset(
    examples: Sequence[RatingExample], fractions: Sequence[float], rng: np.random.Generator
) -> list[list[RatingExample]]:
    """Shuffle and partition; fraction boundaries round to nearest example."""
    if not examples:
        raise EmptyDatasetError("no examples to split")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    bounds = [0]
    acc = 0.0
    for f in fractions:
        acc += f
        bounds.append(round(acc * len(examples)))
    return [shuffled[bounds[i] : bounds[i + 1]] for i in range(len(fractions))]


# --- serialization ---------------------------------------------------------


def _item_doc(item: ItemMeta) -> dict:
    return {
        "item_id": item.item_id,
        "title": item.title,
        "attributes": list(item.attribute_tokens()),
    }


def _item_from_doc(doc: dict) -> ItemMeta:
    attrs = tuple(int(t.removeprefix("attr_")) for t in doc["attributes"])
    return ItemMeta(int(doc["item_id"]), doc["title"], attrs)


def example_to_doc(ex: RatingExample) -> dict:
    return {
        "user_id": ex.history.user_id,
        "history": [
            {**_item_doc(it.item), "rating": it.rating, "review": " ".join(it.review)}
            for it in ex.history.events
        ],
        "target": _item_doc(ex.target),
        "rating": ex.rating,
    }


def example_from_doc(doc: dict) -> RatingExample:
    events = tuple(
        Interaction(_item_from_doc(h), float(h["rating"]), tuple(h["review"].split()))
        for h in doc["history"]
    )
    return RatingExample(
        history=InteractionHistory(int(doc["user_id"]), events),
        target=_item_from_doc(doc["target"]),
        rating=float(doc["rating"]),
    )


def export_examples(examples: Sequence[RatingExample], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_doc(ex), sort_keys=True) + "\n")


def import_examples(path: str | Path) -> list[RatingExample]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(example_from_doc(json.loads(line)))
            except (KeyError, ValueError, AttributeError, TypeError) as exc:
                raise ParseError(f"bad rating example ({exc!r})", line=lineno) from exc
    return out


def save_world(world: World, path: str | Path) -> None:
    doc = {
        "config": asdict(world.config),
        "users": [list(u.affinity) for u in world.users],
        "items": [_item_doc(it) for it in world.items],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_world_sides(path: str | Path) -> tuple[WorldConfig, tuple[UserProfile, ...], tuple[ItemMeta, ...]]:
    """Config, profiles, and items (enough for the teacher); examples live in JSONL."""
    try:
        doc = json.loads(Path(path).read_text())
        cfg = WorldConfig(**doc["config"])
        users = tuple(UserProfile(u, tuple(aff)) for u, aff in enumerate(doc["users"]))
        items = tuple(_item_from_doc(d) for d in doc["items"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad world file {path} ({exc!r})") from exc
    cfg.validate()
    return cfg, users, items
