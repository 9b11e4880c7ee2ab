"""Task files, recipe universes and depth-stratified task generation."""
import itertools
import json
import logging
import random
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from ..backends.planner import bfs_plan
from ..errors import ConfigError, InsufficientUniverse, InvalidTask
from .craft_env import CraftTask, GenericMap, ItemStack, Recipe, normalize_item

logger = logging.getLogger(__name__)

DEFAULT_EXEMPLARS = """\
Crafting commands:
craft 3 dark oak sign using 6 dark oak planks, 1 stick
craft 4 stick using 2 planks
craft 1 crafting table using 4 planks
Goal: craft 3 dark oak sign.

> think: I should check if I can fetch dark oak sign directly from the environment or the inventory.
OK.
> inventory
Inventory: empty
> get 3 dark oak sign
Could not find dark oak sign
> think: I cannot get dark oak sign directly, I need to craft it. From the crafting commands, I can use: craft 3 dark oak sign using 6 dark oak planks, 1 stick. Ingredients needed: 6 dark oak planks, 1 stick. The stick needs 2 planks, so I fetch 8 dark oak planks in total.
OK.
> get 8 dark oak planks
Got 8 dark oak planks
> craft 4 stick using 2 dark oak planks
Crafted 4 stick
> craft 3 dark oak sign using 6 dark oak planks, 1 stick
Crafted 3 dark oak sign"""


# output: (count, [(ingredient, count), ...])
DEFAULT_RECIPES: Dict[str, Tuple[int, List[Tuple[str, int]]]] = {
    "beehive": (1, [("planks", 6), ("honeycomb", 3)]),
    "stick": (4, [("planks", 2)]),
    "crafting table": (1, [("planks", 4)]),
    "chest": (1, [("planks", 8)]),
    "paper": (3, [("sugar cane", 3)]),
    "white bed": (1, [("white wool", 3), ("planks", 3)]),
    "piston": (1, [("planks", 3), ("cobblestone", 4), ("iron ingot", 1), ("redstone", 1)]),
    "torch": (4, [("stick", 1), ("coal", 1)]),
    "bow": (1, [("stick", 3), ("string", 3)]),
    "arrow": (4, [("flint", 1), ("stick", 1), ("feather", 1)]),
    "book": (1, [("paper", 3), ("leather", 1)]),
    "iron pickaxe": (1, [("iron ingot", 3), ("stick", 2)]),
    "lever": (1, [("stick", 1), ("cobblestone", 1)]),
    "redstone torch": (1, [("stick", 1), ("redstone", 1)]),
    "dark oak sign": (3, [("dark oak planks", 6), ("stick", 1)]),
    "fishing rod": (1, [("stick", 3), ("string", 2)]),
    "painting": (1, [("stick", 8), ("wool", 1)]),
    "item frame": (1, [("stick", 8), ("leather", 1)]),
    "ladder": (3, [("stick", 7)]),
    "bookshelf": (1, [("planks", 6), ("book", 3)]),
}

DEFAULT_GENERICS: Dict[str, List[str]] = {
    "planks": ["oak planks", "birch planks", "spruce planks", "dark oak planks"],
    "wool": ["white wool", "black wool"],
}

DEFAULT_GETTABLE: List[str] = [
    "oak planks", "birch planks", "spruce planks", "dark oak planks",
    "honeycomb", "sugar cane", "white wool", "black wool", "cobblestone",
    "iron ingot", "redstone", "coal", "string", "flint", "feather", "leather",
]


class RecipeUniverse(BaseModel):
    """A pool of recipes from which tasks are cut."""

    recipes: List[Recipe]
    gettable: List[str]
    generics: Dict[str, List[str]] = Field(default_factory=dict)

    @field_validator("gettable")
    @classmethod
    def normalize_gettable(cls, v: List[str]) -> List[str]:
        return sorted({normalize_item(item) for item in v})

    @model_validator(mode="after")
    def check_outputs(self):
        outputs = [recipe.output.item for recipe in self.recipes]
        if len(set(outputs)) != len(outputs):
            raise InvalidTask("universe recipes must have distinct outputs")
        return self

    @property
    def outputs(self) -> List[str]:
        return sorted(recipe.output.item for recipe in self.recipes)

    def closure(self, item: str) -> List[Recipe]:
        """Recipes needed to craft ``item``, in universe order."""
        generic_map = GenericMap(self.generics)
        by_output = {recipe.output.item: recipe for recipe in self.recipes}
        needed = set()
        pending = [item]
        while pending:
            current = pending.pop()
            if current in needed:
                continue
            needed.add(current)
            recipe = by_output.get(current)
            if recipe:
                for slot in recipe.ingredients:
                    pending.extend(generic_map.candidates(slot.item))
        return [recipe for recipe in self.recipes if recipe.output.item in needed]

    def task_for(self, item: str, task_id: str, count: int = 1,
                 exemplar_block: str = DEFAULT_EXEMPLARS,
                 distractors: Sequence[Recipe] = ()) -> CraftTask:
        recipes = self.closure(item)
        generic_map = GenericMap(self.generics)
        slots = {slot.item for recipe in recipes for slot in recipe.ingredients} | {item}
        gettable = [
            g for g in self.gettable
            if any(g == s or generic_map.covers(s, g) or generic_map.covers(g, s) for s in slots)
        ]
        return CraftTask(
            id=task_id,
            goal=ItemStack(item=item, count=count),
            recipes=recipes + list(distractors),
            gettable=gettable,
            generics=self.generics,
            exemplar_block=exemplar_block,
        )


def default_universe() -> RecipeUniverse:
    """A small hand-written Minecraft-flavoured universe."""
    recipes = [
        Recipe(
            output=ItemStack(item=output, count=count),
            ingredients=[ItemStack(item=name, count=n) for name, n in ingredients],
        )
        for output, (count, ingredients) in DEFAULT_RECIPES.items()
    ]
    return RecipeUniverse(recipes=recipes, gettable=DEFAULT_GETTABLE, generics=DEFAULT_GENERICS)


_MATERIALS = ["amber", "basalt", "cedar", "copper", "coral", "flint", "granite", "ivory",
              "jade", "maple", "obsidian", "quartz", "slate", "tin", "willow", "zinc"]
_BASE_FORMS = ["ore", "dust", "fiber", "resin", "shard", "nugget"]
_PART_FORMS = ["gear", "rod", "plate", "coil", "hinge", "lens", "bracket", "spring", "valve", "frame"]
_SYNTH_GENERICS = {"planks": ["oak planks", "birch planks", "spruce planks"]}


def synthesize_universe(seed: int, levels: int = 4, per_level: int = 60,
                        base_items: int = 16, max_base_per_recipe: int = 2) -> RecipeUniverse:
    """Build a layered universe in which a level-k item takes exactly k crafts.

    Each level-k recipe (k > 1) consumes one level-(k-1) item in an amount no
    larger than that item's yield, plus a few gettable base items.
    """
    rng = random.Random(seed)
    base_pool = [f"{m} {f}" for m, f in itertools.product(_MATERIALS, _BASE_FORMS)]
    bases = sorted(rng.sample(base_pool, base_items))
    base_slots = bases + ["planks"]

    names = [f"{m} {f}" for m, f in itertools.product(_MATERIALS, _PART_FORMS)]
    rng.shuffle(names)
    if levels * per_level > len(names):
        first_round = list(names)
        names.extend(f"{name} mk{i}" for i in range(2, levels + 1) for name in first_round)
    name_iter = iter(names)

    recipes: List[Recipe] = []
    previous: List[Recipe] = []
    for level in range(1, levels + 1):
        current: List[Recipe] = []
        for _ in range(per_level):
            ingredients = [
                ItemStack(item=item, count=rng.randint(1, 4))
                for item in rng.sample(base_slots, rng.randint(1, max_base_per_recipe))
            ]
            if previous:
                lower = rng.choice(previous)
                ingredients.insert(0, ItemStack(item=lower.output.item, count=rng.randint(1, lower.output.count)))
            output = ItemStack(item=next(name_iter), count=rng.choice([1, 1, 2, 4]))
            current.append(Recipe(output=output, ingredients=ingredients))
        recipes.extend(current)
        previous = current

    gettable = bases + [spec for specs in _SYNTH_GENERICS.values() for spec in specs]
    logger.debug(f"Synthesized universe with {len(recipes)} recipes over {levels} levels (seed {seed})")
    return RecipeUniverse(recipes=recipes, gettable=gettable, generics=_SYNTH_GENERICS)


def goals_by_depth(universe: RecipeUniverse, max_states: int = 100_000) -> Dict[int, List[str]]:
    """Group universe outputs by the number of crafts in their shortest plan."""
    depths: Dict[int, List[str]] = {}
    for item in universe.outputs:
        plan = bfs_plan(universe.task_for(item, task_id=item), max_states=max_states)
        depths.setdefault(plan.craft_count, []).append(item)
    return depths


def generate_tasks(universe: RecipeUniverse, depth: int, n: int, seed: int,
                   distractors: int = 0, exemplar_block: str = DEFAULT_EXEMPLARS) -> List[CraftTask]:
    """Draw ``n`` distinct goals whose shortest plan needs exactly ``depth`` crafts."""
    candidates = goals_by_depth(universe).get(depth, [])
    if len(candidates) < n:
        raise InsufficientUniverse(depth, n, len(candidates))

    rng = random.Random(seed)
    goals = rng.sample(candidates, n)
    tasks = []
    for i, item in enumerate(goals):
        needed = {recipe.output.item for recipe in universe.closure(item)}
        spare = [recipe for recipe in universe.recipes if recipe.output.item not in needed]
        extra = rng.sample(spare, min(distractors, len(spare))) if distractors else []
        tasks.append(universe.task_for(item, task_id=f"d{depth}-{i:03d}", exemplar_block=exemplar_block,
                                       distractors=extra))
    logger.info(f"Generated {len(tasks)} depth-{depth} tasks (seed {seed})")
    return tasks


def load_tasks(path: Path) -> List[CraftTask]:
    """Load a task file: a JSON list of tasks or ``{"tasks": [...]}``."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read task file {path}: {e}") from e

    entries = data.get("tasks") if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ConfigError(f"Task file {path} must hold a list of tasks")

    tasks = []
    for i, entry in enumerate(entries):
        try:
            tasks.append(CraftTask(**entry))
        except (ValidationError, TypeError) as e:
            raise InvalidTask(f"task {i} in {path}: {e}") from e
    return tasks


def dump_tasks(tasks: Sequence[CraftTask], path: Optional[Path] = None) -> str:
    text = json.dumps({"tasks": [task.model_dump() for task in tasks]}, indent=2, ensure_ascii=False) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    return text
