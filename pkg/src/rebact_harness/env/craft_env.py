"""Deterministic TextCraft-style crafting environment.

Commands follow the crafting grammar used in the agent prompts::

    craft [target count] [target item] using [count] [item], [count] [item]
    get [count] [item]
    inventory
    think: [free text]

All rejections are reported in-band as observation text and leave the
inventory untouched. ``step`` is a pure function of (task, inventory, command).
"""
import logging
import re
from functools import cached_property
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from ..errors import InvalidTask, UnparseableCommand

logger = logging.getLogger(__name__)

_WHITESPACE = re.compile(r"\s+")
_COUNT = re.compile(r"[+-]?\d+")
_USING = re.compile(r"^(?P<target>.*?)\s+using\s+(?P<inputs>.*)$", re.IGNORECASE)
_INPUT_SEPARATOR = re.compile(r"\s*,\s*(?:and\s+)?|\s+and\s+", re.IGNORECASE)

REJECTION_PREFIX = "Could not"
THINK_OBSERVATION = "OK."
EMPTY_INVENTORY = "Inventory: empty"


def normalize_item(name: str) -> str:
    """Canonical item name: lower-case, single spaces, no surrounding whitespace."""
    return _WHITESPACE.sub(" ", name.strip()).lower()


def _checked_name(name: str) -> str:
    normalized = normalize_item(name)
    if not normalized:
        raise ValueError("item name must be non-empty")
    return normalized


def is_rejection(observation: str) -> bool:
    return observation.startswith(REJECTION_PREFIX)


class ItemStack(BaseModel):
    item: str
    count: int = Field(ge=1)

    @field_validator("item")
    @classmethod
    def normalize_name(cls, v: str) -> str:
        return _checked_name(v)

    def render(self) -> str:
        return f"{self.count} {self.item}"


class Recipe(BaseModel):
    output: ItemStack
    ingredients: List[ItemStack] = Field(min_length=1)

    @model_validator(mode="after")
    def check_ingredients(self):
        names = [stack.item for stack in self.ingredients]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate ingredient in recipe for {self.output.item}")
        if self.output.item in names:
            raise ValueError(f"recipe for {self.output.item} consumes its own output")
        return self

    def render(self) -> str:
        inputs = ", ".join(stack.render() for stack in self.ingredients)
        return f"craft {self.output.render()} using {inputs}"


class GenericMap:
    """Generic ingredient names and the specialized items that can stand in for them."""

    def __init__(self, generics: Optional[Mapping[str, Iterable[str]]] = None):
        self._specializations: Dict[str, Tuple[str, ...]] = {}
        self._generic_of: Dict[str, str] = {}

        normalized = {
            normalize_item(generic): sorted({normalize_item(s) for s in specs})
            for generic, specs in (generics or {}).items()
        }
        for generic, specs in sorted(normalized.items()):
            for spec in specs:
                if spec in normalized:
                    raise InvalidTask(f"'{spec}' is both a generic and a specialization")
                if spec in self._generic_of:
                    raise InvalidTask(
                        f"'{spec}' specializes both '{self._generic_of[spec]}' and '{generic}'"
                    )
                self._generic_of[spec] = generic
            self._specializations[generic] = tuple(specs)

    def is_generic(self, item: str) -> bool:
        return item in self._specializations

    def generic_of(self, item: str) -> Optional[str]:
        return self._generic_of.get(item)

    def specializations(self, generic: str) -> Tuple[str, ...]:
        return self._specializations.get(generic, ())

    def candidates(self, slot: str) -> List[str]:
        """Items that may fill ``slot``, in consumption (lexicographic) order."""
        if not self.is_generic(slot):
            return [slot]
        return sorted((slot,) + self._specializations[slot])

    def covers(self, slot: str, item: str) -> bool:
        return item == slot or (self.is_generic(slot) and self._generic_of.get(item) == slot)

    def as_dict(self) -> Dict[str, List[str]]:
        return {generic: list(specs) for generic, specs in self._specializations.items()}


class Inventory:
    """Immutable multiset of items. Zero counts are never stored."""

    __slots__ = ("_counts",)

    def __init__(self, counts: Optional[Mapping[str, int]] = None):
        merged: Dict[str, int] = {}
        for item, count in (counts or {}).items():
            if count < 0:
                raise ValueError(f"negative count for {item}")
            name = normalize_item(item)
            merged[name] = merged.get(name, 0) + int(count)
        self._counts = {item: count for item, count in sorted(merged.items()) if count}

    def count(self, item: str) -> int:
        return self._counts.get(item, 0)

    def items(self) -> List[Tuple[str, int]]:
        return list(self._counts.items())

    def total(self) -> int:
        return sum(self._counts.values())

    def add(self, item: str, count: int) -> "Inventory":
        counts = dict(self._counts)
        counts[item] = counts.get(item, 0) + count
        return Inventory(counts)

    def apply(self, consumed: Mapping[str, int], produced: Optional[ItemStack] = None) -> "Inventory":
        counts = dict(self._counts)
        for item, count in consumed.items():
            remaining = counts.get(item, 0) - count
            if remaining < 0:
                raise ValueError(f"cannot consume {count} {item}, only {counts.get(item, 0)} held")
            counts[item] = remaining
        if produced is not None:
            counts[produced.item] = counts.get(produced.item, 0) + produced.count
        return Inventory(counts)

    def as_dict(self) -> Dict[str, int]:
        return dict(self._counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, Inventory) and self._counts == other._counts

    def __hash__(self) -> int:
        return hash(tuple(self._counts.items()))

    def __len__(self) -> int:
        return len(self._counts)

    def __repr__(self) -> str:
        return f"Inventory({self._counts!r})"


class CraftCommand(BaseModel):
    kind: Literal["craft"] = "craft"
    target: ItemStack
    inputs: List[ItemStack] = Field(min_length=1)

    def render(self) -> str:
        return f"craft {self.target.render()} using {', '.join(s.render() for s in self.inputs)}"


class GetCommand(BaseModel):
    kind: Literal["get"] = "get"
    item: str
    count: int = Field(ge=1)

    @field_validator("item")
    @classmethod
    def normalize_name(cls, v: str) -> str:
        return _checked_name(v)

    def render(self) -> str:
        return f"get {self.count} {self.item}"


class InventoryCommand(BaseModel):
    kind: Literal["inventory"] = "inventory"

    def render(self) -> str:
        return "inventory"


class ThinkCommand(BaseModel):
    kind: Literal["think"] = "think"
    text: str = Field(min_length=1)

    def render(self) -> str:
        return f"think: {self.text}"


Command = Union[CraftCommand, GetCommand, InventoryCommand, ThinkCommand]


def _parse_stack(part: str, text: str) -> ItemStack:
    pieces = part.strip().split(None, 1)
    if not pieces or not _COUNT.fullmatch(pieces[0]):
        raise UnparseableCommand(text, f"missing count in '{part.strip()}'")
    count = int(pieces[0])
    if count <= 0:
        raise UnparseableCommand(text, f"count must be positive, got {count}")
    item = normalize_item(pieces[1]) if len(pieces) > 1 else ""
    if not item:
        raise UnparseableCommand(text, "empty item name")
    return ItemStack(item=item, count=count)


def parse_command(text: str) -> Command:
    """Parse one command line into a structured ``Command``."""
    line = text.strip()
    if not line:
        raise UnparseableCommand(text, "empty command")
    if "\n" in line:
        raise UnparseableCommand(text, "expected a single line")

    if line[:6].lower() == "think:":
        thought = line[6:].strip()
        if not thought:
            raise UnparseableCommand(text, "empty thought")
        return ThinkCommand(text=thought)

    if line.endswith("."):
        line = line[:-1].rstrip()
    verb, _, rest = line.partition(" ")
    verb = verb.lower()
    rest = rest.strip()

    if verb == "inventory":
        if rest:
            raise UnparseableCommand(text, "inventory takes no arguments")
        return InventoryCommand()

    if verb == "get":
        stack = _parse_stack(rest, text)
        return GetCommand(item=stack.item, count=stack.count)

    if verb == "craft":
        match = _USING.match(rest)
        if not match:
            raise UnparseableCommand(text, "missing 'using' clause")
        target = _parse_stack(match.group("target"), text)
        parts = _INPUT_SEPARATOR.split(match.group("inputs").strip())
        if any(not part.strip() for part in parts):
            raise UnparseableCommand(text, "empty ingredient in 'using' clause")
        inputs = [_parse_stack(part, text) for part in parts]
        return CraftCommand(target=target, inputs=inputs)

    raise UnparseableCommand(text, f"unknown verb '{verb}'")


class CraftTask(BaseModel):
    id: str
    goal: ItemStack
    recipes: List[Recipe]
    gettable: List[str]
    generics: Dict[str, List[str]] = Field(default_factory=dict)
    exemplar_block: str = ""

    @field_validator("gettable")
    @classmethod
    def normalize_gettable(cls, v: List[str]) -> List[str]:
        return sorted({normalize_item(item) for item in v})

    @model_validator(mode="after")
    def check_invariants(self):
        self.generics = GenericMap(self.generics).as_dict()

        outputs = {recipe.output.item for recipe in self.recipes}
        for item in outputs:
            if self.is_gettable(item):
                raise InvalidTask(f"'{item}' is both craftable and gettable")
        if self.goal.item not in outputs and not self.is_gettable(self.goal.item):
            raise InvalidTask(f"goal '{self.goal.item}' is neither craftable nor gettable")
        self._check_acyclic(outputs)
        return self

    def _check_acyclic(self, outputs) -> None:
        edges: Dict[str, List[str]] = {}
        for recipe in self.recipes:
            deps = edges.setdefault(recipe.output.item, [])
            for stack in recipe.ingredients:
                deps.extend(c for c in self.generic_map.candidates(stack.item) if c in outputs)

        state: Dict[str, int] = {}  # 1 = on stack, 2 = done

        def visit(item: str) -> None:
            state[item] = 1
            for dep in edges.get(item, []):
                if state.get(dep) == 1:
                    raise InvalidTask(f"recipe cycle through '{dep}'")
                if dep not in state:
                    visit(dep)
            state[item] = 2

        for item in sorted(edges):
            if item not in state:
                visit(item)

    @cached_property
    def generic_map(self) -> GenericMap:
        return GenericMap(self.generics)

    def is_gettable(self, item: str) -> bool:
        gettable = self.gettable
        return item in gettable or self.generic_map.generic_of(item) in gettable

    def recipes_for(self, item: str) -> List[Recipe]:
        return [recipe for recipe in self.recipes if recipe.output.item == item]

    def describe(self) -> str:
        lines = ["Crafting commands:"]
        lines.extend(recipe.render() for recipe in self.recipes)
        lines.append(f"Goal: craft {self.goal.render()}.")
        return "\n".join(lines)


RejectionKind = Literal["no_such_recipe", "count_mismatch", "ingredient_mismatch", "missing_ingredients"]
_REJECTION_RANK = {"no_such_recipe": 0, "count_mismatch": 1, "ingredient_mismatch": 2, "missing_ingredients": 3}


class MatchResult(BaseModel):
    matched: bool
    recipe: Optional[Recipe] = None
    consumption: Dict[str, int] = Field(default_factory=dict)
    rejection: Optional[RejectionKind] = None
    shortfalls: Dict[str, int] = Field(default_factory=dict)
    observation: str


def _inputs_fit_slots(recipe: Recipe, inputs: List[ItemStack], generic_map: GenericMap) -> bool:
    """Each stated input must name exactly one recipe slot, with the slot's count."""
    claimed = set()
    for stated in inputs:
        slot = next((s for s in recipe.ingredients if s.item == stated.item), None)
        if slot is None:
            slot = next((s for s in recipe.ingredients if generic_map.covers(s.item, stated.item)), None)
        if slot is None or slot.item in claimed or slot.count != stated.count:
            return False
        claimed.add(slot.item)
    return len(claimed) == len(recipe.ingredients)


def plan_consumption(recipe: Recipe, inv: Inventory,
                     generic_map: GenericMap) -> Tuple[Dict[str, int], Dict[str, int]]:
    """Concrete items a craft would consume, and per-slot shortfalls.

    Generic slots draw from the generic item and its specializations in
    lexicographic order; mixing specializations is allowed.
    """
    consumption: Dict[str, int] = {}
    shortfalls: Dict[str, int] = {}
    for slot in recipe.ingredients:
        candidates = generic_map.candidates(slot.item)
        available = sum(inv.count(c) - consumption.get(c, 0) for c in candidates)
        if available < slot.count:
            shortfalls[slot.item] = slot.count - available
            continue
        remaining = slot.count
        for candidate in candidates:
            take = min(remaining, inv.count(candidate) - consumption.get(candidate, 0))
            if take > 0:
                consumption[candidate] = consumption.get(candidate, 0) + take
                remaining -= take
            if remaining == 0:
                break
    return consumption, shortfalls


def match_recipe(cmd: CraftCommand, task: CraftTask, inv: Inventory) -> MatchResult:
    """Find the recipe a craft command refers to and how it would be paid for."""
    target = cmd.target
    candidates = task.recipes_for(target.item)
    if not candidates:
        return MatchResult(
            matched=False,
            rejection="no_such_recipe",
            observation=f"Could not find a valid recipe for {target.item}",
        )

    best: Optional[MatchResult] = None
    for recipe in candidates:
        if recipe.output.count != target.count:
            result = MatchResult(
                matched=False,
                recipe=recipe,
                rejection="count_mismatch",
                observation=f"Could not craft {target.render()}: the recipe produces {recipe.output.render()}",
            )
        elif not _inputs_fit_slots(recipe, cmd.inputs, task.generic_map):
            expected = ", ".join(s.render() for s in recipe.ingredients)
            result = MatchResult(
                matched=False,
                recipe=recipe,
                rejection="ingredient_mismatch",
                observation=f"Could not craft {target.render()}: ingredients must be {expected}",
            )
        else:
            consumption, shortfalls = plan_consumption(recipe, inv, task.generic_map)
            if not shortfalls:
                return MatchResult(matched=True, recipe=recipe, consumption=consumption,
                                   observation=f"Crafted {recipe.output.render()}")
            missing = ", ".join(f"{count} {item}" for item, count in shortfalls.items())
            result = MatchResult(
                matched=False,
                recipe=recipe,
                rejection="missing_ingredients",
                shortfalls=shortfalls,
                observation=f"Could not find enough items to craft {target.render()}: missing {missing}",
            )
        if best is None or _REJECTION_RANK[result.rejection] > _REJECTION_RANK[best.rejection]:
            best = result
    return best


def render_inventory(inv: Inventory) -> str:
    if not len(inv):
        return EMPTY_INVENTORY
    return "Inventory: " + ", ".join(f"{count} {item}" for item, count in inv.items())


def goal_reached(inv: Inventory, goal: ItemStack) -> bool:
    return inv.count(goal.item) >= goal.count


def step(task: CraftTask, inv: Inventory, cmd: Command) -> Tuple[str, Inventory]:
    """Apply one command; returns the observation and the resulting inventory."""
    if isinstance(cmd, GetCommand):
        if task.is_gettable(cmd.item):
            return f"Got {cmd.count} {cmd.item}", inv.add(cmd.item, cmd.count)
        return f"Could not find {cmd.item}", inv

    if isinstance(cmd, CraftCommand):
        result = match_recipe(cmd, task, inv)
        if result.matched:
            return result.observation, inv.apply(result.consumption, result.recipe.output)
        return result.observation, inv

    if isinstance(cmd, InventoryCommand):
        return render_inventory(inv), inv

    return THINK_OBSERVATION, inv


class CraftEnvironment:
    """One episode's crafting state. Owned by a single runner or server session."""

    def __init__(self, task: CraftTask, inventory: Optional[Inventory] = None):
        self.task = task
        self._initial = inventory or Inventory()
        self.inventory = self._initial

    def reset(self) -> str:
        self.inventory = self._initial
        return self.describe()

    def describe(self) -> str:
        return self.task.describe()

    def execute(self, text: str) -> str:
        """Parse and apply one command line, returning the observation."""
        try:
            cmd = parse_command(text)
        except UnparseableCommand as e:
            logger.debug(f"[{self.task.id}] {e}")
            return f"Could not execute {text.strip()}"
        observation, self.inventory = step(self.task, self.inventory, cmd)
        return observation

    @property
    def goal_reached(self) -> bool:
        return goal_reached(self.inventory, self.task.goal)
