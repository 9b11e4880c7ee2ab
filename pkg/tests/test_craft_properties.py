import hypothesis.strategies as st
from hypothesis import given, settings
from hypothesis.stateful import RuleBasedStateMachine, initialize, invariant, rule, run_state_machine_as_test

from src.rebact_harness.env.craft_env import (
    CraftCommand,
    CraftEnvironment,
    CraftTask,
    Inventory,
    ItemStack,
    is_rejection,
    parse_command,
    step,
)
from src.rebact_harness.errors import UnparseableCommand

from .conftest import make_torch_task

ITEMS = ["oak planks", "birch planks", "coal", "stick", "torch", "planks", "diamond"]
COMMANDS = st.one_of(
    st.builds(lambda n, item: f"get {n} {item}", st.integers(1, 5), st.sampled_from(ITEMS)),
    st.sampled_from([
        "craft 4 stick using 2 oak planks",
        "craft 4 stick using 2 planks",
        "craft 4 stick using 3 oak planks",
        "craft 4 torch using 1 stick, 1 coal",
        "craft 1 torch using 1 stick, 1 coal",
        "inventory",
        "think: what next",
    ]),
    st.text(max_size=30),
)


class CraftingMachine(RuleBasedStateMachine):
    @initialize()
    def setup(self):
        self.env = CraftEnvironment(make_torch_task())
        self.crafted_torches = 0

    @rule(command=COMMANDS)
    def execute(self, command):
        before = self.env.inventory
        observation = self.env.execute(command)

        if is_rejection(observation):
            assert self.env.inventory == before
        try:
            parsed = parse_command(command)
        except UnparseableCommand:
            assert observation.startswith("Could not execute")
            return
        if parsed.kind in ("inventory", "think"):
            assert self.env.inventory == before
        if observation == "Crafted 4 torch":
            self.crafted_torches += 1

    @invariant()
    def counts_are_positive(self):
        assert all(count > 0 for _, count in self.env.inventory.items())

    @invariant()
    def torches_only_come_from_crafting(self):
        assert self.env.inventory.count("torch") == 4 * self.crafted_torches


def test_crafting_state_machine():
    run_state_machine_as_test(
        CraftingMachine,
        settings=settings(max_examples=50, stateful_step_count=30, deadline=None),
    )


@given(st.text(max_size=60))
def test_execute_never_raises(text):
    env = CraftEnvironment(make_torch_task())

    observation = env.execute(text)

    assert isinstance(observation, str) and observation


FAMILIES = {
    "plank": ["ash plank", "elm plank", "fir plank"],
    "metal": ["copper metal", "iron metal"],
}
BASICS = ["clay", "string", "wool"]
PARTS = ["part a", "part b", "part c"]
ALL_ITEMS = BASICS + PARTS + [item for generic, specs in FAMILIES.items() for item in [generic] + specs]


@st.composite
def recipe_books(draw):
    """Acyclic books of up to three recipes; no two slots of a recipe share a candidate."""
    n_parts = draw(st.integers(1, 3))
    recipes = []
    for i in range(n_parts):
        pool = [[generic] + specs for generic, specs in FAMILIES.items()]
        pool += [[basic] for basic in BASICS] + [[part] for part in PARTS[:i]]
        chosen = draw(st.lists(st.sampled_from(range(len(pool))), min_size=1, max_size=4, unique=True))
        ingredients = [
            {"item": draw(st.sampled_from(pool[k])), "count": draw(st.integers(1, 4))} for k in chosen
        ]
        recipes.append({"output": {"item": PARTS[i], "count": draw(st.integers(1, 4))}, "ingredients": ingredients})
    return CraftTask(
        id="book",
        goal={"item": PARTS[n_parts - 1], "count": 1},
        recipes=recipes,
        gettable=BASICS + [spec for specs in FAMILIES.values() for spec in specs],
        generics=FAMILIES,
    )


INVENTORIES = st.dictionaries(st.sampled_from(ALL_ITEMS), st.integers(0, 6)).map(Inventory)


def _stated_inputs(data, task, recipe):
    generic_map = task.generic_map
    return [
        ItemStack(item=data.draw(st.sampled_from(generic_map.candidates(slot.item))), count=slot.count)
        for slot in recipe.ingredients
    ]


@settings(max_examples=300, deadline=None)
@given(recipe_books(), INVENTORIES, st.data())
def test_craft_conserves_items(task, inv, data):
    recipe = data.draw(st.sampled_from(task.recipes))
    command = CraftCommand(target=recipe.output, inputs=_stated_inputs(data, task, recipe))

    observation, after = step(task, inv, command)

    if is_rejection(observation):
        assert after == inv
        return
    assert observation == f"Crafted {recipe.output.render()}"
    assert after.count(recipe.output.item) == inv.count(recipe.output.item) + recipe.output.count
    touched = {recipe.output.item}
    for slot in recipe.ingredients:
        candidates = task.generic_map.candidates(slot.item)
        consumed = {c: inv.count(c) - after.count(c) for c in candidates}
        assert all(n >= 0 for n in consumed.values())
        assert sum(consumed.values()) == slot.count
        # earlier candidates are used up before later ones are touched
        for i, candidate in enumerate(candidates):
            if consumed[candidate]:
                assert all(after.count(c) == 0 for c in candidates[:i])
        touched.update(candidates)
    for item in ALL_ITEMS:
        if item not in touched:
            assert after.count(item) == inv.count(item)
    assert after.total() == inv.total() - sum(s.count for s in recipe.ingredients) + recipe.output.count


@settings(max_examples=300, deadline=None)
@given(recipe_books(), INVENTORIES, st.data())
def test_craft_succeeds_exactly_when_every_slot_is_covered(task, inv, data):
    recipe = data.draw(st.sampled_from(task.recipes))
    command = CraftCommand(target=recipe.output, inputs=_stated_inputs(data, task, recipe))
    covered = all(
        sum(inv.count(c) for c in task.generic_map.candidates(slot.item)) >= slot.count
        for slot in recipe.ingredients
    )

    observation, _ = step(task, inv, command)

    assert is_rejection(observation) != covered


def _off_by(count, delta):
    return count + delta if count + delta > 0 else count + 1


@settings(max_examples=300, deadline=None)
@given(recipe_books(), INVENTORIES, st.data())
def test_craft_rejects_any_wrong_count(task, inv, data):
    recipe = data.draw(st.sampled_from(task.recipes))
    inputs = _stated_inputs(data, task, recipe)
    wrong = data.draw(st.integers(-1, len(inputs) - 1))
    delta = data.draw(st.sampled_from([-1, 1, 2]))
    target = recipe.output
    if wrong < 0:
        target = ItemStack(item=target.item, count=_off_by(target.count, delta))
    else:
        inputs[wrong] = ItemStack(item=inputs[wrong].item, count=_off_by(inputs[wrong].count, delta))

    observation, after = step(task, inv, CraftCommand(target=target, inputs=inputs))

    assert is_rejection(observation)
    assert after == inv
