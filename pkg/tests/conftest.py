import pytest

from src.rebact_harness.env.craft_env import CraftTask

PLANKS = {"planks": ["oak planks", "birch planks", "spruce planks", "dark oak planks"]}


def make_beehive_task(task_id="beehive", gettable=("oak planks", "honeycomb")):
    return CraftTask(
        id=task_id,
        goal={"item": "beehive", "count": 1},
        recipes=[{
            "output": {"item": "beehive", "count": 1},
            "ingredients": [{"item": "planks", "count": 6}, {"item": "honeycomb", "count": 3}],
        }],
        gettable=list(gettable),
        generics=PLANKS,
        exemplar_block="> get 1 example\nGot 1 example",
    )


def make_torch_task(task_id="torch"):
    return CraftTask(
        id=task_id,
        goal={"item": "torch", "count": 4},
        recipes=[
            {"output": {"item": "torch", "count": 4},
             "ingredients": [{"item": "stick", "count": 1}, {"item": "coal", "count": 1}]},
            {"output": {"item": "stick", "count": 4},
             "ingredients": [{"item": "planks", "count": 2}]},
        ],
        gettable=["oak planks", "coal"],
        generics=PLANKS,
    )


@pytest.fixture
def beehive_task():
    return make_beehive_task()


@pytest.fixture
def torch_task():
    return make_torch_task()
