import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.rebact_harness.errors import FormatError, TemplateError
from src.rebact_harness.protocol.reflection import (
    MODIFIED_EQUALS_PREVIOUS,
    VERDICT_ACTION_MISMATCH,
    PromptTask,
    ReflectionDecision,
    SlotVerdict,
    build_prompt,
    decide_executed_action,
    parse_action_line,
    parse_reflection,
    render_history,
    render_reflection,
)
from src.rebact_harness.protocol.templates import load_template, load_template_file, parse_template


# Parsing

def test_parse_textcraft_wrong_verdict():
    reply = ("Previous action 'craft 1 beehive using 6 planks, 3 honeycomb' is wrong. "
             "It should be modified to: craft 1 beehive using 6 oak planks, 3 honeycomb.\n"
             "The next action is: inventory.")

    decision = parse_reflection(reply, "textcraft", expected_verdicts=1)

    assert decision.slots == [SlotVerdict(
        action="craft 1 beehive using 6 planks, 3 honeycomb",
        verdict="wrong",
        modified="craft 1 beehive using 6 oak planks, 3 honeycomb",
    )]
    assert decision.next_action == "inventory"


def test_parse_alfworld_correct_verdict():
    reply = ("Previous action 'go to desk 1' is correct. "
             "To fix this mistake, I should execute: go to desk 1.\n"
             "The next action is: take pen 1 from desk 1.")

    decision = parse_reflection(reply, "alfworld")

    assert decision.slots[0].verdict == "correct"
    assert decision.slots[0].modified == "go to desk 1"
    assert decision.next_action == "take pen 1 from desk 1"


def test_parse_webshop_window_of_two():
    reply = ("Previous action search[red shoes] is correct. This action should be modified to: search[red shoes]\n"
             "Previous action click[item 3] is wrong. This action should be modified to: click[item 2]\n"
             "The next action is: click[buy now]")

    decision = parse_reflection(reply, "webshop", expected_verdicts=2)

    assert [slot.verdict for slot in decision.slots] == ["correct", "wrong"]
    assert decision.slots[1].modified == "click[item 2]"
    assert decision.next_action == "click[buy now]"


def test_verdicts_are_case_insensitive():
    reply = ("Previous action 'get 1 stick' is WRONG. It should be modified to: get 2 stick.\n"
             "The next action is: inventory.")

    assert parse_reflection(reply, "textcraft").slots[0].verdict == "wrong"


def test_first_step_reply_has_no_verdicts():
    decision = parse_reflection("  The next action is: get 6 oak planks.\n", "textcraft", expected_verdicts=0)

    assert decision.slots == []
    assert decision.next_action == "get 6 oak planks"


@pytest.mark.parametrize("reply", [
    "get 6 oak planks",
    "The next action is: inventory.\nThe next action is: get 1 stick.",
    "Previous action 'get 1 stick' is wrong.\nThe next action is: inventory.",
    "Previous action 'get 1 stick' was wrong.\nThe next action is: inventory.",
    "I think so.\nThe next action is: inventory.",
    "The next action is: inventory.\nDone.",
    "The next action is: .",
])
def test_malformed_replies(reply):
    with pytest.raises(FormatError):
        parse_reflection(reply, "textcraft")


def test_verdict_count_must_match_window():
    reply = "The next action is: inventory."

    with pytest.raises(FormatError, match="expected 1 verdicts"):
        parse_reflection(reply, "textcraft", expected_verdicts=1)


def test_formats_do_not_cross():
    textcraft_reply = ("Previous action 'get 1 stick' is wrong. It should be modified to: get 2 stick.\n"
                       "The next action is: inventory.")

    with pytest.raises(FormatError):
        parse_reflection(textcraft_reply, "alfworld")
    with pytest.raises(FormatError):
        parse_reflection(textcraft_reply, "webshop")


def test_webshop_actions_must_be_bracketed():
    with pytest.raises(FormatError):
        parse_reflection("The next action is: buy it", "webshop")


def test_unknown_format():
    with pytest.raises(FormatError):
        parse_reflection("The next action is: inventory.", "minesweeper")


def test_render_reflection_textcraft():
    decision = ReflectionDecision(
        slots=[SlotVerdict(action="get 1 stick", verdict="wrong", modified="get 2 stick")],
        next_action="inventory",
    )

    assert render_reflection(decision, "textcraft") == (
        "Previous action 'get 1 stick' is wrong. It should be modified to: get 2 stick.\n"
        "The next action is: inventory."
    )


_ACTION = st.from_regex(r"[a-z][a-z0-9 ,]{0,30}[a-z0-9]", fullmatch=True)
_BRACKETED_ACTION = st.builds(
    lambda verb, argument: f"{verb}[{argument}]",
    st.sampled_from(["search", "click", "buy_now"]),
    st.from_regex(r"[a-z0-9 ,]{0,20}", fullmatch=True),
)
_ACTIONS = {"textcraft": _ACTION, "alfworld": _ACTION, "webshop": _BRACKETED_ACTION}


@settings(max_examples=1000)
@given(format_id=st.sampled_from(sorted(_ACTIONS)), data=st.data())
def test_rendered_decisions_parse_back(format_id, data):
    action = _ACTIONS[format_id]
    slots = data.draw(st.lists(st.tuples(action, st.sampled_from(["correct", "wrong"]), action), max_size=3))
    next_action = data.draw(action)
    decision = ReflectionDecision(
        slots=[SlotVerdict(action=a, verdict=v, modified=m) for a, v, m in slots],
        next_action=next_action,
    )

    parsed = parse_reflection(render_reflection(decision, format_id), format_id,
                              expected_verdicts=len(slots))

    assert parsed.slots == decision.slots
    assert parsed.next_action == decision.next_action


# Choosing the executed action

def _decision(*slots, next_action="inventory"):
    return ReflectionDecision(
        slots=[SlotVerdict(action=a, verdict=v, modified=m) for a, v, m in slots],
        next_action=next_action,
    )


def test_correct_verdicts_execute_next():
    choice = decide_executed_action(_decision(("get 1 stick", "correct", "get 1 stick")), ["get 1 stick"])

    assert choice.source == "next"
    assert choice.action == "inventory"
    assert choice.violations == []


def test_wrong_verdict_executes_modification():
    choice = decide_executed_action(_decision(("get 1 stick", "wrong", "get 2 stick")), ["get 1 stick"])

    assert choice.source == "modified"
    assert choice.action == "get 2 stick"
    assert choice.slot == 0
    assert choice.discarded_next == "inventory"


def test_earliest_wrong_slot_wins():
    decision = _decision(("a", "wrong", "a2"), ("b", "wrong", "b2"))

    choice = decide_executed_action(decision, ["a", "b"])

    assert choice.action == "a2"
    assert choice.slot == 0


def test_modification_equal_to_previous_is_skipped():
    decision = _decision(("get 1 stick", "wrong", " get 1 stick "))

    choice = decide_executed_action(decision, ["get 1 stick"])

    assert choice.source == "next"
    assert choice.violations == [MODIFIED_EQUALS_PREVIOUS]


def test_reviewed_action_mismatch_is_flagged():
    decision = _decision(("get 9 stick", "wrong", "get 2 stick"))

    choice = decide_executed_action(decision, ["get 1 stick"])

    assert choice.source == "modified"
    assert VERDICT_ACTION_MISMATCH in choice.violations


def test_parse_action_line():
    assert parse_action_line("\n  get 1 stick \n") == "get 1 stick"
    with pytest.raises(FormatError):
        parse_action_line("   ")
    with pytest.raises(FormatError):
        parse_action_line("get 1 stick\ninventory")


# Prompt assembly

def test_first_prompt_has_no_reflection(beehive_task):
    built = build_prompt(load_template("textcraft"), beehive_task, [], window=1)

    assert built.reflected == []
    assert "Please decide the most appropriate next action." in built.text
    assert "needs to be modified" not in built.text
    assert built.text.index("> get 1 example") < built.text.index("Goal: craft 1 beehive.")


def test_reflection_prompt_reviews_last_action(beehive_task):
    history = [("get 6 oak planks", "Got 6 oak planks"), ("get 1 beehive", "Could not find beehive")]

    built = build_prompt(load_template("textcraft"), beehive_task, history, window=3)

    # textcraft always reviews one action
    assert built.reflected == ["get 1 beehive"]
    assert not built.clamped
    assert "previous action 'get 1 beehive' needs to be modified" in built.text
    assert built.text.endswith("> get 1 beehive\nCould not find beehive")
    instruction = built.text.index("Please decide whether")
    assert instruction < built.text.index("> get 6 oak planks")


def test_reminder_is_appended(beehive_task):
    built = build_prompt(load_template("textcraft"), beehive_task, [], window=1)

    retry = built.with_reminder()

    assert retry.startswith(built.text)
    assert retry.endswith('You must reply in this format: "The next action is: [action]."')


def test_webshop_window_is_clamped():
    task = PromptTask(description="Instruction: find red shoes under 50 dollars")
    history = [("search[red shoes]", "[Back to Search] [item 1] [item 2]")]

    built = build_prompt(load_template("webshop"), task, history, window=3)

    assert built.reflected == ["search[red shoes]"]
    assert built.clamped
    assert "any of the previous 1 actions" in built.text
    assert "Previous action search[red shoes] is [correct or wrong]." in built.text


def test_webshop_window_of_two():
    task = PromptTask(description="Instruction: find red shoes")
    history = [("search[a]", "obs a"), ("click[b]", "obs b"), ("click[c]", "obs c")]

    built = build_prompt(load_template("webshop"), task, history, window=2)

    assert built.reflected == ["click[b]", "click[c]"]
    assert built.text.count("is [correct or wrong]") == 2


def test_react_prompt_never_reflects(beehive_task):
    history = [("get 6 oak planks", "Got 6 oak planks")]

    built = build_prompt(load_template("react"), beehive_task, history, window=1)

    assert built.reflected == []
    assert "Reply with your next action only" in built.text


def test_window_must_be_positive(beehive_task):
    with pytest.raises(TemplateError):
        build_prompt(load_template("textcraft"), beehive_task, [], window=0)


def test_render_history():
    assert render_history([("a", "x"), ("b", "y")]) == "> a\nx\n> b\ny"


# Templates

def test_shipped_templates_load():
    for format_id in ("textcraft", "alfworld", "webshop"):
        template = load_template(format_id)
        assert template.reflective
    assert load_template("textcraft").fixed_window == 1
    assert load_template("webshop").fixed_window is None
    assert not load_template("react").reflective


def test_unknown_template():
    with pytest.raises(TemplateError):
        load_template("minesweeper")


def test_template_missing_slot():
    text = ("=== prompt ===\n{exemplars} {task} {history}\n"
            "=== first_step ===\n{reply_format}\n"
            "=== first_reply_format ===\nx\n"
            "=== reminder ===\n{reply_format}\n")

    with pytest.raises(TemplateError, match="instruction"):
        parse_template(text, "custom")


def test_template_missing_section():
    with pytest.raises(TemplateError, match="missing section"):
        parse_template("=== prompt ===\n{exemplars} {task} {instruction} {history}\n", "custom")


def test_template_file(tmp_path):
    path = tmp_path / "custom.txt"
    path.write_text(
        "=== prompt ===\n{exemplars}\n{task}\n{instruction}\n{history}\n"
        "=== first_step ===\nGo: {reply_format}\n"
        "=== first_reply_format ===\nan action\n"
        "=== reminder ===\nUse {reply_format}\n",
        encoding="utf-8",
    )

    template = load_template_file(path)

    assert template.format_id == "custom"
    assert template.first_step == "Go: {reply_format}"
    with pytest.raises(TemplateError):
        load_template_file(tmp_path / "absent.txt")
