"""Prompt assembly for each strategy and mapping free text back to a candidate."""

from gazesom.data import QuestionRecord
from gazesom.prompts import STRATEGIES, build_prompt, parse_answer

rec = QuestionRecord(
    id="demo",
    clip_id="demo-clip",
    question_text="What object will the person interact with next, ignoring ongoing interactions?",
    candidates=("The lid.", "The pot with handle.", "The egg.", "The pan.", "The glass bowl."),
    correct_index=4,
)

print(build_prompt(rec, STRATEGIES["som_gaze"]).text)
print()

for name, flags in STRATEGIES.items():
    text = build_prompt(rec, flags).text
    print(f"{name:<10} {len(text):4d} chars, som={flags.som} gaze={flags.gaze}")
print()

# parsing is by name: normalized, whole words, longest candidate wins
for reply in [
    "The glass bowl.",
    "I think the person will grab the egg next",
    "Probably the pot with handle, not the pan",
    "the pantry door",
    "banana",
]:
    k = parse_answer(reply, rec.candidates)
    picked = "abstain" if k is None else rec.candidates[k]
    print(f"{reply!r:45} -> {picked}")
