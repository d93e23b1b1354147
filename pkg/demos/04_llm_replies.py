"""Turning language-model replies into numbers, fully offline.

Recorded replies are replayed through the same parsers a live endpoint
would feed. Ambiguity verdicts come from ITEMS/LOCATIONS lines when the
model follows the requested footer, and from mentions of scene objects
otherwise.

Run: python3 demos/04_llm_replies.py
"""

import json
import math
from pathlib import Path

from cure.errors import ParseError
from cure.llm import FixtureBackend, parse_verbalized_confidence, query_ambiguity, render_template, yes_no_confidence

fixtures = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "ambiguity_transcripts.jsonl"

print(render_template("vanilla", ["Coke", "Sprite", "apple"], "give me something to drink"))
print("-" * 60)

backend = FixtureBackend.from_jsonl(fixtures)
for line in fixtures.read_text().splitlines():
    row = json.loads(line)
    try:
        v = query_ambiguity(backend, row["scene"], row["task"])
        print(f"{row['task']!r:40} -> a_amb={v.a_amb} items={v.items_chosen} locations={v.locations_chosen} ({v.parse_mode})")
    except ParseError as exc:
        print(f"{row['task']!r:40} -> unparseable: {exc}")

print("-" * 60)
for reply in ["Action: pick-up Coke\nConfidence: 85%", "Final Answer and Overall Confidence (0-100): bring Sprite, 60%"]:
    print(f"{reply.splitlines()[-1]!r} -> {parse_verbalized_confidence(reply)}")
print("yes/no log-probs (ln 9, 0) ->", round(yes_no_confidence(math.log(9), 0.0), 6))
