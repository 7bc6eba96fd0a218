#!/usr/bin/env python3
"""Regenerates the synthetic IRF-schema fixtures in this directory.

The 60-post fixture has contingency (n00, n01, n10, n11) = (18, 9, 20, 13),
the closest 60-post table to the proportions of the full IRF dataset.
"""
import csv
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
rng = random.Random(20231021)

OPENERS = [
    "Work has been rough lately.",
    "I moved to a new city last spring.",
    "My exams start next week.",
    "Nothing really changed this month.",
    "I keep thinking about the last few years.",
    "Today was another long day.",
    "I started a new job in March.",
    "Winter always hits me hard.",
]
NEUTRAL = [
    "I went for a walk and watched the rain.",
    "I cooked dinner and cleaned the kitchen.",
    "The bus was late again, which was annoying.",
    "I played some games with my cousin.",
    "Still trying to fix my sleep schedule.",
    "I finished a book about old ships.",
]
TBE_CUES = [
    "Feel alone", "nobody talks to me", "I have no friends",
    "completely isolated from everyone", "no one ever calls me",
    "I am always left out", "nobody would notice if I vanished",
    "I have no one to talk to", "lonely every single night",
    "my friends stopped inviting me",
]
PBU_CUES = [
    "I am a burden", "everyone would be better off without me",
    "I only cause problems", "my family has to carry me",
    "I ruin everything for them", "I am useless to everyone",
    "they would be happier if I was gone", "I drain everyone around me",
    "I am just dead weight",
]


def make_post(idx, tbe, pbu):
    parts = [rng.choice(OPENERS)]
    tbe_cue = pbu_cue = ""
    if tbe:
        tbe_cue = rng.choice(TBE_CUES)
        parts.append(f"Honestly I {tbe_cue}, even when people are around."
                     if tbe_cue.startswith("Feel") else f"Honestly, {tbe_cue}.")
    parts.append(rng.choice(NEUTRAL))
    if pbu:
        pbu_cue = rng.choice(PBU_CUES)
        parts.append(f"Sometimes I think {pbu_cue}.")
    text = " ".join(parts)
    # gold cues are stored lowercased, as annotators often do
    return {
        "id": f"p{idx:03d}",
        "text": text,
        "tbe_label": tbe,
        "pbu_label": pbu,
        "tbe_cue": tbe_cue.lower() if tbe else "",
        "pbu_cue": pbu_cue,
    }


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "text", "tbe_label", "pbu_label", "tbe_cue", "pbu_cue"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            obj = {k: v for k, v in r.items() if not (k.endswith("_cue") and v == "")}
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def main():
    counts = {(0, 0): 18, (0, 1): 9, (1, 0): 20, (1, 1): 13}
    labels = [pair for pair, n in counts.items() for _ in range(n)]
    rng.shuffle(labels)
    rows = [make_post(i + 1, t, p) for i, (t, p) in enumerate(labels)]
    # a couple of rows exercising CSV quoting
    rows[3]["text"] = rows[3]["text"] + ' She said "hang in there", twice.'
    rows[7]["text"] = rows[7]["text"] + "\nPosting from my phone, sorry."
    write_csv(HERE / "irf_fixture.csv", rows)
    write_jsonl(HERE / "irf_fixture.jsonl", rows)

    small = [make_post(100 + i, t, p) for i, (t, p) in enumerate(
        [(0, 0), (1, 0), (0, 1), (1, 1)] * 3)]
    small[5]["tbe_label"] = 2  # row 7 in the file (header is row 1)
    write_csv(HERE / "twelve_rows_one_bad.csv", small)


if __name__ == "__main__":
    main()
