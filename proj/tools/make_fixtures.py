#!/usr/bin/env python3
"""Generate the recorded-decision pipeline fixtures.

Writes data/fixtures/pipeline/:
  datasets.json             dataset -> lang, format, file
  sources/<dataset>.jsonl   raw QA / MD records
  extraction.jsonl          recorded extractor replies (decision_log)
  filter.jsonl              recorded judge replies (decision_log)
  corrections.jsonl         human correction decisions (correction_decision)

Counts per stage follow the stage targets below; category labels follow the
per-leaf high/middle counts in data/taxonomy.tsv.
"""
import argparse
import json
import os
import random

# dataset, lang, format, records, extractor rejects
DATASETS = [
    ("epitome", "en", "qa", 500, 41),
    ("mhp_reddit", "en", "qa", 1000, 82),
    ("psych8k", "en", "qa", 1000, 82),
    ("esconv", "en", "md", 1000, 81),
    ("extes", "en", "md", 500, 41),
    ("psyqa", "zh", "qa", 1000, 37),
    ("smile", "zh", "md", 1100, 40),
]

# lang -> extracted, llm kept, finalized high, finalized middle
TARGETS = {
    "en": (3673, 2792, 331, 1377),
    "zh": (2023, 1566, 324, 769),
}

EN_AGES = ["19", "23", "27", "31", "35", "42", "48", "55", ""]
EN_GENDERS = ["Female", "Male", ""]
EN_JOBS = ["student", "nurse", "software engineer", "teacher", "cashier", "accountant", "unemployed", ""]
ZH_AGES = ["18岁", "22岁", "26岁", "30岁", "37岁", "45岁", ""]
ZH_GENDERS = ["女", "男", ""]
ZH_JOBS = ["学生", "护士", "程序员", "教师", "销售", "会计", ""]


def header(schema):
    return json.dumps({"schema": schema, "version": 1}, separators=(",", ":"))


def dump(obj):
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), sort_keys=True)


def cat(path):
    return {"l1": path[0], "l2": path[1], "l3": path[2]}


def load_taxonomy(path):
    leaves = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#") or line.startswith("l1\t"):
                continue
            l1, l2, l3, hi, mid = line.split("\t")
            leaves.append(((l1, l2, l3), int(hi), int(mid)))
    return leaves


def source_body(fmt, lang, topic, rng):
    if lang == "en":
        q = f"I need some advice. Lately my life has been hard because of {topic.lower()}. I can't sleep well."
        a = "That sounds really hard. Would you like to talk about what happened?"
        turns = [("seeker", q), ("supporter", a), ("seeker", "It has been going on for months."),
                 ("supporter", "Thank you for sharing that with me.")]
    else:
        q = f"最近我因为{topic}的事情很烦恼，晚上也睡不好，不知道该怎么办。"
        a = "听起来你最近压力很大，愿意多说说发生了什么吗？"
        turns = [("seeker", q), ("supporter", a), ("seeker", "这种情况已经持续好几个月了。"),
                 ("supporter", "谢谢你愿意告诉我这些。")]
    if fmt == "qa":
        return {"question": q, "answer": a}
    n = rng.choice([2, 4])
    return {"dialogue": [{"speaker": s, "text": t} for s, t in turns[:n]]}


def extractor_reply(lang, topic, rng):
    if lang == "en":
        age, gender, job = rng.choice(EN_AGES), rng.choice(EN_GENDERS), rng.choice(EN_JOBS)
        problem = f"The seeker is struggling with {topic.lower()} and has trouble sleeping."
        lines = [f"Age: {age}" if age else None, f"Gender: {gender}" if gender else None,
                 f"Occupation: {job}" if job else None, f"Problem: {problem}"]
    else:
        age, gender, job = rng.choice(ZH_AGES), rng.choice(ZH_GENDERS), rng.choice(ZH_JOBS)
        problem = f"求助者因为{topic}而烦恼，睡眠也受到影响。"
        lines = [f"年龄：{age}" if age else None, f"性别：{gender}" if gender else None,
                 f"职业：{job}" if job else None, f"问题：{problem}"]
    return "\n".join(l for l in lines if l)


REJECT_REPLIES = {
    "en": ["No seeker information can be extracted from this record.", "The text does not describe a person."],
    "zh": ["无法从该记录中提取求助者信息。", "该文本没有描述具体的人。"],
}
KEEP_REPLIES = {
    "en": ["keep", "Verdict: keep", "has event: a concrete life event is described", "Yes."],
    "zh": ["保留", "结论：有事件", "保留：描述了具体事件"],
}
DROP_REPLIES = {
    "en": ["drop: only emotions are described", "no event", "Verdict: drop"],
    "zh": ["删除：只有情绪描述", "无事件"],
}
UNCLEAR_REPLIES = {
    "en": ["The card is hard to judge without more context."],
    "zh": ["需要更多信息才能判断。"],
}


def make(root, seed):
    rng = random.Random(seed)
    leaves = load_taxonomy(os.path.join(root, "data", "taxonomy.tsv"))
    out = os.path.join(root, "data", "fixtures", "pipeline")
    os.makedirs(os.path.join(out, "sources"), exist_ok=True)

    # category slots per lang and quality, from the per-leaf counts
    high_slots = [path for path, hi, _ in leaves for _ in range(hi)]
    mid_slots = [path for path, _, mid in leaves for _ in range(mid)]
    rng.shuffle(high_slots)
    rng.shuffle(mid_slots)
    en_hi, en_mid = TARGETS["en"][2], TARGETS["en"][3]
    slots = {
        "en": [("high", p) for p in high_slots[:en_hi]] + [("middle", p) for p in mid_slots[:en_mid]],
        "zh": [("high", p) for p in high_slots[en_hi:]] + [("middle", p) for p in mid_slots[en_mid:]],
    }
    assert len(slots["zh"]) == TARGETS["zh"][2] + TARGETS["zh"][3]
    for lang in slots:
        rng.shuffle(slots[lang])

    datasets = {}
    extraction, filtering, corrections = [], [], []
    cards_by_lang = {"en": [], "zh": []}
    for name, lang, fmt, count, rejects in DATASETS:
        datasets[name] = {"lang": lang, "format": fmt, "file": f"sources/{name}.jsonl"}
        reject_idx = set(rng.sample(range(count), rejects))
        with open(os.path.join(out, "sources", f"{name}.jsonl"), "w", encoding="utf-8") as f:
            for i in range(count):
                card_id = f"{name}-{i:05d}"
                topic = rng.choice(leaves)[0][2]
                f.write(dump(source_body(fmt, lang, topic, rng)) + "\n")
                if i in reject_idx:
                    extraction.append({"card_id": card_id, "verdict": "reject",
                                       "raw": rng.choice(REJECT_REPLIES[lang])})
                else:
                    extraction.append({"card_id": card_id, "verdict": "ok",
                                       "raw": extractor_reply(lang, topic, rng)})
                    cards_by_lang[lang].append(card_id)

    for lang, (extracted, kept, hi, mid) in TARGETS.items():
        cards = cards_by_lang[lang]
        assert len(cards) == extracted, (lang, len(cards), extracted)
        kept_ids = set(rng.sample(cards, kept))
        not_kept = [c for c in cards if c not in kept_ids]
        unclear = set(rng.sample(not_kept, max(1, len(not_kept) // 50)))
        for c in cards:
            if c in kept_ids:
                filtering.append({"card_id": c, "verdict": "keep", "raw": rng.choice(KEEP_REPLIES[lang])})
            elif c in unclear:
                filtering.append({"card_id": c, "verdict": "needs_human", "raw": rng.choice(UNCLEAR_REPLIES[lang])})
            else:
                filtering.append({"card_id": c, "verdict": "drop", "raw": rng.choice(DROP_REPLIES[lang])})

        kept_sorted = [c for c in cards if c in kept_ids]
        final_ids = set(rng.sample(kept_sorted, hi + mid))
        lang_slots = iter(slots[lang])
        for c in kept_sorted:
            a, b = "crowd-a" + str(rng.randint(1, 6)), "crowd-b" + str(rng.randint(1, 6))
            if c not in final_ids:
                other = {"quality": rng.choice(["middle", "high"]),
                         "category": cat(rng.choice(leaves)[0])}
                labels = [{"annotator_id": a, "quality": "invalid", "category": None},
                          dict(annotator_id=b, **other) if rng.random() < 0.3 else
                          {"annotator_id": b, "quality": "invalid", "category": None}]
                corrections.append({"card_id": c, "first_labels": labels,
                                    "resolution": {"quality": "invalid", "category": None},
                                    "resolver": "agreement"})
                continue
            quality, path = next(lang_slots)
            roll = rng.random()
            if roll < 0.75:
                labels = [{"annotator_id": a, "quality": quality, "category": cat(path)},
                          {"annotator_id": b, "quality": quality, "category": cat(path)}]
                resolver = "agreement"
            elif roll < 0.9:
                other_q = "middle" if quality == "high" else "high"
                labels = [{"annotator_id": a, "quality": quality, "category": cat(path)},
                          {"annotator_id": b, "quality": other_q, "category": cat(path)}]
                resolver = "third_party"
            else:
                other_path = rng.choice(leaves)[0]
                if other_path == path:
                    other_path = leaves[0][0] if leaves[0][0] != path else leaves[1][0]
                labels = [{"annotator_id": a, "quality": quality, "category": cat(other_path)},
                          {"annotator_id": b, "quality": quality, "category": cat(path)}]
                resolver = "third_party"
            corrections.append({"card_id": c, "first_labels": labels,
                                "resolution": {"quality": quality, "category": cat(path)},
                                "resolver": resolver})

    with open(os.path.join(out, "datasets.json"), "w", encoding="utf-8") as f:
        json.dump(datasets, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    for fname, schema, rows in [("extraction.jsonl", "decision_log", extraction),
                                ("filter.jsonl", "decision_log", filtering),
                                ("corrections.jsonl", "correction_decision", corrections)]:
        with open(os.path.join(out, fname), "w", encoding="utf-8") as f:
            f.write(header(schema) + "\n")
            for r in rows:
                f.write(dump(r) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", default=os.path.join(os.path.dirname(os.path.abspath(__file__)), ".."))
    ap.add_argument("--seed", type=int, default=20240501)
    args = ap.parse_args()
    make(os.path.abspath(args.root), args.seed)


if __name__ == "__main__":
    main()
