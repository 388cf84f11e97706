"""Independent recount of the ranking metrics on fixtures/metrics, written to oracle.json.

Run from the repo root:
    python3 fixtures/recount_metrics.py
"""
import json
import math
from pathlib import Path

from nltk.stem.porter import PorterStemmer

ROOT = Path(__file__).resolve().parent / "metrics"
STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


def stems(words):
    return tuple(STEMMER.stem(w.lower()) for w in words)


def unique(seq):
    out = []
    for s in seq:
        if s and s not in out:
            out.append(s)
    return out


def contains(doc, phrase):
    n = len(phrase)
    return any(doc[i:i + n] == phrase for i in range(len(doc) - n + 1))


def f1(correct, n_pred, n_gold):
    if correct == 0:
        return 0.0
    p = correct / n_pred
    r = correct / n_gold
    return 2 * p * r / (p + r)


def main():
    gold = [json.loads(l) for l in open(ROOT / "gold.jsonl")]
    preds = {}
    for l in open(ROOT / "predictions.jsonl"):
        d = json.loads(l)
        preds[d["id"]] = d["phrases"]

    rows = []
    skipped = 0
    missing = 0
    for doc in gold:
        words = [t["form"].lower() for s in doc["sentences"] for t in s["tokens"]]
        doc_stems = stems(words)
        truth = unique([stems(k.split()) for k in doc["keyphrases"] if contains(doc_stems, stems(k.split()))])
        if doc["id"] not in preds:
            missing += 1
        predicted = unique([stems(p) for p in preds.get(doc["id"], [])])
        if not truth:
            skipped += 1
            continue
        hits = [1 if p in truth else 0 for p in predicted]

        at5 = hits[:5]
        filled5 = f1(sum(at5), 5, len(truth))
        unfilled = {k: f1(sum(hits[:k]), min(k, len(hits)), len(truth)) for k in (5, 10)}
        dcg = 0.0
        for i, h in enumerate(hits[:10], start=1):
            dcg += h / math.log2(i + 1)
        idcg = 0.0
        for i in range(1, min(10, len(truth)) + 1):
            idcg += 1 / math.log2(i + 1)
        rows.append({
            "id": doc["id"],
            "predicted": len(predicted),
            "truth": len(truth),
            "correct": sum(hits),
            "f1_at_m": f1(sum(hits), len(hits), len(truth)),
            "f1_at_5_filled": filled5,
            "f1_at_5": unfilled[5],
            "f1_at_10": unfilled[10],
            "ndcg_at_10": dcg / idcg,
        })

    def avg(key):
        return sum(r[key] for r in rows) / len(rows)

    oracle = {
        "documents": len(rows),
        "skipped_empty_truth": skipped,
        "missing_predictions": missing,
        "f1_at_m": avg("f1_at_m"),
        "f1_at_5_filled": avg("f1_at_5_filled"),
        "f1_at_5": avg("f1_at_5"),
        "f1_at_10": avg("f1_at_10"),
        "ndcg_at_10": avg("ndcg_at_10"),
        "avg_predicted": avg("predicted"),
        "avg_correct": avg("correct"),
        "rows": rows,
    }
    (ROOT / "oracle.json").write_text(json.dumps(oracle, indent=2) + "\n")


if __name__ == "__main__":
    main()
