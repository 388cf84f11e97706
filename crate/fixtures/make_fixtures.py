"""Regenerate the annotated fixtures from the hand-written parses below.

Stems use NLTK's Porter stemmer in original-algorithm mode. Run from the repo root:
    python3 fixtures/make_fixtures.py
"""
import json
from pathlib import Path

from nltk.stem.porter import PorterStemmer

ROOT = Path(__file__).resolve().parent
STEMMER = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


def stem(form):
    low = form.lower()
    return STEMMER.stem(low) if low.isascii() and low.isalpha() else low


def sentence(line):
    """`form/UPOS/head/deprel` tokens separated by spaces."""
    tokens = []
    for item in line.split():
        form, upos, head, deprel = item.rsplit("/", 3)
        form = "<digit>" if form.isdigit() else form
        tokens.append({"form": form, "stem": stem(form), "upos": upos, "head": int(head), "deprel": deprel})
    return {"tokens": tokens}


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def template(words):
    """Six-token clause: modifier subject verb modifier object period."""
    a, b, c, d, e = words.split()
    return sentence(f"{a}/ADJ/2/amod {b}/NOUN/3/nsubj {c}/VERB/0/root {d}/NOUN/5/compound {e}/NOUN/3/obj ./PUNCT/3/punct")


SYNTHETIC = [
    ("syn-1", ["neural parsers improve sentence segmentation", "graph kernels measure protein similarity"],
     ["neural parsers", "graph kernels", "protein similarity"]),
    ("syn-2", ["quantum annealing solves scheduling problems", "sparse solvers accelerate fluid simulation"],
     ["quantum annealing", "sparse solvers", "fluid simulation"]),
    ("syn-3", ["wavelet transforms compress seismic signals", "adaptive thresholds remove background noise"],
     ["wavelet transforms", "seismic signals"]),
    ("syn-4", ["reinforcement learning controls robot arms", "reward shaping speeds model training"],
     ["reinforcement learning", "reward shaping"]),
    ("syn-5", ["topic models summarize news archives", "citation graphs reveal author influence"],
     ["topic models", "citation graphs", "news archives"]),
]

ABSTRACTS = [
    {
        "id": "abs-1",
        "title": "Dependency graphs for keyphrase generation",
        "abstract": "We encode dependency graphs with convolutional networks. The model copies salient words from the source text.",
        "keyphrases": ["dependency graphs", "keyphrase generation", "convolutional networks", "copy mechanism"],
        "parses": [
            "Dependency/NOUN/2/compound graphs/NOUN/0/root for/ADP/5/case keyphrase/NOUN/5/compound generation/NOUN/2/nmod",
            "We/PRON/2/nsubj encode/VERB/0/root dependency/NOUN/4/compound graphs/NOUN/2/obj with/ADP/7/case "
            "convolutional/ADJ/7/amod networks/NOUN/2/obl ./PUNCT/2/punct",
            "The/DET/2/det model/NOUN/3/nsubj copies/VERB/0/root salient/ADJ/5/amod words/NOUN/3/obj from/ADP/9/case "
            "the/DET/9/det source/NOUN/9/compound text/NOUN/3/obl ./PUNCT/3/punct",
        ],
    },
    {
        "id": "abs-2",
        "title": "Sparse solvers for fluid simulation",
        "abstract": "Iterative solvers dominate the cost of fluid simulation. We precondition sparse systems with multigrid methods.",
        "keyphrases": ["sparse solvers", "fluid simulation", "multigrid methods", "preconditioning"],
        "parses": [
            "Sparse/ADJ/2/amod solvers/NOUN/0/root for/ADP/5/case fluid/NOUN/5/compound simulation/NOUN/2/nmod",
            "Iterative/ADJ/2/amod solvers/NOUN/3/nsubj dominate/VERB/0/root the/DET/5/det cost/NOUN/3/obj of/ADP/8/case "
            "fluid/NOUN/8/compound simulation/NOUN/5/nmod ./PUNCT/3/punct",
            "We/PRON/2/nsubj precondition/VERB/0/root sparse/ADJ/4/amod systems/NOUN/2/obj with/ADP/7/case "
            "multigrid/NOUN/7/compound methods/NOUN/2/obl ./PUNCT/2/punct",
        ],
    },
    {
        "id": "abs-3",
        "title": "Zeolite catalysts in 2023 refineries",
        "abstract": "Zeolite catalysts crack heavy oil. Their pores select small molecules.",
        "keyphrases": ["zeolite catalysts", "heavy oil", "shape selectivity"],
        "parses": [
            "Zeolite/NOUN/2/compound catalysts/NOUN/0/root in/ADP/5/case 2023/NUM/5/nummod refineries/NOUN/2/nmod",
            "Zeolite/NOUN/2/compound catalysts/NOUN/3/nsubj crack/VERB/0/root heavy/ADJ/5/amod oil/NOUN/3/obj ./PUNCT/3/punct",
            "Their/PRON/2/nmod:poss pores/NOUN/3/nsubj select/VERB/0/root small/ADJ/5/amod molecules/NOUN/3/obj ./PUNCT/3/punct",
        ],
    },
]

# (id, text, gold keyphrases, predictions or None when the prediction line is missing)
METRIC_DOCS = [
    ("m01", "graph neural networks learn node embeddings",
     ["graph neural networks", "node embeddings", "node embedding"],
     [["graph", "neural", "networks"], ["node", "embeddings"]]),
    ("m02", "sparse matrix factorization speeds recommender systems training",
     ["matrix factorization", "recommender systems", "collaborative filtering"],
     [["sparse", "matrix"], ["matrix", "factorization"], ["recommender", "system"], ["training"]]),
    ("m03", "convolutional kernels detect image edges and textures",
     ["image edges", "textures", "convolutional kernels"],
     []),
    ("m04", "protein folding simulations require molecular dynamics",
     ["protein folding", "molecular dynamics"],
     [["protein"], ["folding"], ["simulations"], ["require"], ["molecular"], ["protein", "folding"],
      ["dynamics"], ["folding", "simulations"], ["protein", "simulations"], ["require", "molecular"],
      ["molecular", "dynamics"], ["simulation"]]),
    ("m05", "quantum error correction protects logical qubits",
     ["quantum error correction", "logical qubits"],
     [["logical", "qubit"], ["logical", "qubits"], ["quantum", "error", "correction"], ["error"]]),
    ("m06", "the survey reviews methods",
     ["deep learning"],
     [["survey"], ["methods"]]),
    ("m07", "reinforcement learning agents explore sparse reward environments",
     ["reinforcement learning", "sparse reward", "exploration"],
     [["exploration"], ["agents"], ["reinforcement", "learning"], ["sparse", "rewards"], ["environments"]]),
    ("m08", "citation graphs reveal scholarly influence and topic drift",
     ["citation graphs", "topic drift", "scholarly influence", "influence"],
     [["topic", "drift"], ["citation"], ["graphs"], ["scholarly", "influence"], ["influences"], ["citation", "graphs"]]),
    ("m09", "wavelet transforms compress seismic signals efficiently",
     ["wavelet transforms", "seismic signals"],
     [["signals"], ["wavelet"], ["seismic", "signal"]]),
    ("m10", "topic models summarize news archives",
     ["topic models", "news archives"],
     None),
]


def flat_sentence(text):
    words = text.split()
    return sentence(" ".join(
        f"{w}/X/{0 if i == 0 else 1}/{'root' if i == 0 else 'dep'}" for i, w in enumerate(words)))


def main():
    write_jsonl(ROOT / "synthetic" / "corpus.jsonl", [
        {"id": i, "sentences": [template(s) for s in sents], "keyphrases": kps} for i, sents, kps in SYNTHETIC
    ])
    write_jsonl(ROOT / "abstracts" / "raw.jsonl", [
        {k: a[k] for k in ("id", "title", "abstract", "keyphrases")} for a in ABSTRACTS
    ])
    annotated = [
        {"id": a["id"], "sentences": [sentence(p) for p in a["parses"]], "keyphrases": a["keyphrases"]}
        for a in ABSTRACTS
    ]
    write_jsonl(ROOT / "abstracts" / "annotated.jsonl", annotated)
    counts = {a["id"]: {"sentences": len(a["sentences"]),
                        "tokens": sum(len(s["tokens"]) for s in a["sentences"])} for a in annotated}
    (ROOT / "abstracts" / "counts.json").write_text(json.dumps(counts, indent=2, sort_keys=True) + "\n")

    write_jsonl(ROOT / "metrics" / "gold.jsonl", [
        {"id": i, "sentences": [flat_sentence(t)], "keyphrases": k} for i, t, k, _ in METRIC_DOCS
    ])
    write_jsonl(ROOT / "metrics" / "predictions.jsonl", [
        {"id": i, "phrases": p, "scores": [-0.1 * (n + 1) for n in range(len(p))]}
        for i, _, _, p in METRIC_DOCS if p is not None
    ])

    words = set()
    for _, sents, kps in SYNTHETIC:
        words.update(" ".join(sents + kps).split())
    for a in ABSTRACTS:
        for p in a["parses"]:
            words.update(t.rsplit("/", 3)[0].lower() for t in p.split())
        words.update(" ".join(a["keyphrases"]).lower().split())
    for _, t, k, p in METRIC_DOCS:
        words.update(t.split())
        words.update(" ".join(k).split())
        for ph in p or []:
            words.update(ph)
    words = sorted(w for w in words if w.isascii() and w.isalpha())
    (ROOT / "stems").mkdir(exist_ok=True)
    (ROOT / "stems" / "golden.tsv").write_text("".join(f"{w}\t{stem(w)}\n" for w in words))


if __name__ == "__main__":
    main()
