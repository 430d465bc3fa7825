#!/usr/bin/env python3
"""Writes the bundled sample corpus under data/sample/.

Reviews are composed from a small English grammar, so each sentence's
dependency parse is known exactly and is written alongside the text as
CoNLL-U. Aspect and adjective choices follow power-law weights, and the
share of positive adjectives in a review follows its star rating.

Re-running with the default seed reproduces the committed files byte for byte.
"""

import argparse
import json
import random
from pathlib import Path

ASPECTS = [
    # (words, lemma words, plural)
    (["sound"], ["sound"], False),
    (["sound", "quality"], ["sound", "quality"], False),
    (["battery", "life"], ["battery", "life"], False),
    (["bass"], ["bass"], False),
    (["price"], ["price"], False),
    (["comfort"], ["comfort"], False),
    (["fit"], ["fit"], False),
    (["design"], ["design"], False),
    (["noise", "cancellation"], ["noise", "cancellation"], False),
    (["microphone"], ["microphone"], False),
    (["cable"], ["cable"], False),
    (["ear", "cups"], ["ear", "cup"], True),
    (["build", "quality"], ["build", "quality"], False),
    (["case"], ["case"], False),
    (["volume"], ["volume"], False),
    (["headband"], ["headband"], False),
    (["cost"], ["cost"], False),
    (["mic"], ["mic"], False),
    (["charger"], ["charger"], False),
    (["app"], ["app"], False),
    (["controls"], ["control"], True),
    (["packaging"], ["packaging"], False),
    (["warranty"], ["warranty"], False),
    (["treble"], ["treble"], False),
]

POSITIVE = [
    "great", "good", "amazing", "excellent", "comfortable", "clear", "solid", "nice",
    "perfect", "impressive", "decent", "crisp", "sturdy", "superb", "fantastic", "awesome",
]
NEGATIVE = [
    "bad", "poor", "terrible", "cheap", "flimsy", "weak", "awful", "disappointing",
    "uncomfortable", "muffled", "horrible", "mediocre",
]
NEUTRAL = ["black", "small", "new", "wireless", "plastic", "extra", "detachable", "soft"]
ADVERBS = ["really", "very", "quite", "pretty", "super"]
ITEM_SUBJECTS = [("It", "it", "is"), ("They", "they", "are"), ("This", "this", "is")]

FILLERS = [
    # (tokens as (form, lemma, upos, head, deprel))
    [("I", "I", "PRON", 2, "nsubj"), ("bought", "buy", "VERB", 0, "ROOT"), ("them", "they", "PRON", 2, "dobj"),
     ("for", "for", "ADP", 2, "prep"), ("my", "my", "PRON", 6, "poss"), ("commute", "commute", "NOUN", 4, "pobj"),
     (".", ".", "PUNCT", 2, "punct")],
    [("I", "I", "PRON", 2, "nsubj"), ("use", "use", "VERB", 0, "ROOT"), ("them", "they", "PRON", 2, "dobj"),
     ("every", "every", "DET", 5, "det"), ("day", "day", "NOUN", 2, "npadvmod"), (".", ".", "PUNCT", 2, "punct")],
    [("Shipping", "shipping", "NOUN", 2, "nsubj"), ("was", "be", "AUX", 0, "ROOT"), ("fast", "fast", "ADJ", 2, "acomp"),
     (".", ".", "PUNCT", 2, "punct")],
    [("My", "my", "PRON", 2, "poss"), ("son", "son", "NOUN", 3, "nsubj"), ("loves", "love", "VERB", 0, "ROOT"),
     ("them", "they", "PRON", 3, "dobj"), (".", ".", "PUNCT", 3, "punct")],
    [("I", "I", "PRON", 3, "nsubj"), ("would", "would", "AUX", 3, "aux"), ("recommend", "recommend", "VERB", 0, "ROOT"),
     ("them", "they", "PRON", 3, "dobj"), (".", ".", "PUNCT", 3, "punct")],
    [("I", "I", "PRON", 2, "nsubj"), ("returned", "return", "VERB", 0, "ROOT"), ("the", "the", "DET", 4, "det"),
     ("first", "first", "ADJ", 4, "amod"), ("pair", "pair", "NOUN", 2, "dobj"), (".", ".", "PUNCT", 2, "punct")],
]

POSITIVE_BY_RATING = {1: 0.08, 2: 0.25, 3: 0.5, 4: 0.8, 5: 0.94}


def zipf_choice(rng, items, s=1.1):
    weights = [1.0 / (i + 1) ** s for i in range(len(items))]
    return rng.choices(items, weights=weights, k=1)[0]


class Sentence:
    def __init__(self):
        self.tokens = []  # (form, lemma, upos, head, deprel)

    def add(self, form, lemma, upos, head, deprel):
        self.tokens.append([form, lemma, upos, head, deprel])
        return len(self.tokens)

    def set_head(self, index, head):
        self.tokens[index - 1][3] = head

    def text(self):
        out = ""
        for i, (form, *_rest) in enumerate(self.tokens):
            if i > 0 and form not in {".", ",", "!"}:
                out += " "
            out += form
        return out


def add_aspect(s, aspect, head, deprel, determiner=True, modifier=None):
    """Appends `[the] [modifier] w1 .. wn`; the last word heads the phrase."""
    words, lemmas, _plural = aspect
    n = len(words)
    first = len(s.tokens) + 1
    offset = 1 if determiner else 0
    mod_offset = 1 if modifier else 0
    last = first + offset + mod_offset + n - 1
    if determiner:
        s.add("the", "the", "DET", last, "det")
    if modifier:
        s.add(modifier, modifier, "ADJ", last, "amod")
    for i, (w, l) in enumerate(zip(words, lemmas)):
        if i < n - 1:
            s.add(w, l, "NOUN", last, "compound")
        else:
            s.add(w, l, "NOUN", head, deprel)
    return last


def copula(aspect):
    return "are" if aspect[2] else "is"


def pick_adj(rng, positive):
    return zipf_choice(rng, POSITIVE if positive else NEGATIVE, s=0.9)


def maybe_adverb(rng, s, adj_index):
    if rng.random() < 0.25:
        s.add(rng.choice(ADVERBS), None, "ADV", adj_index, "advmod")
        return True
    return False


def s_acomp(rng, positive):
    """The <aspect> is [adv] <adj>."""
    s = Sentence()
    asp = zipf_choice(rng, ASPECTS)
    n = len(asp[0])
    verb = 1 + n + 1
    add_aspect(s, asp, verb, "nsubj")
    s.add(copula(asp), "be", "AUX", 0, "ROOT")
    adv = rng.random() < 0.25
    adj_at = verb + (2 if adv else 1)
    if adv:
        w = rng.choice(ADVERBS)
        s.add(w, w, "ADV", adj_at, "advmod")
    a = pick_adj(rng, positive)
    s.add(a, a, "ADJ", verb, "acomp")
    s.add(".", ".", "PUNCT", verb, "punct")
    return s


def s_copula_headed(rng, positive):
    """The <aspect> was <adj>.  (adjective heads the clause)"""
    s = Sentence()
    asp = zipf_choice(rng, ASPECTS)
    n = len(asp[0])
    adj_at = 1 + n + 2
    add_aspect(s, asp, adj_at, "nsubj")
    s.add("were" if asp[2] else "was", "be", "AUX", adj_at, "cop")
    a = pick_adj(rng, positive)
    s.add(a, a, "ADJ", 0, "ROOT")
    s.add(".", ".", "PUNCT", adj_at, "punct")
    return s


def s_amod(rng, positive):
    """It has a <adj> <aspect>."""
    s = Sentence()
    asp = zipf_choice(rng, ASPECTS)
    s.add("It", "it", "PRON", 2, "nsubj")
    s.add("has", "have", "VERB", 0, "ROOT")
    det = "" if asp[2] else "a"
    if det:
        n = len(asp[0])
        s.add("a", "a", "DET", 3 + 1 + n, "det")
    a = pick_adj(rng, positive)
    add_aspect(s, asp, 2, "dobj", determiner=False, modifier=a)
    s.add(".", ".", "PUNCT", 2, "punct")
    return s


def s_item(rng, positive):
    """It is [adv] <adj>.  ->  ItemTok"""
    s = Sentence()
    form, lemma, verb = rng.choice(ITEM_SUBJECTS)
    s.add(form, lemma, "PRON", 2, "nsubj")
    s.add(verb, "be", "AUX", 0, "ROOT")
    adv = rng.random() < 0.3
    if adv:
        w = rng.choice(ADVERBS)
        s.add(w, w, "ADV", 4, "advmod")
    a = pick_adj(rng, positive)
    s.add(a, a, "ADJ", 2, "acomp")
    s.add(".", ".", "PUNCT", 2, "punct")
    return s


def s_two_clauses(rng, positive):
    """The <a1> is <adj1> and the <a2> is <adj2>."""
    s = Sentence()
    a1 = zipf_choice(rng, ASPECTS)
    a2 = zipf_choice(rng, ASPECTS)
    while a2 == a1:
        a2 = zipf_choice(rng, ASPECTS)
    v1 = 1 + len(a1[0]) + 1
    add_aspect(s, a1, v1, "nsubj")
    s.add(copula(a1), "be", "AUX", 0, "ROOT")
    adj1 = pick_adj(rng, positive)
    s.add(adj1, adj1, "ADJ", v1, "acomp")
    s.add("and", "and", "CCONJ", v1, "cc")
    v2 = len(s.tokens) + 1 + len(a2[0]) + 1
    add_aspect(s, a2, v2, "nsubj")
    s.add(copula(a2), "be", "AUX", v1, "conj")
    adj2 = pick_adj(rng, positive)
    s.add(adj2, adj2, "ADJ", v2, "acomp")
    s.add(".", ".", "PUNCT", v1, "punct")
    return s


def s_two_adjectives(rng, positive):
    """The <aspect> is <adj1>, <adj2> and <adj3>; two or three adjectives."""
    s = Sentence()
    asp = zipf_choice(rng, ASPECTS)
    verb = 1 + len(asp[0]) + 1
    add_aspect(s, asp, verb, "nsubj")
    s.add(copula(asp), "be", "AUX", 0, "ROOT")
    n = rng.choice([2, 3, 3])
    adjs = []
    while len(adjs) < n:
        a = pick_adj(rng, positive)
        if a not in adjs:
            adjs.append(a)
    first = s.add(adjs[0], adjs[0], "ADJ", verb, "acomp")
    for k, a in enumerate(adjs[1:], start=1):
        last = k == n - 1
        here = len(s.tokens) + 2
        if last:
            s.add("and", "and", "CCONJ", here, "cc")
        else:
            s.add(",", ",", "PUNCT", here, "punct")
        s.add(a, a, "ADJ", first, "conj")
    s.add(".", ".", "PUNCT", verb, "punct")
    return s


def s_fragment(rng, positive):
    """<Adj> <a1> and <a2> overall."""
    s = Sentence()
    a1 = zipf_choice(rng, [a for a in ASPECTS if len(a[0]) == 1])
    a2 = zipf_choice(rng, [a for a in ASPECTS if len(a[0]) == 1])
    while a2 == a1:
        a2 = zipf_choice(rng, [a for a in ASPECTS if len(a[0]) == 1])
    adj = pick_adj(rng, positive)
    s.add(adj.capitalize(), adj, "ADJ", 2, "amod")
    s.add(a1[0][0], a1[1][0], "NOUN", 0, "ROOT")
    s.add("and", "and", "CCONJ", 2, "cc")
    s.add(a2[0][0], a2[1][0], "NOUN", 2, "conj")
    s.add("overall", "overall", "ADV", 2, "advmod")
    s.add(".", ".", "PUNCT", 2, "punct")
    return s


def s_neutral(rng, _positive):
    """It comes with a <neutral adj> <aspect>."""
    s = Sentence()
    asp = zipf_choice(rng, [a for a in ASPECTS if not a[2]])
    s.add("It", "it", "PRON", 2, "nsubj")
    s.add("comes", "come", "VERB", 0, "ROOT")
    s.add("with", "with", "ADP", 2, "prep")
    n = len(asp[0])
    s.add("a", "a", "DET", 4 + 1 + n, "det")
    add_aspect(s, asp, 3, "pobj", determiner=False, modifier=rng.choice(NEUTRAL))
    s.add(".", ".", "PUNCT", 2, "punct")
    return s


def s_filler(rng, _positive):
    s = Sentence()
    for form, lemma, upos, head, deprel in rng.choice(FILLERS):
        s.add(form, lemma, upos, head, deprel)
    return s


BUILDERS = [
    (s_acomp, 30),
    (s_copula_headed, 8),
    (s_amod, 16),
    (s_item, 14),
    (s_two_clauses, 20),
    (s_two_adjectives, 40),
    (s_fragment, 5),
    (s_neutral, 5),
    (s_filler, 9),
]


def fix_lemmas(s):
    for t in s.tokens:
        if t[1] is None:
            t[1] = t[0].lower()
    first = s.tokens[0]
    first[0] = first[0][0].upper() + first[0][1:]


def make_review(rng, rating):
    n = rng.randint(2, 4)
    sentences = []
    for _ in range(n):
        builder = rng.choices([b for b, _ in BUILDERS], weights=[w for _, w in BUILDERS], k=1)[0]
        positive = rng.random() < POSITIVE_BY_RATING[rating]
        s = builder(rng, positive)
        fix_lemmas(s)
        sentences.append(s)
    return sentences


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data" / "sample"))
    ap.add_argument("--seed", type=int, default=20)
    ap.add_argument("--users", type=int, default=60)
    ap.add_argument("--items", type=int, default=40)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = Path(args.out)
    (out / "lexicon").mkdir(parents=True, exist_ok=True)

    users = [f"A{1000 + i}" for i in range(args.users)]
    items = [f"B0{70000 + 37 * i}" for i in range(args.items)]
    user_bias = {u: rng.gauss(0, 0.6) for u in users}
    item_quality = {t: rng.gauss(0, 0.9) for t in items}
    edges = []
    for u in users:
        for t in rng.sample(items, rng.randint(5, 9)):
            edges.append((u, t))
    rng.shuffle(edges)

    records, conllu = [], []
    for n, (u, t) in enumerate(edges):
        score = 3.6 + user_bias[u] + item_quality[t] + rng.gauss(0, 0.5)
        rating = int(min(5, max(1, round(score))))
        sentences = make_review(rng, rating)
        rid = f"R{n + 1:04d}"
        records.append({
            "review_id": rid,
            "user_id": u,
            "item_id": t,
            "rating": float(rating),
            "text": " ".join(s.text() for s in sentences),
        })
        conllu.append(f"# review_id = {rid}")
        for s in sentences:
            conllu.append(f"# text = {s.text()}")
            for i, (form, lemma, upos, head, deprel) in enumerate(s.tokens, start=1):
                conllu.append(f"{i}\t{form}\t{lemma}\t{upos}\t_\t_\t{head}\t{deprel}\t_\t_")
            conllu.append("")

    with open(out / "reviews.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    (out / "parses.conllu").write_text("\n".join(conllu) + "\n")
    (out / "seeds.txt").write_text(
        "[positive]\ngood\ngreat\nexcellent\namazing\n\n[negative]\nbad\npoor\nterrible\nawful\n"
    )
    (out / "lexicon" / "positive-words.txt").write_text(
        ";; small opinion lexicon, positive part\n" + "\n".join(sorted(POSITIVE[:10] + ["fast"])) + "\n"
    )
    (out / "lexicon" / "negative-words.txt").write_text(
        ";; small opinion lexicon, negative part\n" + "\n".join(sorted(NEGATIVE[:8])) + "\n"
    )
    (out / "nn_terms.txt").write_text("crisp\nmuffled\nsturdy\nflimsy\nawesome\nmediocre\n")
    (out / "synsets.tsv").write_text("# one synonym group per line\nprice\tcost\nmicrophone\tmic\n")


if __name__ == "__main__":
    main()
