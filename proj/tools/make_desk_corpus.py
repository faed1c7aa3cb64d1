#!/usr/bin/env python3
"""Generates the bundled synthetic word-level corpus.

The text comes from a small probabilistic grammar with number agreement,
relative clauses and per-document topics, so a recurrent model has both
short- and long-range structure to learn. Output is deterministic for a
given seed.

    python3 tools/make_desk_corpus.py --out data/desk --bytes 1000000
"""

import argparse
import os
import random

SYLLABLES = [
    "ba", "ko", "ri", "mu", "te", "sa", "lo", "vi", "ne", "da", "fu", "ge", "pi", "ra", "zo", "ha",
    "mi", "tu", "ke", "no", "li", "po", "su", "we", "ya", "jo", "ce", "bi", "dor", "gan", "mel", "tis",
]

DETERMINERS_SG = ["the", "a", "this", "that", "every", "one"]
DETERMINERS_PL = ["the", "these", "those", "some", "many", "two", "few"]
PREPOSITIONS = ["in", "on", "near", "under", "behind", "with", "from", "over", "beside", "across"]
CONJUNCTIONS = ["and", "but", "because", "while", "so"]
ADVERBS_BASE = ["quickly", "slowly", "often", "rarely", "quietly", "gladly", "never", "always", "soon", "again"]


def make_words(rng, count, used, min_syl=2, max_syl=3):
    words = []
    while len(words) < count:
        w = "".join(rng.choice(SYLLABLES) for _ in range(rng.randint(min_syl, max_syl)))
        if w not in used:
            used.add(w)
            words.append(w)
    return words


class Lexicon:
    def __init__(self, rng, topics):
        used = set(DETERMINERS_SG + DETERMINERS_PL + PREPOSITIONS + CONJUNCTIONS + ADVERBS_BASE)
        used |= {"that", "who", "which", "."}
        self.topics = []
        for _ in range(topics):
            nouns = make_words(rng, 40, used)
            verbs = make_words(rng, 22, used)
            adjs = make_words(rng, 14, used)
            self.topics.append({"nouns": nouns, "verbs": verbs, "adjs": adjs})
        self.common_nouns = make_words(rng, 30, used)
        self.common_verbs = make_words(rng, 16, used)
        self.common_adjs = make_words(rng, 16, used)
        self.names = [w.capitalize() for w in make_words(rng, 25, used, 2, 2)]
        self.adverbs = ADVERBS_BASE + make_words(rng, 6, used)


def zipf_choice(rng, items, s=1.1):
    weights = [1.0 / (i + 1) ** s for i in range(len(items))]
    return rng.choices(items, weights=weights, k=1)[0]


class Grammar:
    def __init__(self, rng, lex):
        self.rng = rng
        self.lex = lex

    def noun(self, topic, plural):
        pool = topic["nouns"] if self.rng.random() < 0.75 else self.lex.common_nouns
        n = zipf_choice(self.rng, pool)
        return n + "s" if plural else n

    def verb(self, topic, plural, transitive):
        pool = topic["verbs"] if self.rng.random() < 0.7 else self.lex.common_verbs
        v = zipf_choice(self.rng, pool)
        # Singular subjects take the -es form; plural subjects the bare stem.
        return v if plural else v + "es"

    def adj(self, topic):
        pool = topic["adjs"] if self.rng.random() < 0.6 else self.lex.common_adjs
        return zipf_choice(self.rng, pool)

    def noun_phrase(self, topic, plural, depth):
        r = self.rng
        if not plural and r.random() < 0.12:
            return [r.choice(self.lex.names)]
        words = [r.choice(DETERMINERS_PL if plural else DETERMINERS_SG)]
        if r.random() < 0.35:
            words.append(self.adj(topic))
        words.append(self.noun(topic, plural))
        if depth < 2 and r.random() < 0.22:
            # Relative clause: the verb agrees with the head noun, which can be several tokens back.
            words.append(r.choice(["that", "who", "which"]))
            words += self.verb_phrase(topic, plural, depth + 1)
        elif depth < 2 and r.random() < 0.18:
            words.append(r.choice(PREPOSITIONS))
            words += self.noun_phrase(topic, r.random() < 0.4, depth + 1)
        return words

    def verb_phrase(self, topic, plural, depth):
        r = self.rng
        words = []
        if r.random() < 0.2:
            words.append(zipf_choice(r, self.lex.adverbs))
        transitive = r.random() < 0.65
        words.append(self.verb(topic, plural, transitive))
        if transitive:
            words += self.noun_phrase(topic, r.random() < 0.4, depth + 1)
        if r.random() < 0.2:
            words.append(r.choice(PREPOSITIONS))
            words += self.noun_phrase(topic, r.random() < 0.4, depth + 2)
        return words

    def sentence(self, topic):
        r = self.rng
        plural = r.random() < 0.4
        words = self.noun_phrase(topic, plural, 0) + self.verb_phrase(topic, plural, 0)
        if r.random() < 0.25:
            plural2 = r.random() < 0.4
            words.append(r.choice(CONJUNCTIONS))
            words += self.noun_phrase(topic, plural2, 1) + self.verb_phrase(topic, plural2, 1)
        words.append(".")
        return " ".join(words)


def generate(rng, grammar, lex, target_bytes):
    lines = []
    size = 0
    while size < target_bytes:
        topic = lex.topics[rng.randrange(len(lex.topics))]
        for _ in range(rng.randint(4, 12)):
            line = grammar.sentence(topic)
            lines.append(line)
            size += len(line) + 1
    return lines


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--bytes", type=int, default=1_000_000, help="approximate total size of all splits")
    ap.add_argument("--topics", type=int, default=12)
    ap.add_argument("--seed", type=int, default=20171031)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    lex = Lexicon(rng, args.topics)
    grammar = Grammar(rng, lex)
    os.makedirs(args.out, exist_ok=True)
    fractions = {"train": 0.9, "valid": 0.05, "test": 0.05}
    for split, frac in fractions.items():
        lines = generate(rng, grammar, lex, int(args.bytes * frac))
        with open(os.path.join(args.out, split + ".txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
